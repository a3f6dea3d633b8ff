#include "idlab/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "idlab/field_io.hpp"

namespace idlab {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

ScalarField background_for(const ExperimentConfig& cfg, const GridSpec& spec) {
    return make_background(spec, cfg.background, cfg.background_amplitude);
}

std::vector<DirichletBC> bcs_for(const ExperimentConfig& cfg, const GridSpec& spec) {
    if (cfg.boundary_set == "x1")
        return {DirichletBC::from_function(spec, [](double x, double) { return x; })};
    if (cfg.boundary_set == "x1x2")
        return {DirichletBC::from_function(spec, [](double x, double) { return x; }),
                DirichletBC::from_function(spec, [](double, double y) { return y; })};
    return {DirichletBC::from_function(spec, [](double x, double) { return std::exp(x); }),
            DirichletBC::from_function(spec, [](double, double y) { return std::exp(y); }),
            DirichletBC::from_function(spec, [](double x, double) { return std::exp(-x); }),
            DirichletBC::from_function(spec, [](double, double y) { return std::exp(y); })};
}

int cmd_forward(const ExperimentConfig& cfg) {
    const GridSpec spec = GridSpec::make(cfg.grid, cfg.grid, cfg.margin_prime,
                                         cfg.margin_double_prime);
    const ScalarField sigma0 = background_for(cfg, spec);
    const auto bcs = bcs_for(cfg, spec);
    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path dir(cfg.out_dir);

    for (size_t m = 0; m < bcs.size(); ++m) {
        ScalarField u;
        if (cfg.mode == "qpat") {
            const ScalarField gamma0(spec);
            u = solve_diffusion(DiffusionProblem{sigma0, gamma0, bcs[m]}, cfg.solver);
        } else {
            u = solve_conductivity(ConductivityProblem{sigma0, bcs[m]}, cfg.solver);
        }
        const std::string tag = "u" + std::to_string(m + 1);
        write_hsf1((dir / (tag + ".hsf1")).string(), u);
        write_csv((dir / (tag + ".csv")).string(), u);
        write_pgm((dir / (tag + ".pgm")).string(), u);
        const VectorField g = gradient(u);
        write_hsf1((dir / (tag + "_dx.hsf1")).string(), g.comp_x);
        write_hsf1((dir / (tag + "_dy.hsf1")).string(), g.comp_y);
        ScalarField F = cfg.mode == "qpat" ? eval_qpat(ScalarField(spec), u)
                                           : eval_power(sigma0, u, cfg.p);
        write_hsf1((dir / ("F" + std::to_string(m + 1) + ".hsf1")).string(), F);
        write_pgm((dir / ("F" + std::to_string(m + 1) + ".pgm")).string(), F);
    }
    std::cout << "forward: wrote " << bcs.size() << " solution set(s) to " << cfg.out_dir
              << "\n";
    return 0;
}

int cmd_symbols(const ExperimentConfig& cfg) {
    const GridSpec spec = GridSpec::make(cfg.grid, cfg.grid, cfg.margin_prime,
                                         cfg.margin_double_prime);
    const CutoffPair cut = CutoffPair::standard(spec);
    const ScalarField sigma0 = background_for(cfg, spec);
    auto bcs = bcs_for(cfg, spec);
    if (cfg.family == "single") bcs.resize(1);

    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path dir(cfg.out_dir);

    EllipticityReport scan;
    if (cfg.mode == "qpat") {
        const ScalarField gamma0(spec);
        std::vector<ScalarField> us;
        for (const auto& bc : bcs)
            us.push_back(solve_diffusion(DiffusionProblem{sigma0, gamma0, bc}, cfg.solver));
        std::vector<std::array<ScalarField, 2>> pairs{{us[0], us[1]}, {us[2], us[3]}};
        const SymbolField stacked = symbol_qpat(pairs, cut.chi1);
        write_hss1((dir / "symbol.hss1").string(), stacked);
        scan = ellipticity_scan(stacked, Region::OmegaPrime);
    } else {
        std::vector<ScalarField> us;
        for (const auto& bc : bcs)
            us.push_back(solve_conductivity(ConductivityProblem{sigma0, bc}, cfg.solver));
        std::vector<SymbolField> symbols;
        symbols.push_back(symbol_power(sigma0, us[0], cfg.p, cut.chi1));
        if (cfg.family == "triple") {
            symbols.push_back(symbol_power(sigma0, us[1], cfg.p, cut.chi1));
            if (cfg.p != 1.0)
                symbols.push_back(symbol_cross(sigma0, us[0], us[1], cfg.p, cut.chi1));
        }
        write_hss1((dir / "symbol.hss1").string(), symbols[0]);
        scan = ellipticity_scan(std::span<const SymbolField>(symbols.data(), symbols.size()),
                                Region::OmegaPrime);
    }

    std::ofstream os(dir / "report.json");
    os << report_to_json(scan) << "\n";
    write_direction_csv((dir / "per_direction_minima.csv").string(), scan);
    std::cout << "symbols: verdict " << (scan.elliptic() ? "elliptic" : "degenerate")
              << ", delta " << scan.delta << " (threshold " << scan.threshold << ")\n";
    return 0;
}

int cmd_oracle(const ExperimentConfig& cfg, const std::string& functional) {
    const GridSpec spec = GridSpec::make(cfg.grid, cfg.grid, cfg.margin_prime,
                                         cfg.margin_double_prime);
    const ScalarField sigma0 = background_for(cfg, spec);
    const ScalarField rho = smooth_phantom(spec, 0.3);
    const auto bcs = bcs_for(cfg, spec);

    DataVector exact, approx;
    if (functional == "power") {
        const ScalarField u0 =
            solve_conductivity(ConductivityProblem{sigma0, bcs[0]}, cfg.solver);
        exact.fields = {df_power(sigma0, u0, cfg.p, rho, cfg.solver)};
        PowerFamilyModel model{{bcs[0]}, cfg.p, cfg.solver, std::nullopt};
        approx = fd_oracle([&](const ScalarField& s) { return model.evaluate(s); }, sigma0,
                           rho, cfg.eps);
    } else if (functional == "cross") {
        // the check needs gradients with a nonvanishing dot product
        const auto f2 =
            DirichletBC::from_function(spec, [](double x, double y) { return x + y; });
        const ScalarField u1 = solve_conductivity(ConductivityProblem{sigma0, bcs[0]}, cfg.solver);
        const ScalarField u2 = solve_conductivity(ConductivityProblem{sigma0, f2}, cfg.solver);
        exact.fields = {df_cross(sigma0, u1, u2, cfg.p, rho, cfg.solver)};
        PowerFamilyModel model{{bcs[0], f2}, cfg.p, cfg.solver, cross_cutoff(u1, u2, cfg.p)};
        approx = fd_oracle([&](const ScalarField& s) { return model.evaluate(s); }, sigma0,
                           rho, cfg.eps);
        approx.fields.erase(approx.fields.begin(), approx.fields.begin() + 2);
    } else if (functional == "general") {
        GeneralFunctional G{
            [](double y, double z, double w) { return std::exp(y) * (z * z + w * w); },
            [](double y, double z, double w) { return std::exp(y) * (z * z + w * w); },
            [](double y, double z, double) { return 2.0 * std::exp(y) * z; },
            [](double y, double, double w) { return 2.0 * std::exp(y) * w; }};
        const ScalarField u0 =
            solve_conductivity(ConductivityProblem{sigma0, bcs[0]}, cfg.solver);
        exact.fields = {df_general(G, sigma0, u0, rho, cfg.solver)};
        GeneralModel model{G, bcs[0], cfg.solver};
        approx = fd_oracle([&](const ScalarField& s) { return model.evaluate(s); }, sigma0,
                           rho, cfg.eps);
    } else if (functional == "qpat") {
        const ScalarField gamma0(spec);
        const ScalarField nu = smooth_phantom(spec, 0.3, 0.6, 0.4);
        auto qb = bcs_for(cfg, spec);
        std::vector<ScalarField> us;
        for (const auto& bc : qb)
            us.push_back(solve_diffusion(DiffusionProblem{sigma0, gamma0, bc}, cfg.solver));
        exact = df_qpat(sigma0, gamma0, us, rho, nu, cfg.solver);
        QpatModel model{qb, cfg.solver};
        approx = fd_oracle(
            [&](const ScalarField& s, const ScalarField& g) { return model.evaluate(s, g); },
            sigma0, gamma0, rho, nu, cfg.eps);
    } else {
        throw std::invalid_argument("oracle: unknown functional '" + functional + "'");
    }

    const double mismatch = data_rel_l2_error(approx, exact);
    std::cout << "oracle " << functional << ": eps " << cfg.eps << ", relative mismatch "
              << mismatch << "\n";
    return 0;
}

int cmd_spectrum(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.spectrum = true;
    const ExperimentResult res = run_experiment(c);
    std::cout << "spectrum: near-kernel count "
              << (res.spectrum ? res.spectrum->near_kernel_count : -1) << ", report at "
              << res.report_path << "\n";
    return 0;
}

int cmd_recon(const ExperimentConfig& cfg) {
    const ExperimentResult res = run_experiment(cfg);
    std::cout << "recon: verdict " << (res.scan.elliptic() ? "elliptic" : "degenerate");
    if (res.parametrix_built)
        std::cout << ", parametrix rel error " << res.parametrix.rel_error_rho;
    std::cout << ", krylov " << res.krylov.iterations << " iterations";
    if (res.krylov.iterations_unpreconditioned > 0)
        std::cout << " (" << res.krylov.iterations_unpreconditioned << " unpreconditioned)";
    std::cout << ", krylov rel error " << res.krylov.rel_error_rho << "\n"
              << "report: " << res.report_path << "\n";
    return 0;
}

} // namespace

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (!key.empty()) kv[key] = val;
    }
    return kv;
}

void apply_config(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv) {
    auto flag = [](const std::string& v) { return v == "on" || v == "true" || v == "1"; };
    for (const auto& [key, val] : kv) {
        if (key == "grid") cfg.grid = std::stoi(val);
        else if (key == "margin_prime") cfg.margin_prime = std::stod(val);
        else if (key == "margin_double_prime") cfg.margin_double_prime = std::stod(val);
        else if (key == "background") cfg.background = val;
        else if (key == "background_amplitude") cfg.background_amplitude = std::stod(val);
        else if (key == "boundary_set") cfg.boundary_set = val;
        else if (key == "mode") cfg.mode = val;
        else if (key == "p") cfg.p = std::stod(val);
        else if (key == "family") cfg.family = val;
        else if (key == "phantom_amplitude") cfg.phantom_amplitude = std::stod(val);
        else if (key == "synthesis") cfg.nonlinear_synthesis = (val == "nonlinear");
        else if (key == "eps") cfg.eps = std::stod(val);
        else if (key == "noise") cfg.noise = std::stod(val);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "tol") cfg.solver.tol = std::stod(val);
        else if (key == "max_iters") cfg.solver.max_iters = std::stoi(val);
        else if (key == "krylov_tol") cfg.krylov.tol = std::stod(val);
        else if (key == "krylov_max_iters") cfg.krylov.max_iters = std::stoi(val);
        else if (key == "precondition") cfg.precondition = flag(val);
        else if (key == "spectrum") cfg.spectrum = flag(val);
        else if (key == "spectrum_k") cfg.spectrum_k = std::stoi(val);
        else if (key == "out_dir") cfg.out_dir = val;
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
}

int run_cli(std::vector<std::string> args) {
    CLI::App app{"internal-data stabilization laboratory"};
    app.require_subcommand(1);
    app.footer(
        "config file keys (flat `key = value`):\n"
        "  grid, margin_prime, margin_double_prime, background,\n"
        "  background_amplitude, boundary_set, mode, p, family,\n"
        "  phantom_amplitude, synthesis, eps, noise, seed, tol, max_iters,\n"
        "  krylov_tol, krylov_max_iters, precondition, spectrum, spectrum_k,\n"
        "  out_dir");

    // Flags land in the overrides map so precedence is clear:
    // defaults < bundled config < config file < explicit flags.
    std::map<std::string, std::string> overrides;
    std::string config_path, functional = "power", bundled;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "flat key = value configuration file");
        sub->add_option("--bundled", bundled, "named bundled configuration");
        auto capture = [&overrides](const std::string& key) {
            return [&overrides, key](const std::vector<std::string>& v) {
                overrides[key] = v.at(0);
                return true;
            };
        };
        sub->add_option("--out", capture("out_dir"), "output directory");
        sub->add_option("--seed", capture("seed"), "RNG seed for stochastic probes");
        sub->add_option("--grid", capture("grid"), "nodes per side");
        sub->add_option("--tol", capture("tol"), "PDE solver relative residual");
        sub->add_option("--max-iters", capture("max_iters"), "PDE solver iteration cap");
        sub->add_option("--p", capture("p"), "power-density exponent");
        sub->add_option("--family", capture("family"), "single | triple")
            ->check(CLI::IsMember({"single", "triple"}));
        sub->add_option("--background", capture("background"), "constant | bump")
            ->check(CLI::IsMember({"constant", "bump"}));
        sub->add_option("--boundary", capture("boundary_set"), "x1 | x1x2 | exp4")
            ->check(CLI::IsMember({"x1", "x1x2", "exp4"}));
        sub->add_option("--eps", capture("eps"), "linearization / oracle step");
        sub->add_option("--noise", capture("noise"), "relative data noise");
        sub->add_option("--precondition", capture("precondition"), "on | off")
            ->check(CLI::IsMember({"on", "off"}));
        sub->add_option("--synthesis", capture("synthesis"), "linear | nonlinear")
            ->check(CLI::IsMember({"linear", "nonlinear"}));
        sub->add_option("--krylov-tol", capture("krylov_tol"), "normal-equation tolerance");
        sub->add_option("--spectrum-k", capture("spectrum_k"), "singular values per end");
    };

    CLI::App* forward = app.add_subcommand("forward", "solve and dump u, grad u, F");
    CLI::App* symbols = app.add_subcommand("symbols", "scan and report ellipticity");
    CLI::App* recon = app.add_subcommand("recon", "full reconstruction pipeline");
    CLI::App* qpat = app.add_subcommand("qpat", "two-coefficient DN pipeline");
    CLI::App* spectrum = app.add_subcommand("spectrum", "singular-value probing");
    CLI::App* oracle = app.add_subcommand("oracle", "finite-difference derivative checks");
    for (CLI::App* sub : {forward, symbols, recon, qpat, spectrum, oracle}) add_common(sub);
    oracle->add_option("--functional", functional, "power | cross | general | qpat")
        ->check(CLI::IsMember({"power", "cross", "general", "qpat"}));

    try {
        std::vector<const char*> argv{"idlab"};
        for (const auto& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        ExperimentConfig cfg = bundled.empty() ? ExperimentConfig{} : bundled_config(bundled);
        if (!config_path.empty()) apply_config(cfg, parse_config_file(config_path));
        apply_config(cfg, overrides);

        if (app.got_subcommand(qpat)) {
            cfg.mode = "qpat";
            cfg.boundary_set = "exp4";
        }
        if (app.got_subcommand(forward)) return cmd_forward(cfg);
        if (app.got_subcommand(symbols)) return cmd_symbols(cfg);
        if (app.got_subcommand(recon) || app.got_subcommand(qpat)) return cmd_recon(cfg);
        if (app.got_subcommand(spectrum)) return cmd_spectrum(cfg);
        if (app.got_subcommand(oracle)) return cmd_oracle(cfg, functional);
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    }
}

} // namespace idlab
