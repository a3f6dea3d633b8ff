#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "idlab/parametrix.hpp"
#include "idlab/recon.hpp"

using namespace idlab;

namespace {

const SolverConfig kTight{1e-12, 0};

SymbolField constant_symbol(const GridSpec& spec, double value) {
    SymbolField s(spec, DirectionGrid::make(), 0);
    for (int node = 0; node < spec.node_count(); ++node)
        for (int d = 0; d < s.directions().n; ++d) s.at(node, d) = value;
    return s;
}

ScalarField random_field(const GridSpec& spec, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    ScalarField f(spec);
    for (size_t k = 0; k < f.size(); ++k) f[k] = uni(rng);
    return f;
}

struct BumpSetup {
    GridSpec spec;
    CutoffPair cut;
    ScalarField sigma0;
    ScalarField u0;
};

BumpSetup bump_setup(int n, double amp) {
    BumpSetup s{GridSpec::make(n, n), {}, {}, {}};
    s.cut = CutoffPair::standard(s.spec);
    s.sigma0 = make_background(s.spec, "bump", amp);
    const auto f = DirichletBC::from_function(s.spec, [](double x, double) { return x; });
    s.u0 = solve_conductivity({s.sigma0, f}, kTight);
    return s;
}

} // namespace

TEST_CASE("quantizing the constant symbol gives the identity on the core") {
    const GridSpec spec = GridSpec::make(32, 32);
    SUBCASE("unit symbol") {
        const QuantizedOperator I = quantize(constant_symbol(spec, 1.0));
        const ScalarField f = random_field(spec, 3);
        const ScalarField out = I.apply(f);
        for (int j = 0; j + 1 < spec.ny; ++j)
            for (int i = 0; i + 1 < spec.nx; ++i)
                CHECK(out.at(i, j) == doctest::Approx(f.at(i, j)).epsilon(1e-11));
        // the last row wraps around to the first (periodic core)
        CHECK(out.at(spec.nx - 1, 5) == doctest::Approx(out.at(0, 5)).epsilon(1e-11));
    }
    SUBCASE("scalar multiple") {
        const QuantizedOperator C = quantize(constant_symbol(spec, -2.5));
        const ScalarField f = random_field(spec, 5);
        const ScalarField out = C.apply(f);
        for (int j = 0; j + 1 < spec.ny; ++j)
            for (int i = 0; i + 1 < spec.nx; ++i)
                CHECK(out.at(i, j) == doctest::Approx(-2.5 * f.at(i, j)).epsilon(1e-11));
    }
}

TEST_CASE("quantized apply is linear to machine precision") {
    const auto s = bump_setup(32, 0.3);
    const QuantizedOperator A = quantize(symbol_power(s.sigma0, s.u0, 0.5, s.cut.chi1));
    const ScalarField f = random_field(s.spec, 11);
    const ScalarField g = random_field(s.spec, 13);
    ScalarField combo = 2.0 * f;
    combo += -3.0 * g;
    ScalarField expect = 2.0 * A.apply(f);
    expect += -3.0 * A.apply(g);
    ScalarField got = A.apply(combo);
    got -= expect;
    CHECK(l2_norm(got) / l2_norm(expect) < 1e-12);
}

TEST_CASE("quantized transpose matches the forward map on random pairs") {
    const auto s = bump_setup(32, 0.3);
    const QuantizedOperator A = quantize(symbol_power(s.sigma0, s.u0, 0.5, s.cut.chi1));
    const ScalarField f = random_field(s.spec, 17);
    const ScalarField g = random_field(s.spec, 19);
    const double lhs = dot_product(A.apply(f), g);
    const double rhs = dot_product(f, A.apply_transpose(g));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-11));
}

TEST_CASE("degree-0 homogeneity: the multiplier is frequency-independent") {
    const auto s = bump_setup(64, 0.3);
    const QuantizedOperator A = quantize(symbol_power(s.sigma0, s.u0, 0.5, s.cut.chi1));
    auto multiplier = [&](int k) {
        const Probe pr = windowed_wave(s.spec, 0, k);
        const ScalarField out = A.apply(pr.field);
        return dot_product(out, pr.field) / dot_product(pr.field, pr.field);
    };
    const double m1 = multiplier(10);
    const double m2 = multiplier(20);
    CHECK(std::abs(m1 - m2) <= 0.05 * std::abs(m1));
}

TEST_CASE("frozen-symbol approximation error decays like 1/|xi|") {
    const auto s = bump_setup(64, 0.3);
    const SymbolField A2 = symbol_power(s.sigma0, s.u0, 2.0, s.cut.chi1);
    const QuantizedOperator A2q = quantize(A2);
    std::vector<double> err;
    for (int k : {4, 8, 16}) {
        const Probe pr = windowed_wave(s.spec, k, 0);
        const ScalarField out = A2q.apply(pr.field);
        ScalarField pred(s.spec);
        for (int j = 0; j < s.spec.ny; ++j)
            for (int i = 0; i < s.spec.nx; ++i)
                pred.at(i, j) = A2.at(j * s.spec.nx + i, 0).real() * pr.field.at(i, j);
        ScalarField d = out;
        d -= pred;
        err.push_back(l2_norm_region(d, Region::OmegaPrime) /
                      l2_norm_region(pr.field, Region::OmegaPrime));
    }
    CHECK(err[1] <= 0.6 * err[0]);
    CHECK(err[2] <= 0.6 * err[1]);
    CHECK(err[2] <= 0.1);
}

TEST_CASE("build_q_scalar: reciprocal range, symbol-level exactness, refusal") {
    const GridSpec spec = GridSpec::make(32, 32);
    const CutoffPair cut = CutoffPair::standard(spec);
    const ScalarField zero(spec);
    const auto x1 = ScalarField::from_function(spec, [](double x, double) { return x; });

    SUBCASE("constant background, p = 0.5") {
        const SymbolField A0 = symbol_power(zero, x1, 0.5, cut.chi1);
        const SymbolField Q = build_q_scalar(A0, cut.chi2);
        for (int node = 0; node < spec.node_count(); ++node) {
            const double c2 = cut.chi2[node];
            for (int d = 0; d < Q.directions().n; ++d) {
                const auto q = Q.at(node, d);
                CHECK(q.imag() == 0.0);
                if (c2 > 0.0) {
                    CHECK(q.real() >= c2 / 1.0 - 1e-12);
                    CHECK(q.real() <= c2 / 0.5 + 1e-12);
                    // Q * A0 = chi2 exactly at symbol level
                    CHECK((q * A0.at(node, d)).real() == doctest::Approx(c2).epsilon(1e-14));
                } else {
                    CHECK(q == std::complex<double>{0.0, 0.0});
                }
            }
        }
    }
    SUBCASE("p = 2 single functional is refused with the scan attached") {
        const SymbolField A0 = symbol_power(zero, x1, 2.0, cut.chi1);
        try {
            build_q_scalar(A0, cut.chi2);
            FAIL("expected EllipticityError");
        } catch (const EllipticityError& e) {
            CHECK_FALSE(e.report.elliptic());
            CHECK(e.report.delta <= e.report.threshold);
        }
    }
}

TEST_CASE("build_combination on the orthogonal constant background, p = 2") {
    const GridSpec spec = GridSpec::make(32, 32);
    const CutoffPair cut = CutoffPair::standard(spec);
    const ScalarField zero(spec);
    const auto x1 = ScalarField::from_function(spec, [](double x, double) { return x; });
    const auto x2 = ScalarField::from_function(spec, [](double, double y) { return y; });
    const SymbolField A11 = symbol_power(zero, x1, 2.0, cut.chi1);
    const SymbolField A22 = symbol_power(zero, x2, 2.0, cut.chi1);
    const SymbolField A12 = symbol_cross(zero, x1, x2, 2.0, cut.chi1);

    auto [part, psi] = build_combination(A11, A22, &A12, 0.25, 2.0, nullptr);
    REQUIRE(part.weights.size() == 3);
    const int node = (spec.ny / 2) * spec.nx + spec.nx / 2;

    // at the joint zero direction (45 degrees) only A12 contributes and Psi = 1
    CHECK(psi.at(node, 8).real() == doctest::Approx(1.0).epsilon(1e-12));

    // Psi stays positive over the scan region
    double lo = 1e300;
    for (int j = 0; j < spec.ny; ++j)
        for (int i = 0; i < spec.nx; ++i) {
            if (!spec.node_in_region(i, j, Region::OmegaPrime)) continue;
            for (int d = 0; d < 64; ++d)
                lo = std::min(lo, psi.at(j * spec.nx + i, d).real());
        }
    CHECK(lo > 0.5);

    // partition weights vary smoothly along the direction circle
    double max_dd = 0.0;
    for (const auto& w : part.weights)
        for (int d = 0; d < 64; ++d) {
            const auto a = w.at(node, (d + 63) % 64), b = w.at(node, d), c = w.at(node, (d + 1) % 64);
            max_dd = std::max(max_dd, std::abs(a - 2.0 * b + c));
        }
    CHECK(max_dd < 1.0);
}

TEST_CASE("build_combination drops the cross weight for p = 1") {
    const GridSpec spec = GridSpec::make(32, 32);
    const CutoffPair cut = CutoffPair::standard(spec);
    const ScalarField zero(spec);
    const auto x1 = ScalarField::from_function(spec, [](double x, double) { return x; });
    const auto x2 = ScalarField::from_function(spec, [](double, double y) { return y; });
    const SymbolField A11 = symbol_power(zero, x1, 1.0, cut.chi1);
    const SymbolField A22 = symbol_power(zero, x2, 1.0, cut.chi1);

    auto [part, psi] = build_combination(A11, A22, nullptr, 0.0, 1.0, nullptr);
    CHECK(part.weights.size() == 2);
    CHECK(part.labels == std::vector<std::string>{"psi11", "psi22"});
    const EllipticityReport rep = ellipticity_scan(psi, Region::OmegaPrime);
    CHECK(rep.elliptic());
}

TEST_CASE("build_dn_parametrix") {
    const GridSpec spec = GridSpec::make(33, 33);
    const CutoffPair cut = CutoffPair::standard(spec);
    const auto e1 = ScalarField::from_function(spec, [](double x, double) { return std::exp(x); });
    const auto e2 = ScalarField::from_function(spec, [](double, double y) { return std::exp(y); });
    const auto e1m = ScalarField::from_function(spec, [](double x, double) { return std::exp(-x); });

    SUBCASE("a single everywhere-invertible block gives B = A^{-1} chi2") {
        // hand-built 2x2 symbol, diagonal and safely invertible
        DnOrders dn;
        dn.s = {-1, -1};
        dn.t = {0, 1};
        SymbolField A(spec, DirectionGrid::make(), 0, 2, 2, dn);
        for (int node = 0; node < spec.node_count(); ++node)
            for (int d = 0; d < 64; ++d) {
                A.at(node, d, 0, 0) = {2.0, 1.0};
                A.at(node, d, 1, 1) = 3.0;
            }
        const SymbolField B = build_dn_parametrix(A, cut.chi2);
        for (int node = 0; node < spec.node_count(); ++node) {
            const double c2 = cut.chi2[node];
            const auto b00 = B.at(node, 7, 0, 0);
            CHECK(std::abs(b00 - c2 / std::complex<double>(2.0, 1.0)) < 1e-13);
            CHECK(std::abs(B.at(node, 7, 1, 1) - c2 / 3.0) < 1e-13);
        }
    }
    SUBCASE("exponential two-pair background: B A = chi2 I at machine precision") {
        std::vector<std::array<ScalarField, 2>> pairs{{e1, e2}, {e1m, e2}};
        const SymbolField A = symbol_qpat(pairs, cut.chi1);
        const SymbolField B = build_dn_parametrix(A, cut.chi2);
        REQUIRE(B.rows() == 2);
        REQUIRE(B.cols() == 4);
        CHECK(B.dn_orders()->s == std::vector<int>{0, -1});
        double worst = 0.0;
        for (int node = 0; node < spec.node_count(); ++node)
            for (int d = 0; d < 64; ++d)
                for (int r = 0; r < 2; ++r)
                    for (int c = 0; c < 2; ++c) {
                        std::complex<double> acc{0.0, 0.0};
                        for (int k = 0; k < 4; ++k)
                            acc += B.at(node, d, r, k) * A.at(node, d, k, c);
                        const double want = r == c ? cut.chi2[node] : 0.0;
                        worst = std::max(worst, std::abs(acc - want));
                    }
        CHECK(worst < 1e-12);
    }
    SUBCASE("equal pairs are refused") {
        std::vector<std::array<ScalarField, 2>> pairs{{e1, e1}, {e1, e1}};
        const SymbolField A = symbol_qpat(pairs, cut.chi1);
        CHECK_THROWS_AS(build_dn_parametrix(A, cut.chi2), EllipticityError);
    }
}

TEST_CASE("compose_residual: zero probe, decay, quantized-A cross-check") {
    const auto s = bump_setup(64, 0.3);
    const double p = 0.5;
    const SymbolField A0 = symbol_power(s.sigma0, s.u0, p, s.cut.chi1);
    const QuantizedOperator Q = quantize(build_q_scalar(A0, s.cut.chi2));
    PowerFamilyDerivative dF(s.sigma0, {s.u0}, p, kTight, OutputCutoff::chi1, s.cut.chi1);

    SUBCASE("zero probe gives zero residual") {
        std::vector<Probe> z{{ScalarField(s.spec), 8.0 * M_PI}};
        const ResidualTable t = compose_residual(Q, dF, z);
        CHECK(t.residual[0] == 0.0);
    }
    SUBCASE("residual decays across the probe octaves") {
        std::vector<Probe> probes;
        for (int k : {4, 8, 16}) probes.push_back(windowed_wave(s.spec, 0, k));
        const ResidualTable t = compose_residual(Q, dF, probes);
        CHECK(t.residual[1] < t.residual[0]);
        CHECK(t.residual[2] < t.residual[1]);
        CHECK(t.residual[2] <= 0.7 * t.residual[1]);
        CHECK(t.fitted_exponent() <= -0.5);

        // replacing the exact derivative by its quantized principal symbol
        // changes residuals by a bounded factor
        QuantizedSymbolMap Aq(quantize(A0));
        const ResidualTable tq = compose_residual(Q, Aq, probes);
        for (size_t i = 0; i < probes.size(); ++i) {
            CHECK(t.residual[i] / tq.residual[i] < 25.0);
            CHECK(tq.residual[i] < t.residual[i] * 2.0);
        }
    }
}

TEST_CASE("DN homogeneity factors scale matrix entries by |xi|^(s+t)") {
    const GridSpec spec = GridSpec::make(32, 32);
    DnOrders dn;
    dn.s = {0, -1};
    dn.t = {0, 1};
    // only the (0,1) entry is populated; its order is s_0 + t_1 = 1
    SymbolField A(spec, DirectionGrid::make(), 0, 2, 2, dn);
    for (int node = 0; node < spec.node_count(); ++node)
        for (int d = 0; d < 64; ++d) A.at(node, d, 0, 1) = 1.0;
    const QuantizedOperator Aq = quantize(A);
    auto gain = [&](int k) {
        const Probe pr = windowed_wave(spec, 0, k);
        const std::vector<ScalarField> out = Aq.apply_vector({ScalarField(spec), pr.field});
        CHECK(l2_norm(out[1]) < 1e-10); // empty rows stay empty
        return dot_product(out[0], pr.field) / dot_product(pr.field, pr.field);
    };
    const double g4 = gain(4);
    const double g8 = gain(8);
    CHECK(g4 == doctest::Approx(8.0 * M_PI).epsilon(0.05));
    CHECK(g8 / g4 == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("residual tables serialize to csv") {
    ResidualTable t;
    t.freq = {8.0 * M_PI, 16.0 * M_PI, 32.0 * M_PI};
    t.residual = {0.04, 0.02, 0.01};
    CHECK(t.fitted_exponent() == doctest::Approx(-1.0).epsilon(1e-12));
    const auto path =
        (std::filesystem::temp_directory_path() / "idlab_residuals.csv").string();
    t.write_csv(path);
    std::ifstream is(path);
    std::string line;
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 4);
}

TEST_CASE("probes are supported in Omega prime") {
    const GridSpec spec = GridSpec::make(48, 48);
    const Probe pr = windowed_wave(spec, 4, 0);
    for (int j = 0; j < spec.ny; ++j)
        for (int i = 0; i < spec.nx; ++i)
            if (!spec.node_in_region(i, j, Region::OmegaPrime))
                CHECK(pr.field.at(i, j) == 0.0);
    CHECK(pr.freq_magnitude == doctest::Approx(8.0 * M_PI));
}
