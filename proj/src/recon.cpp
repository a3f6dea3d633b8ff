#include "idlab/recon.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "idlab/field_io.hpp"

namespace idlab {

namespace {

using Fields = std::vector<ScalarField>;

ScalarField omega_mask(const ScalarField& f) { return restrict_to(f, Region::OmegaPrime); }

ScalarField interior_mask(const ScalarField& f) {
    const GridSpec& s = f.spec();
    ScalarField out(s);
    for (int j = 1; j + 1 < s.ny; ++j)
        for (int i = 1; i + 1 < s.nx; ++i) out.at(i, j) = f.at(i, j);
    return out;
}

double fields_dot(const Fields& a, const Fields& b) {
    double acc = 0.0;
    for (size_t c = 0; c < a.size(); ++c) acc += dot_product(a[c], b[c]);
    return acc;
}

double fields_norm(const Fields& a) { return std::sqrt(fields_dot(a, a)); }

void fields_axpy(double alpha, const Fields& x, Fields& y) {
    for (size_t c = 0; c < x.size(); ++c) y[c] += alpha * x[c];
}

} // namespace

ScalarField smooth_phantom(const GridSpec& spec, double amplitude, double cx, double cy,
                           double width) {
    const ScalarField window = make_cutoff(spec, spec.margin_prime + 0.01,
                                           spec.margin_prime + 0.06);
    ScalarField out(spec);
    for (int j = 0; j < spec.ny; ++j)
        for (int i = 0; i < spec.nx; ++i) {
            const double dx = spec.x(i) - cx, dy = spec.y(j) - cy;
            out.at(i, j) = amplitude * window.at(i, j) *
                           std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
        }
    return out;
}

ScalarField modulated_phantom(const GridSpec& spec, double amplitude, int k) {
    const ScalarField window = make_cutoff(spec, spec.margin_prime + 0.01,
                                           spec.margin_prime + 0.06);
    ScalarField out(spec);
    for (int j = 0; j < spec.ny; ++j)
        for (int i = 0; i < spec.nx; ++i)
            out.at(i, j) = amplitude * window.at(i, j) *
                           std::cos(2.0 * M_PI * k * (spec.x(i) + spec.y(j)) / std::sqrt(2.0));
    return out;
}

ScalarField make_background(const GridSpec& spec, const std::string& name, double amplitude) {
    if (name == "constant") return ScalarField(spec);
    if (name == "bump") {
        // Windowed Gaussian: smooth and identically zero outside Omega'.
        const ScalarField window = make_cutoff(spec, spec.margin_prime + 0.005,
                                               spec.margin_prime + 0.05);
        ScalarField out(spec);
        for (int j = 0; j < spec.ny; ++j)
            for (int i = 0; i < spec.nx; ++i) {
                const double dx = spec.x(i) - 0.5, dy = spec.y(j) - 0.5;
                out.at(i, j) = amplitude * window.at(i, j) *
                               std::exp(-(dx * dx + dy * dy) / (2.0 * 0.15 * 0.15));
            }
        return out;
    }
    throw std::invalid_argument("make_background: unknown background '" + name + "'");
}

// --- PowerFamilyDerivative ---------------------------------------------------

PowerFamilyDerivative::PowerFamilyDerivative(ScalarField sigma0, std::vector<ScalarField> u0,
                                             double p, SolverConfig cfg, OutputCutoff cutoff,
                                             ScalarField chi1)
    : sigma0_(std::move(sigma0)), u0_(std::move(u0)), p_(p), cfg_(cfg), cutoff_(cutoff),
      chi1_(std::move(chi1)) {
    if (has_cross()) phi_ = cross_cutoff(u0_[0], u0_[1], p_);
}

int PowerFamilyDerivative::output_components() const {
    if (u0_.size() == 1) return 1;
    return has_cross() ? 3 : 2;
}

ScalarField PowerFamilyDerivative::cut(const ScalarField& f) const {
    switch (cutoff_) {
        case OutputCutoff::none: return f;
        case OutputCutoff::omega_prime: return omega_mask(f);
        case OutputCutoff::chi1: return pointwise_multiply(f, chi1_);
    }
    return f;
}

ScalarField PowerFamilyDerivative::cut_adjoint(const ScalarField& f) const {
    return cut(f); // both cutoffs are diagonal
}

std::vector<ScalarField> PowerFamilyDerivative::apply(const std::vector<ScalarField>& in) const {
    const ScalarField& rho = in.at(0);
    Fields out;
    if (u0_.size() == 1) {
        out.push_back(cut(df_power(sigma0_, u0_[0], p_, rho, cfg_)));
        return out;
    }
    out.push_back(cut(df_power(sigma0_, u0_[0], p_, rho, cfg_)));
    out.push_back(cut(df_power(sigma0_, u0_[1], p_, rho, cfg_)));
    if (has_cross()) out.push_back(cut(df_cross(sigma0_, u0_[0], u0_[1], p_, rho, cfg_)));
    return out;
}

namespace {

// Adjoint of rho -> e^s |g|^p rho + p e^s (g . grad v)/|g|^{2-p}, v = L^{-1} D rho.
ScalarField adjoint_df_power(const ScalarField& sigma0, const ScalarField& u0, double p,
                             const ScalarField& d, const SolverConfig& cfg) {
    const VectorField g = gradient(u0);
    const ScalarField mag = magnitude(g);
    ScalarField out(sigma0.spec());
    ScalarField wx(sigma0.spec()), wy(sigma0.spec());
    for (size_t k = 0; k < out.size(); ++k) {
        const double es = std::exp(sigma0[k]);
        out[k] = es * std::pow(mag[k], p) * d[k];
        const double w = p * es / std::pow(mag[k], 2.0 - p);
        wx[k] = w * g.comp_x[k] * d[k];
        wy[k] = w * g.comp_y[k] * d[k];
    }
    ScalarField q = ddx_transpose(wx);
    q += ddy_transpose(wy);
    const ScalarField vq = solve_dirichlet0(sigma0, nullptr, q, cfg);
    out += divergence_form_rhs_transpose(sigma0, u0, vq);
    return omega_mask(out);
}

// Adjoint of the cross component (phi and the pointwise weights frozen).
ScalarField adjoint_df_cross(const ScalarField& sigma0, const ScalarField& u01,
                             const ScalarField& u02, double p, const ScalarField& d,
                             const SolverConfig& cfg) {
    const VectorField g1 = gradient(u01);
    const VectorField g2 = gradient(u02);
    const ScalarField dg = dot(g1, g2);
    const ScalarField phi = cross_cutoff(u01, u02, p);
    const GridSpec& s = sigma0.spec();

    ScalarField out(s);
    ScalarField a1x(s), a1y(s), a2x(s), a2y(s);
    for (size_t k = 0; k < out.size(); ++k) {
        if (phi[k] == 0.0) continue;
        const double es = std::exp(sigma0[k]);
        const double a = std::abs(dg[k]);
        out[k] = phi[k] * es * std::pow(a, 0.5 * p) * d[k];
        const double S = phi[k] * es * 0.5 * p *
                         (p == 2.0 ? 1.0 : std::pow(a, 0.5 * p - 1.0)) * d[k];
        // term S (g1 . grad v2): weights on the v2-chain carry g1, and vice versa
        a2x[k] = S * g1.comp_x[k];
        a2y[k] = S * g1.comp_y[k];
        a1x[k] = S * g2.comp_x[k];
        a1y[k] = S * g2.comp_y[k];
    }
    ScalarField q2 = ddx_transpose(a2x);
    q2 += ddy_transpose(a2y);
    const ScalarField v2 = solve_dirichlet0(sigma0, nullptr, q2, cfg);
    out += divergence_form_rhs_transpose(sigma0, u02, v2);
    ScalarField q1 = ddx_transpose(a1x);
    q1 += ddy_transpose(a1y);
    const ScalarField v1 = solve_dirichlet0(sigma0, nullptr, q1, cfg);
    out += divergence_form_rhs_transpose(sigma0, u01, v1);
    return omega_mask(out);
}

} // namespace

std::vector<ScalarField> PowerFamilyDerivative::apply_adjoint(
    const std::vector<ScalarField>& out) const {
    ScalarField acc(sigma0_.spec());
    acc += adjoint_df_power(sigma0_, u0_[0], p_, cut_adjoint(out.at(0)), cfg_);
    if (u0_.size() >= 2 && out.size() >= 2)
        acc += adjoint_df_power(sigma0_, u0_[1], p_, cut_adjoint(out.at(1)), cfg_);
    if (has_cross() && out.size() >= 3)
        acc += adjoint_df_cross(sigma0_, u0_[0], u0_[1], p_, cut_adjoint(out.at(2)), cfg_);
    return {omega_mask(acc)};
}

// --- GeneralDerivative ---------------------------------------------------------

GeneralDerivative::GeneralDerivative(GeneralFunctional G, ScalarField sigma0, ScalarField u0,
                                     SolverConfig cfg, OutputCutoff cutoff, ScalarField chi1)
    : G_(std::move(G)), sigma0_(std::move(sigma0)), u0_(std::move(u0)), cfg_(cfg),
      cutoff_(cutoff), chi1_(std::move(chi1)) {}

std::vector<ScalarField> GeneralDerivative::apply(const std::vector<ScalarField>& in) const {
    ScalarField d = df_general(G_, sigma0_, u0_, in.at(0), cfg_);
    if (cutoff_ == OutputCutoff::none) return {d};
    if (cutoff_ == OutputCutoff::omega_prime) return {omega_mask(d)};
    return {pointwise_multiply(d, chi1_)};
}

std::vector<ScalarField> GeneralDerivative::apply_adjoint(
    const std::vector<ScalarField>& out) const {
    ScalarField d = out.at(0);
    if (cutoff_ == OutputCutoff::omega_prime) d = omega_mask(d);
    if (cutoff_ == OutputCutoff::chi1) d = pointwise_multiply(d, chi1_);
    const VectorField g = gradient(u0_);
    const ScalarField mag = magnitude(g);
    const GridSpec& s = sigma0_.spec();
    ScalarField res(s), qdirect(s), wxf(s), wyf(s);
    for (size_t k = 0; k < res.size(); ++k) {
        const double y = sigma0_[k], z = u0_[k], w = mag[k];
        res[k] = G_.df_dy(y, z, w) * d[k];
        qdirect[k] = G_.df_dz(y, z, w) * d[k];
        const double ww = G_.df_dw(y, z, w) / w;
        wxf[k] = ww * g.comp_x[k] * d[k];
        wyf[k] = ww * g.comp_y[k] * d[k];
    }
    ScalarField q = ddx_transpose(wxf);
    q += ddy_transpose(wyf);
    q += qdirect;
    const ScalarField vq = solve_dirichlet0(sigma0_, nullptr, q, cfg_);
    res += divergence_form_rhs_transpose(sigma0_, u0_, vq);
    return {omega_mask(res)};
}

// --- QpatDerivative -------------------------------------------------------------

QpatDerivative::QpatDerivative(ScalarField sigma0, ScalarField gamma0,
                               std::vector<ScalarField> u0, SolverConfig cfg,
                               OutputCutoff cutoff, ScalarField chi1)
    : sigma0_(std::move(sigma0)), gamma0_(std::move(gamma0)), u0_(std::move(u0)), cfg_(cfg),
      cutoff_(cutoff), chi1_(std::move(chi1)) {}

std::vector<ScalarField> QpatDerivative::apply(const std::vector<ScalarField>& in) const {
    const DataVector d = df_qpat(sigma0_, gamma0_, u0_, in.at(0), in.at(1), cfg_);
    Fields out;
    for (const auto& f : d.fields) {
        if (cutoff_ == OutputCutoff::omega_prime) out.push_back(omega_mask(f));
        else if (cutoff_ == OutputCutoff::chi1) out.push_back(pointwise_multiply(f, chi1_));
        else out.push_back(f);
    }
    return out;
}

std::vector<ScalarField> QpatDerivative::apply_adjoint(const std::vector<ScalarField>& out) const {
    const GridSpec& s = sigma0_.spec();
    ScalarField rho_acc(s), nu_acc(s);
    for (size_t j = 0; j < u0_.size(); ++j) {
        ScalarField d = out.at(j);
        if (cutoff_ == OutputCutoff::omega_prime) d = omega_mask(d);
        if (cutoff_ == OutputCutoff::chi1) d = pointwise_multiply(d, chi1_);
        ScalarField t(s);
        for (size_t k = 0; k < t.size(); ++k) t[k] = std::exp(gamma0_[k]) * d[k];
        const ScalarField sj = solve_dirichlet0(sigma0_, &gamma0_, interior_mask(t), cfg_);
        rho_acc += divergence_form_rhs_transpose(sigma0_, u0_[j], sj);
        const ScalarField sj_int = interior_mask(sj);
        for (size_t k = 0; k < nu_acc.size(); ++k)
            nu_acc[k] += u0_[j][k] * t[k] -
                         std::exp(gamma0_[k]) * u0_[j][k] * sj_int[k];
    }
    return {omega_mask(rho_acc), omega_mask(nu_acc)};
}

// --- SolutionPerturbationMap ------------------------------------------------------

SolutionPerturbationMap::SolutionPerturbationMap(ScalarField sigma0, ScalarField u0,
                                                 SolverConfig cfg)
    : sigma0_(std::move(sigma0)), u0_(std::move(u0)), cfg_(cfg) {}

std::vector<ScalarField> SolutionPerturbationMap::apply(const std::vector<ScalarField>& in) const {
    const ScalarField rho = omega_mask(in.at(0));
    return {omega_mask(solve_linearized(sigma0_, u0_, rho, cfg_))};
}

std::vector<ScalarField> SolutionPerturbationMap::apply_adjoint(
    const std::vector<ScalarField>& out) const {
    const ScalarField d = omega_mask(out.at(0));
    const ScalarField v = solve_dirichlet0(sigma0_, nullptr, d, cfg_);
    return {omega_mask(divergence_form_rhs_transpose(sigma0_, u0_, v))};
}

// --- synthesis --------------------------------------------------------------------

namespace {

void add_noise(DataVector& d, double level, uint64_t seed) {
    if (level <= 0.0) return;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& f : d.fields) {
        ScalarField g(f.spec());
        for (size_t k = 0; k < g.size(); ++k) g[k] = gauss(rng);
        const double gn = l2_norm(g);
        if (gn == 0.0) continue;
        const double scale = level * l2_norm(f) / gn;
        f += scale * g;
    }
}

std::vector<std::string> family_labels(size_t n, bool qpat) {
    if (qpat) {
        std::vector<std::string> out;
        for (size_t k = 0; k < n; ++k)
            out.push_back("F" + std::to_string(k / 2 + 1) + "_" + std::to_string(k % 2 + 1));
        return out;
    }
    if (n == 1) return {"F"};
    if (n == 2) return {"F11", "F22"};
    return {"F11", "F22", "F12"};
}

} // namespace

DataVector synthesize_data(const LinearDataMap& dF, const ForwardMap* nonlinear_forward,
                           const ScalarField& sigma0, const Phantom& phantom,
                           const SynthesisConfig& cfg) {
    DataVector d;
    if (nonlinear_forward) {
        d = fd_oracle(*nonlinear_forward, sigma0, phantom.rho_true, cfg.eps);
    } else {
        Fields in{phantom.rho_true};
        if (dF.input_components() == 2)
            in.push_back(phantom.nu_true ? *phantom.nu_true : ScalarField(sigma0.spec()));
        d.fields = dF.apply(in);
    }
    d.labels = family_labels(d.fields.size(), dF.input_components() == 2);
    add_noise(d, cfg.noise, cfg.seed);
    return d;
}

DataVector synthesize_data(const LinearDataMap& dF, const ForwardMap2* nonlinear_forward,
                           const ScalarField& sigma0, const ScalarField& gamma0,
                           const Phantom& phantom, const SynthesisConfig& cfg) {
    const ScalarField nu = phantom.nu_true ? *phantom.nu_true : ScalarField(sigma0.spec());
    DataVector d;
    if (nonlinear_forward) {
        d = fd_oracle(*nonlinear_forward, sigma0, gamma0, phantom.rho_true, nu, cfg.eps);
    } else {
        d.fields = dF.apply({phantom.rho_true, nu});
    }
    d.labels = family_labels(d.fields.size(), true);
    add_noise(d, cfg.noise, cfg.seed);
    return d;
}

// --- parametrix inversions -----------------------------------------------------

ScalarField invert_parametrix_scalar(const DataVector& data, const QuantizedOperator& Q,
                                     const ScalarField& chi1) {
    const ScalarField in = pointwise_multiply(data.fields.at(0), chi1);
    return omega_mask(Q.apply(in));
}

ScalarField invert_parametrix_family(const DataVector& data,
                                     const std::vector<QuantizedOperator>& psi_ops,
                                     const QuantizedOperator& Q_psi, const ScalarField& chi1) {
    if (psi_ops.size() != data.fields.size())
        throw ParametrixError("invert_parametrix_family: component count mismatch");
    ScalarField combined(data.fields[0].spec());
    for (size_t c = 0; c < psi_ops.size(); ++c)
        combined += psi_ops[c].apply(pointwise_multiply(data.fields[c], chi1));
    return omega_mask(Q_psi.apply(combined));
}

std::pair<ScalarField, ScalarField> invert_parametrix_qpat(const DataVector& data,
                                                           const QuantizedOperator& B_op,
                                                           const ScalarField& chi1) {
    Fields in;
    for (const auto& f : data.fields) in.push_back(pointwise_multiply(f, chi1));
    Fields out = B_op.apply_vector(in);
    return {omega_mask(out.at(0)), omega_mask(out.at(1))};
}

// --- Krylov ------------------------------------------------------------------------

Preconditioner parametrix_preconditioner(std::shared_ptr<const QuantizedOperator> Q) {
    return [Q](const Fields& r) -> Fields {
        const ScalarField t = omega_mask(Q->apply_transpose(r.at(0)));
        return {omega_mask(Q->apply(t))};
    };
}

std::vector<ScalarField> invert_krylov(const LinearDataMap& dF, const DataVector& data,
                                       const Preconditioner* precond, const KrylovConfig& cfg,
                                       ReconstructionReport* report) {
    const auto t0 = std::chrono::steady_clock::now();
    const GridSpec& spec = data.fields.at(0).spec();
    Fields r_ls;
    for (const auto& f : data.fields) r_ls.push_back(omega_mask(f));

    Fields x(dF.input_components(), ScalarField(spec));
    Fields b = dF.apply_adjoint(r_ls);
    const double b_norm = fields_norm(b);
    if (report) {
        report->residual_history.clear();
        report->iterations = 0;
        report->final_residual = 0.0;
    }
    if (b_norm == 0.0) return x;

    Fields r_n = b;
    Fields z = precond ? (*precond)(r_n) : r_n;
    Fields p = z;
    double gamma = fields_dot(r_n, z);
    double rel = 1.0;
    int it = 0;
    if (report) report->residual_history.push_back(fields_norm(r_ls));
    for (; it < cfg.max_iters; ++it) {
        rel = fields_norm(r_n) / b_norm;
        if (rel <= cfg.tol) break;
        const Fields q = dF.apply(p);
        const double qq = fields_dot(q, q);
        if (qq == 0.0) break;
        const double alpha = gamma / qq;
        fields_axpy(alpha, p, x);
        fields_axpy(-alpha, q, r_ls);
        const Fields atq = dF.apply_adjoint(q);
        fields_axpy(-alpha, atq, r_n);
        if (report) report->residual_history.push_back(fields_norm(r_ls));
        z = precond ? (*precond)(r_n) : r_n;
        const double gamma_new = fields_dot(r_n, z);
        if (!(gamma_new > 0.0)) break; // preconditioner lost positivity
        const double beta = gamma_new / gamma;
        gamma = gamma_new;
        for (size_t c = 0; c < p.size(); ++c) {
            ScalarField pn = z[c];
            pn += beta * p[c];
            p[c] = pn;
        }
    }
    if (report) {
        report->iterations = it;
        report->final_residual = rel;
        report->wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    return x;
}

// --- spectrum -----------------------------------------------------------------------

namespace {

std::vector<std::pair<int, int>> omega_nodes(const GridSpec& s) {
    std::vector<std::pair<int, int>> nodes;
    for (int j = 0; j < s.ny; ++j)
        for (int i = 0; i < s.nx; ++i)
            if (s.node_in_region(i, j, Region::OmegaPrime)) nodes.emplace_back(i, j);
    return nodes;
}

} // namespace

SpectrumReport estimate_spectrum(const LinearDataMap& dF, const GridSpec& spec, int k,
                                 int probes, uint64_t seed, bool want_bottom) {
    if (k > 40) throw std::invalid_argument("estimate_spectrum: k must be <= 40");
    if (want_bottom && std::max(spec.nx, spec.ny) > kDenseSpectrumMaxGrid)
        throw std::invalid_argument(
            "estimate_spectrum: the bottom of the spectrum needs dense assembly "
            "(grid <= 48 per side)");
    const auto nodes = omega_nodes(spec);
    const int n_nodes = static_cast<int>(nodes.size());
    const int n_in = n_nodes * dF.input_components();
    const int n_out = n_nodes * dF.output_components();
    SpectrumReport rep;
    rep.input_dim = n_in;

    auto unpack = [&](const Eigen::VectorXd& v) {
        Fields in(dF.input_components(), ScalarField(spec));
        for (int c = 0; c < dF.input_components(); ++c)
            for (int m = 0; m < n_nodes; ++m)
                in[c].at(nodes[m].first, nodes[m].second) = v[c * n_nodes + m];
        return in;
    };
    auto pack_out = [&](const Fields& out) {
        Eigen::VectorXd v(n_out);
        for (int c = 0; c < dF.output_components(); ++c)
            for (int m = 0; m < n_nodes; ++m)
                v[c * n_nodes + m] = out[c].at(nodes[m].first, nodes[m].second);
        return v;
    };
    auto pack_in = [&](const Fields& in) {
        Eigen::VectorXd v(n_in);
        for (int c = 0; c < dF.input_components(); ++c)
            for (int m = 0; m < n_nodes; ++m)
                v[c * n_nodes + m] = in[c].at(nodes[m].first, nodes[m].second);
        return v;
    };

    if (std::max(spec.nx, spec.ny) <= kDenseSpectrumMaxGrid) {
        Eigen::MatrixXd A(n_out, n_in);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(n_in);
        for (int col = 0; col < n_in; ++col) {
            e.setZero();
            e[col] = 1.0;
            A.col(col) = pack_out(dF.apply(unpack(e)));
        }
        Eigen::BDCSVD<Eigen::MatrixXd> svd(A);
        const auto& sv = svd.singularValues();
        rep.all.assign(sv.data(), sv.data() + sv.size());
        const double s1 = rep.all.empty() ? 0.0 : rep.all.front();
        for (double s : rep.all)
            if (s < kNearKernelRel * s1) ++rep.near_kernel_count;
        const int kk = std::min<int>(k, static_cast<int>(rep.all.size()));
        rep.top.assign(rep.all.begin(), rep.all.begin() + kk);
        rep.bottom.assign(rep.all.rbegin(), rep.all.rbegin() + kk);
        return rep;
    }

    // Randomized subspace iteration on dF* dF for the top of the spectrum;
    // the bottom needs the dense path.
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int cols = std::min(n_in, k + probes);
    Eigen::MatrixXd X(n_in, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < n_in; ++r) X(r, c) = gauss(rng);
    auto normal_apply = [&](const Eigen::VectorXd& v) {
        return pack_in(dF.apply_adjoint(dF.apply(unpack(v))));
    };
    for (int pass = 0; pass < 3; ++pass) {
        Eigen::MatrixXd Y(n_in, cols);
        for (int c = 0; c < cols; ++c) Y.col(c) = normal_apply(X.col(c));
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(Y);
        X = qr.householderQ() * Eigen::MatrixXd::Identity(n_in, cols);
    }
    Eigen::MatrixXd T(cols, cols);
    {
        Eigen::MatrixXd NX(n_in, cols);
        for (int c = 0; c < cols; ++c) NX.col(c) = normal_apply(X.col(c));
        T = X.transpose() * NX;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (T + T.transpose()));
    std::vector<double> vals;
    for (int i = eig.eigenvalues().size() - 1; i >= 0; --i)
        vals.push_back(std::sqrt(std::max(0.0, eig.eigenvalues()[i])));
    rep.top.assign(vals.begin(), vals.begin() + std::min<size_t>(k, vals.size()));
    return rep;
}

// --- experiment orchestration ---------------------------------------------------

void ExperimentConfig::validate() const {
    if (grid < 16) throw std::invalid_argument("config: grid must be >= 16");
    if (!(p > 0.0 && p <= 2.0)) throw std::invalid_argument("config: p must lie in (0, 2]");
    if (!(eps > 0.0 && eps <= 0.1))
        throw std::invalid_argument("config: eps must lie in (0, 0.1]");
    if (noise < 0.0) throw std::invalid_argument("config: noise must be >= 0");
    if (phantom_amplitude > 0.5)
        throw std::invalid_argument("config: phantom amplitude capped at 0.5");
    if (mode != "power" && mode != "qpat")
        throw std::invalid_argument("config: mode must be power or qpat");
    if (background != "constant" && background != "bump")
        throw std::invalid_argument("config: unknown background");
    if (boundary_set != "x1" && boundary_set != "x1x2" && boundary_set != "exp4")
        throw std::invalid_argument("config: unknown boundary set");
    if (family != "single" && family != "triple")
        throw std::invalid_argument("config: family must be single or triple");
    if (mode == "power" && family == "triple" && boundary_set != "x1x2")
        throw std::invalid_argument("config: the triple family needs boundary_set x1x2");
    if (mode == "qpat" && boundary_set != "exp4")
        throw std::invalid_argument("config: qpat mode needs boundary_set exp4");
    solver.validate();
}

namespace {

std::vector<DirichletBC> boundary_conditions(const GridSpec& spec, const std::string& set) {
    if (set == "x1") return {DirichletBC::from_function(spec, [](double x, double) { return x; })};
    if (set == "x1x2")
        return {DirichletBC::from_function(spec, [](double x, double) { return x; }),
                DirichletBC::from_function(spec, [](double, double y) { return y; })};
    // exp4: two exponential measurement pairs for the diffusion problem
    return {DirichletBC::from_function(spec, [](double x, double) { return std::exp(x); }),
            DirichletBC::from_function(spec, [](double, double y) { return std::exp(y); }),
            DirichletBC::from_function(spec, [](double x, double) { return std::exp(-x); }),
            DirichletBC::from_function(spec, [](double, double y) { return std::exp(y); })};
}

std::string render_config(const ExperimentConfig& c) {
    std::ostringstream os;
    os << "grid = " << c.grid << "\n"
       << "margin_prime = " << c.margin_prime << "\n"
       << "margin_double_prime = " << c.margin_double_prime << "\n"
       << "background = " << c.background << "\n"
       << "background_amplitude = " << c.background_amplitude << "\n"
       << "boundary_set = " << c.boundary_set << "\n"
       << "mode = " << c.mode << "\n"
       << "p = " << c.p << "\n"
       << "family = " << c.family << "\n"
       << "phantom_amplitude = " << c.phantom_amplitude << "\n"
       << "synthesis = " << (c.nonlinear_synthesis ? "nonlinear" : "linear") << "\n"
       << "eps = " << c.eps << "\n"
       << "noise = " << c.noise << "\n"
       << "seed = " << c.seed << "\n"
       << "tol = " << c.solver.tol << "\n"
       << "max_iters = " << c.solver.max_iters << "\n"
       << "krylov_tol = " << c.krylov.tol << "\n"
       << "krylov_max_iters = " << c.krylov.max_iters << "\n"
       << "precondition = " << (c.precondition ? "on" : "off") << "\n"
       << "spectrum = " << (c.spectrum ? "on" : "off") << "\n"
       << "spectrum_k = " << c.spectrum_k << "\n"
       << "out_dir = " << c.out_dir << "\n";
    return os.str();
}

nlohmann::json scan_json(const EllipticityReport& r) {
    return nlohmann::json::parse(report_to_json(r));
}

nlohmann::json recon_json(const ReconstructionReport& r, bool with_nu) {
    nlohmann::json j;
    j["rel_error_rho"] = r.rel_error_rho;
    if (with_nu) j["rel_error_nu"] = r.rel_error_nu;
    j["iterations"] = r.iterations;
    if (r.iterations_unpreconditioned > 0)
        j["iterations_unpreconditioned"] = r.iterations_unpreconditioned;
    j["final_residual"] = r.final_residual;
    j["residual_history"] = r.residual_history;
    return j;
}

double rel_error_omega(const ScalarField& got, const ScalarField& want) {
    ScalarField diff = got;
    diff -= want;
    const double ref = l2_norm_region(want, Region::OmegaPrime);
    return ref > 0.0 ? l2_norm_region(diff, Region::OmegaPrime) / ref : 0.0;
}

void dump_field(const std::filesystem::path& dir, const std::string& name,
                const ScalarField& f, nlohmann::json& previews) {
    write_hsf1((dir / (name + ".hsf1")).string(), f);
    const PgmScale sc = write_pgm((dir / (name + ".pgm")).string(), f);
    previews[name] = {{"min", sc.min}, {"max", sc.max}};
}

} // namespace

ExperimentConfig bundled_config(const std::string& name) {
    ExperimentConfig c;
    if (name == "p05_smooth") {
        c.grid = 48;
        c.background = "bump";
        // strong (but smooth) contrast: the unpreconditioned normal equations
        // have to work for their convergence here
        c.background_amplitude = 2.0;
        c.boundary_set = "x1";
        c.mode = "power";
        c.p = 0.5;
        c.family = "single";
        c.precondition = true;
        c.out_dir = "runs/p05_smooth";
        return c;
    }
    if (name == "p2_single") {
        c.grid = 32;
        // constant background: u0 = x1 exactly, so the symbol zeros sit on
        // sampled directions and the scan reports the degeneracy
        c.background = "constant";
        c.boundary_set = "x1";
        c.mode = "power";
        c.p = 2.0;
        c.family = "single";
        c.out_dir = "runs/p2_single";
        return c;
    }
    if (name == "qpat_2pairs") {
        c.grid = 32;
        c.background = "constant";
        c.boundary_set = "exp4";
        c.mode = "qpat";
        c.precondition = false;
        c.out_dir = "runs/qpat_2pairs";
        return c;
    }
    throw std::invalid_argument("bundled_config: unknown name '" + name + "'");
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    // Failures surface with the pipeline stage attached.
    const char* stage = "setup";
    try {
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    {
        // Reproducibility: the configuration lands on disk before any solve.
        std::ofstream os(dir / "config.ini");
        os << render_config(cfg);
    }

    const GridSpec spec = GridSpec::make(cfg.grid, cfg.grid, cfg.margin_prime,
                                         cfg.margin_double_prime);
    const CutoffPair cut = CutoffPair::standard(spec);
    const ScalarField sigma0 = make_background(spec, cfg.background, cfg.background_amplitude);
    const auto bcs = boundary_conditions(spec, cfg.boundary_set);

    ExperimentResult result;
    nlohmann::json report;
    report["config"] = nlohmann::json::object();
    {
        std::istringstream is(render_config(cfg));
        std::string line;
        while (std::getline(is, line)) {
            const auto eq = line.find(" = ");
            if (eq == std::string::npos) continue;
            report["config"][line.substr(0, eq)] = line.substr(eq + 3);
        }
    }
    nlohmann::json previews = nlohmann::json::object();

    if (cfg.mode == "power") {
        stage = "background solve";
        std::vector<ScalarField> u0s;
        for (const auto& bc : bcs)
            u0s.push_back(solve_conductivity(ConductivityProblem{sigma0, bc}, cfg.solver));
        if (cfg.family == "single") u0s.resize(1);

        Phantom phantom{smooth_phantom(spec, cfg.phantom_amplitude), std::nullopt, "smooth"};
        PowerFamilyDerivative dF(sigma0, u0s, cfg.p, cfg.solver, OutputCutoff::omega_prime,
                                 cut.chi1);

        // Data lives on the whole grid; the quantized operators apply their
        // own chi1 localization and the Krylov route restricts to Omega'.
        PowerFamilyDerivative dF_raw(sigma0, u0s, cfg.p, cfg.solver, OutputCutoff::none,
                                     cut.chi1);
        stage = "data synthesis";
        const SynthesisConfig syn{cfg.nonlinear_synthesis, cfg.eps, cfg.noise, cfg.seed};
        PowerFamilyModel model;
        model.bcs = bcs;
        if (cfg.family == "single") model.bcs.resize(1);
        model.p = cfg.p;
        model.cfg = cfg.solver;
        if (dF.has_cross()) model.cross_weight = dF.cross_weight();
        const ForwardMap forward = [&model](const ScalarField& s) { return model.evaluate(s); };
        const DataVector data = synthesize_data(
            dF_raw, cfg.nonlinear_synthesis ? &forward : nullptr, sigma0, phantom, syn);

        // Symbols and the ellipticity verdict.
        stage = "symbol scan";
        std::vector<SymbolField> symbols;
        symbols.push_back(symbol_power(sigma0, u0s[0], cfg.p, cut.chi1));
        if (cfg.family == "triple") {
            symbols.push_back(symbol_power(sigma0, u0s[1], cfg.p, cut.chi1));
            if (cfg.p != 1.0)
                symbols.push_back(symbol_cross(sigma0, u0s[0], u0s[1], cfg.p, cut.chi1));
        }
        result.scan = ellipticity_scan(
            std::span<const SymbolField>(symbols.data(), symbols.size()), Region::OmegaPrime);
        report["ellipticity"] = scan_json(result.scan);

        std::shared_ptr<QuantizedOperator> Q_for_precond;
        if (result.scan.elliptic()) {
            stage = "parametrix build";
            if (cfg.family == "single") {
                const SymbolField Qsym = build_q_scalar(symbols[0], cut.chi2);
                auto Q = std::make_shared<QuantizedOperator>(quantize(Qsym));
                Q_for_precond = Q;
                const ScalarField rho_hat = invert_parametrix_scalar(data, *Q, cut.chi1);
                result.parametrix.rel_error_rho = rel_error_omega(rho_hat, phantom.rho_true);
                dump_field(dir, "rho_hat_parametrix", rho_hat, previews);
            } else {
                const SymbolField* A12 = symbols.size() >= 3 ? &symbols[2] : nullptr;
                const ScalarField* phi = dF.has_cross() ? &dF.cross_weight() : nullptr;
                auto [part, psi] = build_combination(symbols[0], symbols[1], A12, 0.0, cfg.p, phi);
                const SymbolField Qsym = build_q_scalar(psi, cut.chi2);
                std::vector<QuantizedOperator> psi_ops;
                for (const auto& w : part.weights) psi_ops.push_back(quantize(w));
                const QuantizedOperator Qop = quantize(Qsym);
                const ScalarField rho_hat =
                    invert_parametrix_family(data, psi_ops, Qop, cut.chi1);
                result.parametrix.rel_error_rho = rel_error_omega(rho_hat, phantom.rho_true);
                dump_field(dir, "rho_hat_parametrix", rho_hat, previews);
            }
            result.parametrix_built = true;
        }

        // Krylov inversion on the restricted normal equations.
        stage = "krylov inversion";
        const bool use_precond = cfg.precondition && Q_for_precond != nullptr;
        ReconstructionReport krep;
        if (use_precond) {
            ReconstructionReport unprec;
            invert_krylov(dF, data, nullptr, cfg.krylov, &unprec);
            const Preconditioner M = parametrix_preconditioner(Q_for_precond);
            Fields x = invert_krylov(dF, data, &M, cfg.krylov, &krep);
            krep.iterations_unpreconditioned = unprec.iterations;
            krep.rel_error_rho = rel_error_omega(x[0], phantom.rho_true);
            dump_field(dir, "rho_hat_krylov", x[0], previews);
        } else {
            Fields x = invert_krylov(dF, data, nullptr, cfg.krylov, &krep);
            krep.rel_error_rho = rel_error_omega(x[0], phantom.rho_true);
            dump_field(dir, "rho_hat_krylov", x[0], previews);
        }
        result.krylov = krep;

        if (cfg.spectrum) {
            stage = "spectrum";
            result.spectrum = estimate_spectrum(dF, spec, cfg.spectrum_k, 8, cfg.seed);
            SolutionPerturbationMap baseline(sigma0, u0s[0], cfg.solver);
            result.baseline_spectrum = estimate_spectrum(baseline, spec, cfg.spectrum_k, 8, cfg.seed);
            std::ofstream os(dir / "spectrum.csv");
            os << "index,sigma_dF,sigma_baseline\n" << std::setprecision(17);
            const size_t n = std::max(result.spectrum->all.size(),
                                      result.baseline_spectrum->all.size());
            for (size_t i = 0; i < n; ++i) {
                os << i + 1 << ',';
                if (i < result.spectrum->all.size()) os << result.spectrum->all[i];
                os << ',';
                if (i < result.baseline_spectrum->all.size())
                    os << result.baseline_spectrum->all[i];
                os << '\n';
            }
            report["spectrum"] = {
                {"near_kernel_count", result.spectrum->near_kernel_count},
                {"top", result.spectrum->top},
                {"bottom", result.spectrum->bottom},
                {"baseline_top", result.baseline_spectrum->top},
                {"baseline_bottom", result.baseline_spectrum->bottom},
            };
        }

        stage = "artifact dump";
        dump_field(dir, "rho_true", phantom.rho_true, previews);
        nlohmann::json manifest;
        manifest["labels"] = data.labels;
        manifest["p"] = cfg.p;
        manifest["background"] = cfg.background + " (amplitude " +
                                 std::to_string(cfg.background_amplitude) + ")";
        manifest["files"] = nlohmann::json::array();
        for (size_t c = 0; c < data.fields.size(); ++c) {
            dump_field(dir, "data_" + data.labels[c], data.fields[c], previews);
            manifest["files"].push_back("data_" + data.labels[c] + ".hsf1");
        }
        std::ofstream(dir / "data_manifest.json") << manifest.dump(2) << "\n";
        report["reconstruction"] = {{"parametrix_built", result.parametrix_built},
                                    {"krylov", recon_json(result.krylov, false)}};
        if (result.parametrix_built)
            report["reconstruction"]["parametrix"] = {
                {"rel_error_rho", result.parametrix.rel_error_rho}};
    } else {
        // QPAT: two measurement pairs of the diffusion problem.
        stage = "background solve";
        const ScalarField gamma0(spec);
        std::vector<ScalarField> u0s;
        for (const auto& bc : bcs)
            u0s.push_back(solve_diffusion(DiffusionProblem{sigma0, gamma0, bc}, cfg.solver));
        std::vector<std::array<ScalarField, 2>> pairs{{u0s[0], u0s[1]}, {u0s[2], u0s[3]}};

        Phantom phantom{smooth_phantom(spec, cfg.phantom_amplitude, 0.42, 0.55),
                        smooth_phantom(spec, cfg.phantom_amplitude, 0.58, 0.45), "qpat"};
        QpatDerivative dF(sigma0, gamma0, u0s, cfg.solver, OutputCutoff::omega_prime, cut.chi1);

        stage = "data synthesis";
        QpatDerivative dF_raw(sigma0, gamma0, u0s, cfg.solver, OutputCutoff::none, cut.chi1);
        const SynthesisConfig syn{cfg.nonlinear_synthesis, cfg.eps, cfg.noise, cfg.seed};
        QpatModel model{bcs, cfg.solver};
        const ForwardMap2 forward = [&model](const ScalarField& s, const ScalarField& g) {
            return model.evaluate(s, g);
        };
        const DataVector data =
            synthesize_data(dF_raw, cfg.nonlinear_synthesis ? &forward : nullptr, sigma0,
                            gamma0, phantom, syn);

        stage = "symbol scan";
        const SymbolField stacked = symbol_qpat(pairs, cut.chi1);
        result.scan = ellipticity_scan(stacked, Region::OmegaPrime);
        report["ellipticity"] = scan_json(result.scan);
        const ScalarField det = qpat_vector_det(pairs);
        double det_min = std::numeric_limits<double>::infinity();
        for (int j = 0; j < spec.ny; ++j)
            for (int i = 0; i < spec.nx; ++i)
                if (spec.node_in_region(i, j, Region::OmegaPrime))
                    det_min = std::min(det_min, std::abs(det.at(i, j)));
        report["qpat_det_min"] = det_min;

        if (result.scan.elliptic()) {
            stage = "parametrix build";
            const SymbolField B = build_dn_parametrix(stacked, cut.chi2);
            const QuantizedOperator B_op = quantize(B);
            auto [rho_hat, nu_hat] = invert_parametrix_qpat(data, B_op, cut.chi1);
            result.parametrix.rel_error_rho = rel_error_omega(rho_hat, phantom.rho_true);
            result.parametrix.rel_error_nu = rel_error_omega(nu_hat, *phantom.nu_true);
            result.parametrix_built = true;
            dump_field(dir, "rho_hat_parametrix", rho_hat, previews);
            dump_field(dir, "nu_hat_parametrix", nu_hat, previews);
        }

        stage = "krylov inversion";
        ReconstructionReport krep;
        Fields x = invert_krylov(dF, data, nullptr, cfg.krylov, &krep);
        krep.rel_error_rho = rel_error_omega(x[0], phantom.rho_true);
        krep.rel_error_nu = rel_error_omega(x[1], *phantom.nu_true);
        result.krylov = krep;
        dump_field(dir, "rho_hat_krylov", x[0], previews);
        dump_field(dir, "nu_hat_krylov", x[1], previews);

        dump_field(dir, "rho_true", phantom.rho_true, previews);
        dump_field(dir, "nu_true", *phantom.nu_true, previews);
        nlohmann::json manifest;
        manifest["labels"] = data.labels;
        manifest["background"] = cfg.background + " (amplitude " +
                                 std::to_string(cfg.background_amplitude) + ")";
        manifest["files"] = nlohmann::json::array();
        for (size_t c = 0; c < data.fields.size(); ++c) {
            dump_field(dir, "data_" + data.labels[c], data.fields[c], previews);
            manifest["files"].push_back("data_" + data.labels[c] + ".hsf1");
        }
        std::ofstream(dir / "data_manifest.json") << manifest.dump(2) << "\n";
        report["reconstruction"] = {{"parametrix_built", result.parametrix_built},
                                    {"krylov", recon_json(result.krylov, true)}};
        if (result.parametrix_built)
            report["reconstruction"]["parametrix"] = {
                {"rel_error_rho", result.parametrix.rel_error_rho},
                {"rel_error_nu", result.parametrix.rel_error_nu}};
    }

    stage = "report";
    report["previews"] = previews;
    result.report_path = (dir / "report.json").string();
    std::ofstream os(result.report_path);
    os << report.dump(2) << "\n";
    return result;
    } catch (const std::exception& e) {
        throw std::runtime_error("run_experiment failed at stage '" + std::string(stage) +
                                 "': " + e.what());
    }
}

} // namespace idlab
