#include "idlab/functionals.hpp"

#include <cmath>

namespace idlab {

namespace {

ScalarField admissible(const ScalarField& rho) {
    return restrict_to(rho, Region::OmegaPrime);
}

// Throws when |grad u0| dips below the relative floor inside the region.
void require_gradient_floor(const ScalarField& grad_mag, Region region, const char* what) {
    const GridSpec& s = grad_mag.spec();
    const double floor = kGradientFloorRel * linf_norm(grad_mag);
    double worst = 0.0;
    int wi = -1, wj = -1;
    for (int j = 0; j < s.ny; ++j)
        for (int i = 0; i < s.nx; ++i) {
            if (!s.node_in_region(i, j, region)) continue;
            const double m = grad_mag.at(i, j);
            if (wi < 0 || m < worst) {
                worst = m;
                wi = i;
                wj = j;
            }
        }
    if (wi >= 0 && worst < floor)
        throw GradientFloorError(std::string(what) + ": |grad u0| = " + std::to_string(worst) +
                                     " below floor at node (" + std::to_string(wi) + "," +
                                     std::to_string(wj) + ")",
                                 wi, wj, worst);
}

} // namespace

DataVector& DataVector::operator+=(const DataVector& o) {
    for (size_t c = 0; c < fields.size(); ++c) fields[c] += o.fields[c];
    return *this;
}

DataVector& DataVector::operator-=(const DataVector& o) {
    for (size_t c = 0; c < fields.size(); ++c) fields[c] -= o.fields[c];
    return *this;
}

DataVector& DataVector::operator*=(double a) {
    for (auto& f : fields) f *= a;
    return *this;
}

double data_l2_norm(const DataVector& d) {
    double acc = 0.0;
    for (const auto& f : d.fields) {
        const double n = l2_norm(f);
        acc += n * n;
    }
    return std::sqrt(acc);
}

double data_rel_l2_error(const DataVector& a, const DataVector& b) {
    DataVector diff = a;
    diff -= b;
    return data_l2_norm(diff) / data_l2_norm(b);
}

ScalarField eval_power(const ScalarField& sigma, const ScalarField& u, double p,
                       bool* degenerate_flag) {
    require_same_spec(sigma.spec(), u.spec(), "eval_power");
    const ScalarField mag = magnitude(gradient(u));
    if (degenerate_flag) {
        *degenerate_flag = false;
        if (p < 1.0) {
            const GridSpec& s = sigma.spec();
            const double floor = kGradientFloorRel * linf_norm(mag);
            for (int j = 0; j < s.ny && !*degenerate_flag; ++j)
                for (int i = 0; i < s.nx; ++i)
                    if (s.node_in_region(i, j, Region::OmegaDoublePrime) &&
                        mag.at(i, j) < floor) {
                        *degenerate_flag = true;
                        break;
                    }
        }
    }
    ScalarField out(sigma.spec());
    for (size_t k = 0; k < out.size(); ++k)
        out[k] = std::exp(sigma[k]) * std::pow(mag[k], p);
    return out;
}

ScalarField eval_cross(const ScalarField& sigma, const ScalarField& u1,
                       const ScalarField& u2, double p) {
    require_same_spec(sigma.spec(), u1.spec(), "eval_cross");
    require_same_spec(sigma.spec(), u2.spec(), "eval_cross");
    const ScalarField dg = dot(gradient(u1), gradient(u2));
    ScalarField out(sigma.spec());
    for (size_t k = 0; k < out.size(); ++k)
        out[k] = std::exp(sigma[k]) * std::pow(std::abs(dg[k]), 0.5 * p);
    return out;
}

ScalarField eval_qpat(const ScalarField& gamma, const ScalarField& u) {
    require_same_spec(gamma.spec(), u.spec(), "eval_qpat");
    ScalarField out(gamma.spec());
    for (size_t k = 0; k < out.size(); ++k) out[k] = std::exp(gamma[k]) * u[k];
    return out;
}

ScalarField df_power(const ScalarField& sigma0, const ScalarField& u0, double p,
                     const ScalarField& rho, const SolverConfig& cfg) {
    const ScalarField rho_ad = admissible(rho);
    const VectorField g0 = gradient(u0);
    const ScalarField mag = magnitude(g0);
    require_gradient_floor(mag, Region::OmegaDoublePrime, "df_power");
    const ScalarField v = solve_linearized(sigma0, u0, rho_ad, cfg);
    const VectorField gv = gradient(v);
    ScalarField out(sigma0.spec());
    for (size_t k = 0; k < out.size(); ++k) {
        const double es = std::exp(sigma0[k]);
        const double dotgv = g0.comp_x[k] * gv.comp_x[k] + g0.comp_y[k] * gv.comp_y[k];
        out[k] = rho_ad[k] * es * std::pow(mag[k], p) +
                 p * es * dotgv / std::pow(mag[k], 2.0 - p);
    }
    return out;
}

ScalarField cross_cutoff(const ScalarField& u01, const ScalarField& u02, double p,
                         bool* alpha_region_empty) {
    const GridSpec& s = u01.spec();
    if (alpha_region_empty) *alpha_region_empty = false;
    if (p == 2.0) {
        // Globally differentiable; no localization needed.
        return ScalarField::from_function(s, [](double, double) { return 1.0; });
    }
    const ScalarField dg = dot(gradient(u01), gradient(u02));
    const double peak = linf_norm(dg);
    ScalarField phi(s);
    if (peak < 1e-14) {
        if (alpha_region_empty) *alpha_region_empty = true;
        return phi;
    }
    const double alpha = 0.1 * peak;
    for (size_t k = 0; k < phi.size(); ++k)
        phi[k] = smoothstep_quintic((std::abs(dg[k]) - 0.5 * alpha) / (0.5 * alpha));
    return phi;
}

ScalarField df_cross(const ScalarField& sigma0, const ScalarField& u01,
                     const ScalarField& u02, double p, const ScalarField& rho,
                     const SolverConfig& cfg, bool* alpha_region_empty) {
    const ScalarField rho_ad = admissible(rho);
    const ScalarField phi = cross_cutoff(u01, u02, p, alpha_region_empty);
    if (alpha_region_empty && *alpha_region_empty) return ScalarField(sigma0.spec());

    const VectorField g1 = gradient(u01);
    const VectorField g2 = gradient(u02);
    const ScalarField dg = dot(g1, g2);
    const ScalarField v1 = solve_linearized(sigma0, u01, rho_ad, cfg);
    const ScalarField v2 = solve_linearized(sigma0, u02, rho_ad, cfg);
    const VectorField gv1 = gradient(v1);
    const VectorField gv2 = gradient(v2);

    ScalarField out(sigma0.spec());
    for (size_t k = 0; k < out.size(); ++k) {
        if (phi[k] == 0.0) continue; // the weight keeps |dg| away from zero below
        const double es = std::exp(sigma0[k]);
        const double a = std::abs(dg[k]);
        const double mixed = g1.comp_x[k] * gv2.comp_x[k] + g1.comp_y[k] * gv2.comp_y[k] +
                             g2.comp_x[k] * gv1.comp_x[k] + g2.comp_y[k] * gv1.comp_y[k];
        const double head = rho_ad[k] * es * std::pow(a, 0.5 * p);
        const double tail = es * 0.5 * p * (p == 2.0 ? 1.0 : std::pow(a, 0.5 * p - 1.0)) * mixed;
        out[k] = phi[k] * (head + tail);
    }
    return out;
}

ScalarField df_general(const GeneralFunctional& G, const ScalarField& sigma0,
                       const ScalarField& u0, const ScalarField& rho,
                       const SolverConfig& cfg) {
    const ScalarField rho_ad = admissible(rho);
    const VectorField g0 = gradient(u0);
    const ScalarField mag = magnitude(g0);
    require_gradient_floor(mag, Region::OmegaDoublePrime, "df_general");
    const ScalarField v = solve_linearized(sigma0, u0, rho_ad, cfg);
    const VectorField gv = gradient(v);
    ScalarField out(sigma0.spec());
    for (size_t k = 0; k < out.size(); ++k) {
        const double y = sigma0[k], z = u0[k], w = mag[k];
        const double dotgv = g0.comp_x[k] * gv.comp_x[k] + g0.comp_y[k] * gv.comp_y[k];
        out[k] = G.df_dy(y, z, w) * rho_ad[k] + G.df_dz(y, z, w) * v[k] +
                 G.df_dw(y, z, w) * dotgv / w;
    }
    return out;
}

DataVector df_qpat(const ScalarField& sigma0, const ScalarField& gamma0,
                   const std::vector<ScalarField>& u0_list, const ScalarField& rho,
                   const ScalarField& nu, const SolverConfig& cfg) {
    const ScalarField rho_ad = admissible(rho);
    const ScalarField nu_ad = admissible(nu);
    DataVector out;
    for (size_t j = 0; j < u0_list.size(); ++j) {
        const ScalarField& u0 = u0_list[j];
        const ScalarField v = solve_linearized_qpat(sigma0, gamma0, u0, rho_ad, nu_ad, cfg);
        ScalarField d(sigma0.spec());
        for (size_t k = 0; k < d.size(); ++k)
            d[k] = std::exp(gamma0[k]) * (nu_ad[k] * u0[k] + v[k]);
        out.labels.push_back("dF" + std::to_string(j + 1));
        out.fields.push_back(std::move(d));
    }
    return out;
}

DataVector PowerFamilyModel::evaluate(const ScalarField& sigma) const {
    DataVector out;
    std::vector<ScalarField> us;
    us.reserve(bcs.size());
    for (const auto& bc : bcs)
        us.push_back(solve_conductivity(ConductivityProblem{sigma, bc}, cfg));
    if (us.size() == 1) {
        out.labels = {"F"};
        out.fields = {eval_power(sigma, us[0], p)};
        return out;
    }
    out.labels = {"F11", "F22"};
    out.fields = {eval_power(sigma, us[0], p), eval_power(sigma, us[1], p)};
    if (has_cross()) {
        ScalarField f12 = eval_cross(sigma, us[0], us[1], p);
        if (cross_weight) f12 = pointwise_multiply(f12, *cross_weight);
        out.labels.push_back("F12");
        out.fields.push_back(std::move(f12));
    }
    return out;
}

DataVector QpatModel::evaluate(const ScalarField& sigma, const ScalarField& gamma) const {
    DataVector out;
    for (size_t k = 0; k < bcs.size(); ++k) {
        const ScalarField u = solve_diffusion(DiffusionProblem{sigma, gamma, bcs[k]}, cfg);
        out.labels.push_back("F" + std::to_string(k / 2 + 1) + "_" + std::to_string(k % 2 + 1));
        out.fields.push_back(eval_qpat(gamma, u));
    }
    return out;
}

DataVector GeneralModel::evaluate(const ScalarField& sigma) const {
    const ScalarField u = solve_conductivity(ConductivityProblem{sigma, bc}, cfg);
    const ScalarField mag = magnitude(gradient(u));
    ScalarField f(sigma.spec());
    for (size_t k = 0; k < f.size(); ++k) f[k] = G.f(sigma[k], u[k], mag[k]);
    return DataVector{{"F"}, {std::move(f)}};
}

namespace {
void check_eps(double eps) {
    if (!(eps > 0.0 && eps <= 0.1))
        throw std::invalid_argument("fd_oracle: eps must lie in (0, 0.1]");
}
} // namespace

DataVector fd_oracle(const ForwardMap& F, const ScalarField& sigma0,
                     const ScalarField& rho, double eps) {
    check_eps(eps);
    ScalarField sigma_eps = sigma0;
    sigma_eps += eps * admissible(rho);
    DataVector hi = F(sigma_eps);
    hi -= F(sigma0);
    hi *= 1.0 / eps;
    return hi;
}

DataVector fd_oracle(const ForwardMap2& F, const ScalarField& sigma0,
                     const ScalarField& gamma0, const ScalarField& rho,
                     const ScalarField& nu, double eps) {
    check_eps(eps);
    ScalarField sigma_eps = sigma0;
    sigma_eps += eps * admissible(rho);
    ScalarField gamma_eps = gamma0;
    gamma_eps += eps * admissible(nu);
    DataVector hi = F(sigma_eps, gamma_eps);
    hi -= F(sigma0, gamma0);
    hi *= 1.0 / eps;
    return hi;
}

} // namespace idlab
