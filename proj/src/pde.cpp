#include "idlab/pde.hpp"

#include <cmath>
#include <vector>

namespace idlab {

namespace {

// Edge conductivities a_x(i,j) for edge (i,j)-(i+1,j) and a_y for (i,j)-(i,j+1),
// plus the optional nodal zeroth-order coefficient.
struct Stencil {
    GridSpec spec;
    std::vector<double> ax, ay, zeroth;

    double edge_x(int i, int j) const { return ax[static_cast<size_t>(j) * (spec.nx - 1) + i]; }
    double edge_y(int i, int j) const { return ay[static_cast<size_t>(j) * spec.nx + i]; }
};

Stencil build_stencil(const ScalarField& sigma, const ScalarField* gamma) {
    const GridSpec& s = sigma.spec();
    Stencil st;
    st.spec = s;
    st.ax.resize(static_cast<size_t>(s.nx - 1) * s.ny);
    st.ay.resize(static_cast<size_t>(s.nx) * (s.ny - 1));
    for (int j = 0; j < s.ny; ++j)
        for (int i = 0; i + 1 < s.nx; ++i)
            st.ax[static_cast<size_t>(j) * (s.nx - 1) + i] =
                std::exp(0.5 * (sigma.at(i, j) + sigma.at(i + 1, j)));
    for (int j = 0; j + 1 < s.ny; ++j)
        for (int i = 0; i < s.nx; ++i)
            st.ay[static_cast<size_t>(j) * s.nx + i] =
                std::exp(0.5 * (sigma.at(i, j) + sigma.at(i, j + 1)));
    if (gamma) {
        require_same_spec(s, gamma->spec(), "build_stencil");
        st.zeroth.resize(sigma.size());
        for (size_t k = 0; k < sigma.size(); ++k) st.zeroth[k] = std::exp((*gamma)[k]);
    }
    return st;
}

// L u at one interior node, using u's values (boundary included).
double apply_at(const Stencil& st, const ScalarField& u, int i, int j) {
    const GridSpec& s = st.spec;
    const double ihx2 = 1.0 / (s.hx() * s.hx());
    const double ihy2 = 1.0 / (s.hy() * s.hy());
    double v = ihx2 * (st.edge_x(i - 1, j) * (u.at(i, j) - u.at(i - 1, j)) -
                       st.edge_x(i, j) * (u.at(i + 1, j) - u.at(i, j))) +
               ihy2 * (st.edge_y(i, j - 1) * (u.at(i, j) - u.at(i, j - 1)) -
                       st.edge_y(i, j) * (u.at(i, j + 1) - u.at(i, j)));
    if (!st.zeroth.empty()) v += st.zeroth[static_cast<size_t>(j) * s.nx + i] * u.at(i, j);
    return v;
}

bool is_boundary(const GridSpec& s, int i, int j) {
    return i == 0 || j == 0 || i == s.nx - 1 || j == s.ny - 1;
}

// Jacobi-preconditioned CG on the interior unknowns. rhs carries the full
// right-hand side including boundary contributions; work fields keep boundary
// rows at zero throughout.
ScalarField cg_interior(const Stencil& st, const ScalarField& rhs, const SolverConfig& cfg,
                        SolveStats* stats, const char* what) {
    cfg.validate();
    const GridSpec& s = st.spec;
    const int max_iters = cfg.max_iters > 0 ? cfg.max_iters : 10 * s.nx * s.ny;
    const double ihx2 = 1.0 / (s.hx() * s.hx());
    const double ihy2 = 1.0 / (s.hy() * s.hy());

    ScalarField diag(s);
    for (int j = 1; j + 1 < s.ny; ++j)
        for (int i = 1; i + 1 < s.nx; ++i) {
            double d = ihx2 * (st.edge_x(i - 1, j) + st.edge_x(i, j)) +
                       ihy2 * (st.edge_y(i, j - 1) + st.edge_y(i, j));
            if (!st.zeroth.empty()) d += st.zeroth[static_cast<size_t>(j) * s.nx + i];
            diag.at(i, j) = d;
        }

    auto matvec = [&](const ScalarField& u, ScalarField& out) {
        for (int j = 1; j + 1 < s.ny; ++j)
            for (int i = 1; i + 1 < s.nx; ++i) out.at(i, j) = apply_at(st, u, i, j);
    };

    ScalarField x(s), r = rhs, z(s), p(s), Ap(s);
    const double b_norm = std::sqrt(dot_product(rhs, rhs));
    if (b_norm == 0.0) {
        if (stats) *stats = {0, 0.0};
        return x;
    }
    for (int j = 1; j + 1 < s.ny; ++j)
        for (int i = 1; i + 1 < s.nx; ++i) z.at(i, j) = r.at(i, j) / diag.at(i, j);
    p = z;
    double rz = dot_product(r, z);
    double res = 1.0;
    int it = 0;
    for (; it < max_iters; ++it) {
        res = std::sqrt(dot_product(r, r)) / b_norm;
        if (res <= cfg.tol) break;
        matvec(p, Ap);
        const double alpha = rz / dot_product(p, Ap);
        x += alpha * p;
        r -= alpha * Ap;
        for (int j = 1; j + 1 < s.ny; ++j)
            for (int i = 1; i + 1 < s.nx; ++i) z.at(i, j) = r.at(i, j) / diag.at(i, j);
        const double rz_new = dot_product(r, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        ScalarField pn = z;
        pn += beta * p;
        p = pn;
    }
    if (res > cfg.tol)
        throw PdeError(std::string(what) + ": CG did not converge (residual " +
                           std::to_string(res) + " after " + std::to_string(it) + " iterations)",
                       res, it);
    if (stats) *stats = {it, res};
    return x;
}

// Boundary contributions of Dirichlet data folded into the right-hand side.
void add_boundary_terms(const Stencil& st, const ScalarField& g, ScalarField& rhs) {
    const GridSpec& s = st.spec;
    const double ihx2 = 1.0 / (s.hx() * s.hx());
    const double ihy2 = 1.0 / (s.hy() * s.hy());
    for (int j = 1; j + 1 < s.ny; ++j)
        for (int i = 1; i + 1 < s.nx; ++i) {
            double add = 0.0;
            if (i == 1) add += ihx2 * st.edge_x(0, j) * g.at(0, j);
            if (i == s.nx - 2) add += ihx2 * st.edge_x(i, j) * g.at(s.nx - 1, j);
            if (j == 1) add += ihy2 * st.edge_y(i, 0) * g.at(i, 0);
            if (j == s.ny - 2) add += ihy2 * st.edge_y(i, j) * g.at(i, s.ny - 1);
            rhs.at(i, j) += add;
        }
}

ScalarField with_boundary(const GridSpec& s, const ScalarField& interior, const ScalarField& g) {
    ScalarField u = interior;
    for (int i = 0; i < s.nx; ++i) {
        u.at(i, 0) = g.at(i, 0);
        u.at(i, s.ny - 1) = g.at(i, s.ny - 1);
    }
    for (int j = 0; j < s.ny; ++j) {
        u.at(0, j) = g.at(0, j);
        u.at(s.nx - 1, j) = g.at(s.nx - 1, j);
    }
    return u;
}

} // namespace

bool is_admissible(const ScalarField& f) {
    const GridSpec& s = f.spec();
    for (int j = 0; j < s.ny; ++j)
        for (int i = 0; i < s.nx; ++i)
            if (!s.node_in_region(i, j, Region::OmegaPrime) && f.at(i, j) != 0.0)
                return false;
    return true;
}

ScalarField solve_conductivity(const ConductivityProblem& p, const SolverConfig& cfg,
                               SolveStats* stats) {
    require_same_spec(p.sigma.spec(), p.bc.trace.spec(), "solve_conductivity");
    Stencil st = build_stencil(p.sigma, nullptr);
    ScalarField rhs(p.sigma.spec());
    add_boundary_terms(st, p.bc.trace, rhs);
    ScalarField u = cg_interior(st, rhs, cfg, stats, "solve_conductivity");
    return with_boundary(p.sigma.spec(), u, p.bc.trace);
}

ScalarField solve_diffusion(const DiffusionProblem& p, const SolverConfig& cfg,
                            SolveStats* stats) {
    require_same_spec(p.sigma.spec(), p.gamma.spec(), "solve_diffusion");
    require_same_spec(p.sigma.spec(), p.bc.trace.spec(), "solve_diffusion");
    Stencil st = build_stencil(p.sigma, &p.gamma);
    ScalarField rhs(p.sigma.spec());
    add_boundary_terms(st, p.bc.trace, rhs);
    ScalarField u = cg_interior(st, rhs, cfg, stats, "solve_diffusion");
    return with_boundary(p.sigma.spec(), u, p.bc.trace);
}

ScalarField solve_linearized(const ScalarField& sigma0, const ScalarField& u0,
                             const ScalarField& rho, const SolverConfig& cfg,
                             SolveStats* stats) {
    Stencil st = build_stencil(sigma0, nullptr);
    ScalarField rhs = divergence_form_rhs(sigma0, u0, rho);
    return cg_interior(st, rhs, cfg, stats, "solve_linearized");
}

ScalarField solve_linearized_qpat(const ScalarField& sigma0, const ScalarField& gamma0,
                                  const ScalarField& u0, const ScalarField& rho,
                                  const ScalarField& nu, const SolverConfig& cfg,
                                  SolveStats* stats) {
    Stencil st = build_stencil(sigma0, &gamma0);
    ScalarField rhs = divergence_form_rhs(sigma0, u0, rho);
    const GridSpec& s = sigma0.spec();
    for (int j = 1; j + 1 < s.ny; ++j)
        for (int i = 1; i + 1 < s.nx; ++i)
            rhs.at(i, j) -= nu.at(i, j) * std::exp(gamma0.at(i, j)) * u0.at(i, j);
    return cg_interior(st, rhs, cfg, stats, "solve_linearized_qpat");
}

ScalarField solve_dirichlet0(const ScalarField& sigma, const ScalarField* gamma,
                             const ScalarField& rhs, const SolverConfig& cfg,
                             SolveStats* stats) {
    require_same_spec(sigma.spec(), rhs.spec(), "solve_dirichlet0");
    Stencil st = build_stencil(sigma, gamma);
    const GridSpec& s = sigma.spec();
    ScalarField b(s);
    for (int j = 1; j + 1 < s.ny; ++j)
        for (int i = 1; i + 1 < s.nx; ++i) b.at(i, j) = rhs.at(i, j);
    return cg_interior(st, b, cfg, stats, "solve_dirichlet0");
}

ScalarField apply_operator(const ScalarField& sigma, const ScalarField& u,
                           const ScalarField* gamma) {
    require_same_spec(sigma.spec(), u.spec(), "apply_operator");
    Stencil st = build_stencil(sigma, gamma);
    const GridSpec& s = sigma.spec();
    ScalarField out(s);
    for (int j = 1; j + 1 < s.ny; ++j)
        for (int i = 1; i + 1 < s.nx; ++i) out.at(i, j) = apply_at(st, u, i, j);
    return out;
}

ScalarField divergence_form_rhs(const ScalarField& sigma0, const ScalarField& u0,
                                const ScalarField& rho) {
    require_same_spec(sigma0.spec(), u0.spec(), "divergence_form_rhs");
    require_same_spec(sigma0.spec(), rho.spec(), "divergence_form_rhs");
    const GridSpec& s = sigma0.spec();
    const double ihx = 1.0 / s.hx(), ihy = 1.0 / s.hy();
    ScalarField out(s);
    auto flux_x = [&](int i, int j) {
        return 0.5 * (rho.at(i, j) + rho.at(i + 1, j)) *
               std::exp(0.5 * (sigma0.at(i, j) + sigma0.at(i + 1, j))) *
               (u0.at(i + 1, j) - u0.at(i, j)) * ihx;
    };
    auto flux_y = [&](int i, int j) {
        return 0.5 * (rho.at(i, j) + rho.at(i, j + 1)) *
               std::exp(0.5 * (sigma0.at(i, j) + sigma0.at(i, j + 1))) *
               (u0.at(i, j + 1) - u0.at(i, j)) * ihy;
    };
    for (int j = 1; j + 1 < s.ny; ++j)
        for (int i = 1; i + 1 < s.nx; ++i)
            out.at(i, j) = (flux_x(i, j) - flux_x(i - 1, j)) * ihx +
                           (flux_y(i, j) - flux_y(i, j - 1)) * ihy;
    return out;
}

ScalarField divergence_form_rhs_transpose(const ScalarField& sigma0, const ScalarField& u0,
                                          const ScalarField& b) {
    require_same_spec(sigma0.spec(), u0.spec(), "divergence_form_rhs_transpose");
    require_same_spec(sigma0.spec(), b.spec(), "divergence_form_rhs_transpose");
    const GridSpec& s = sigma0.spec();
    const double ihx = 1.0 / s.hx(), ihy = 1.0 / s.hy();
    ScalarField out(s);
    auto interior = [&](int i, int j) {
        return (i > 0 && j > 0 && i < s.nx - 1 && j < s.ny - 1) ? b.at(i, j) : 0.0;
    };
    // Each edge flux feeds two divergence rows with opposite signs; scatter the
    // same weights back onto the endpoint rho nodes.
    for (int j = 0; j < s.ny; ++j)
        for (int i = 0; i + 1 < s.nx; ++i) {
            const double c = std::exp(0.5 * (sigma0.at(i, j) + sigma0.at(i + 1, j))) *
                             (u0.at(i + 1, j) - u0.at(i, j)) * ihx;
            const double w = 0.5 * c * (interior(i, j) - interior(i + 1, j)) * ihx;
            out.at(i, j) += w;
            out.at(i + 1, j) += w;
        }
    for (int j = 0; j + 1 < s.ny; ++j)
        for (int i = 0; i < s.nx; ++i) {
            const double c = std::exp(0.5 * (sigma0.at(i, j) + sigma0.at(i, j + 1))) *
                             (u0.at(i, j + 1) - u0.at(i, j)) * ihy;
            const double w = 0.5 * c * (interior(i, j) - interior(i, j + 1)) * ihy;
            out.at(i, j) += w;
            out.at(i, j + 1) += w;
        }
    return out;
}

} // namespace idlab
