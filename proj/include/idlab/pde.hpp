#pragma once

// Forward and linearized elliptic solves on the vertex grid.
//
// The divergence-form operator -div(e^sigma grad u) is discretized with the
// 5-point scheme using the edge conductivity exp((sigma_i + sigma_j)/2); the
// diffusion variant adds the nodal zeroth-order term e^gamma u. Both systems
// are symmetric positive definite and solved by Jacobi-preconditioned CG.
// Linearized right-hand sides are assembled in conservative flux form, which
// makes the linearized solve the exact derivative of the discrete forward map.

#include <functional>
#include <stdexcept>

#include "idlab/grid.hpp"

namespace idlab {

struct DirichletBC {
    ScalarField trace; // only boundary nodes are consulted

    static DirichletBC from_function(const GridSpec& spec,
                                     const std::function<double(double, double)>& f) {
        return DirichletBC{ScalarField::from_function(spec, f)};
    }
};

struct ConductivityProblem {
    ScalarField sigma; // log-conductivity
    DirichletBC bc;
};

struct DiffusionProblem {
    ScalarField sigma; // log-diffusion
    ScalarField gamma; // log-attenuation
    DirichletBC bc;
};

// Admissible coefficients vanish outside Omega'. Experiment pipelines check
// this; unit tests are free to construct anything.
bool is_admissible(const ScalarField& f);

struct SolverConfig {
    double tol = 1e-10; // relative residual
    int max_iters = 0;  // 0 -> 10 * nx * ny

    void validate() const {
        if (!(tol > 0.0 && tol <= 1e-4))
            throw std::invalid_argument("SolverConfig: tol must lie in (0, 1e-4]");
        if (max_iters < 0)
            throw std::invalid_argument("SolverConfig: max_iters must be >= 0");
    }
};

struct SolveStats {
    int iterations = 0;
    double final_residual = 0.0;
};

struct PdeError : std::runtime_error {
    double residual;
    int iterations;
    PdeError(const std::string& msg, double r, int it)
        : std::runtime_error(msg), residual(r), iterations(it) {}
};

ScalarField solve_conductivity(const ConductivityProblem& p, const SolverConfig& cfg = {},
                               SolveStats* stats = nullptr);

ScalarField solve_diffusion(const DiffusionProblem& p, const SolverConfig& cfg = {},
                            SolveStats* stats = nullptr);

/// Solution v of L_{sigma0} v = div(rho e^{sigma0} grad u0), v = 0 on the boundary.
ScalarField solve_linearized(const ScalarField& sigma0, const ScalarField& u0,
                             const ScalarField& rho, const SolverConfig& cfg = {},
                             SolveStats* stats = nullptr);

/// QPAT linearization: L_{sigma0,gamma0} v = div(rho e^{sigma0} grad u0) - nu e^{gamma0} u0.
ScalarField solve_linearized_qpat(const ScalarField& sigma0, const ScalarField& gamma0,
                                  const ScalarField& u0, const ScalarField& rho,
                                  const ScalarField& nu, const SolverConfig& cfg = {},
                                  SolveStats* stats = nullptr);

/// Solve L u = rhs with zero Dirichlet data (rhs read at interior nodes only);
/// gamma adds the zeroth-order term. The solve is self-adjoint, which the
/// adjoint chains in recon rely on.
ScalarField solve_dirichlet0(const ScalarField& sigma, const ScalarField* gamma,
                             const ScalarField& rhs, const SolverConfig& cfg = {},
                             SolveStats* stats = nullptr);

/// L_sigma u (+ e^gamma u when gamma given) at interior nodes, zero on boundary
/// rows; consumes u's own boundary values. Exposed for adjoint checks.
ScalarField apply_operator(const ScalarField& sigma, const ScalarField& u,
                           const ScalarField* gamma = nullptr);

/// Conservative flux-form assembly of div(rho e^{sigma0} grad u0), interior nodes.
ScalarField divergence_form_rhs(const ScalarField& sigma0, const ScalarField& u0,
                                const ScalarField& rho);

/// Transpose of the map rho -> divergence_form_rhs(sigma0, u0, rho).
ScalarField divergence_form_rhs_transpose(const ScalarField& sigma0, const ScalarField& u0,
                                          const ScalarField& b);

} // namespace idlab
