#pragma once

// Internal-data functionals of the conductivity / diffusion solutions and
// their exact linearizations, plus the finite-difference oracle that checks
// differentiability by full nonlinear re-solves.
//
// Perturbations are premultiplied by the Omega' indicator before use; the
// admissible class has no support outside Omega'.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "idlab/grid.hpp"
#include "idlab/pde.hpp"

namespace idlab {

// Guards the |grad u0|^(p-2) and 1/|grad u0| singularities. Relative to the
// max gradient magnitude over the grid.
inline constexpr double kGradientFloorRel = 1e-6;

struct GradientFloorError : std::runtime_error {
    int i, j;
    double value;
    GradientFloorError(const std::string& msg, int i_, int j_, double v)
        : std::runtime_error(msg), i(i_), j(j_), value(v) {}
};

/// Pointwise functional F(y, z, w) of (sigma, u, |grad u|) with its partials.
/// Callers own the smoothness and growth assumptions.
struct GeneralFunctional {
    std::function<double(double, double, double)> f;
    std::function<double(double, double, double)> df_dy;
    std::function<double(double, double, double)> df_dz;
    std::function<double(double, double, double)> df_dw;
};

struct DataVector {
    std::vector<std::string> labels;
    std::vector<ScalarField> fields;

    size_t components() const { return fields.size(); }
    DataVector& operator+=(const DataVector& o);
    DataVector& operator-=(const DataVector& o);
    DataVector& operator*=(double a);
};

double data_l2_norm(const DataVector& d);
/// || a - b ||_2 / || b ||_2 over all components.
double data_rel_l2_error(const DataVector& a, const DataVector& b);

// --- pointwise evaluations ------------------------------------------------

/// e^sigma |grad u|^p. For p < 1, *degenerate_flag reports a gradient-floor
/// violation on Omega'' (the value is still returned).
ScalarField eval_power(const ScalarField& sigma, const ScalarField& u, double p,
                       bool* degenerate_flag = nullptr);

/// e^sigma |grad u1 . grad u2|^(p/2).
ScalarField eval_cross(const ScalarField& sigma, const ScalarField& u1,
                       const ScalarField& u2, double p);

/// e^gamma u (unit Grueneisen factor).
ScalarField eval_qpat(const ScalarField& gamma, const ScalarField& u);

// --- exact linearizations ---------------------------------------------------

ScalarField df_power(const ScalarField& sigma0, const ScalarField& u0, double p,
                     const ScalarField& rho, const SolverConfig& cfg = {});

/// The smooth weight restricting the cross functional to the region where
/// |grad u1 . grad u2| is safely away from zero (identically 1 for p = 2).
ScalarField cross_cutoff(const ScalarField& u01, const ScalarField& u02, double p,
                         bool* alpha_region_empty = nullptr);

ScalarField df_cross(const ScalarField& sigma0, const ScalarField& u01,
                     const ScalarField& u02, double p, const ScalarField& rho,
                     const SolverConfig& cfg = {}, bool* alpha_region_empty = nullptr);

ScalarField df_general(const GeneralFunctional& G, const ScalarField& sigma0,
                       const ScalarField& u0, const ScalarField& rho,
                       const SolverConfig& cfg = {});

DataVector df_qpat(const ScalarField& sigma0, const ScalarField& gamma0,
                   const std::vector<ScalarField>& u0_list, const ScalarField& rho,
                   const ScalarField& nu, const SolverConfig& cfg = {});

// --- forward models ---------------------------------------------------------

/// The power-density measurement set for one or two boundary conditions.
/// With two conditions the data is {F11, F22} plus the cross component F12
/// unless p == 1; for p < 2 the cross component carries the fixed weight
/// cross_weight (frozen at the background when linearizing).
struct PowerFamilyModel {
    std::vector<DirichletBC> bcs;
    double p = 1.0;
    SolverConfig cfg;
    std::optional<ScalarField> cross_weight;

    bool has_cross() const { return bcs.size() >= 2 && p != 1.0; }
    DataVector evaluate(const ScalarField& sigma) const;
};

struct QpatModel {
    std::vector<DirichletBC> bcs; // 2 per measurement pair, pair-major
    SolverConfig cfg;
    DataVector evaluate(const ScalarField& sigma, const ScalarField& gamma) const;
};

/// General-functional forward map F(sigma, u(sigma), |grad u(sigma)|).
struct GeneralModel {
    GeneralFunctional G;
    DirichletBC bc;
    SolverConfig cfg;
    DataVector evaluate(const ScalarField& sigma) const;
};

// --- finite-difference oracle -----------------------------------------------

using ForwardMap = std::function<DataVector(const ScalarField&)>;
using ForwardMap2 = std::function<DataVector(const ScalarField&, const ScalarField&)>;

/// (F(sigma0 + eps*rho) - F(sigma0)) / eps by nonlinear re-solve; eps in (0, 0.1].
DataVector fd_oracle(const ForwardMap& F, const ScalarField& sigma0,
                     const ScalarField& rho, double eps);

DataVector fd_oracle(const ForwardMap2& F, const ScalarField& sigma0,
                     const ScalarField& gamma0, const ScalarField& rho,
                     const ScalarField& nu, double eps);

} // namespace idlab
