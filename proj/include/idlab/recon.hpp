#pragma once

// Linearized reconstruction experiments: synthesize internal-data
// perturbations, invert them through the parametrix and through (optionally
// preconditioned) CG on the normal equations, and probe the singular spectrum
// of the discrete derivative.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "idlab/functionals.hpp"
#include "idlab/linear_map.hpp"
#include "idlab/parametrix.hpp"

namespace idlab {

struct Phantom {
    ScalarField rho_true;
    std::optional<ScalarField> nu_true;
    std::string label;
};

/// Smooth bump of the given amplitude, windowed to vanish outside Omega'.
ScalarField smooth_phantom(const GridSpec& spec, double amplitude,
                           double cx = 0.45, double cy = 0.55, double width = 0.08);

/// Windowed oscillation at lattice frequency k (for frequency sweeps).
ScalarField modulated_phantom(const GridSpec& spec, double amplitude, int k);

/// Background log-coefficients; "constant" is identically zero, "bump" is a
/// windowed Gaussian supported in Omega' (admissible and smooth).
ScalarField make_background(const GridSpec& spec, const std::string& name,
                            double amplitude);

// --- exact-derivative maps ---------------------------------------------------

enum class OutputCutoff {
    none,        // raw data fields, as measured
    omega_prime, // restrict to Omega' (the operator T dF used by inversions)
    chi1         // multiply by chi1 (the pseudodifferential extension A)
};

/// Derivative of the power-density family at a fixed background. Input is one
/// coefficient field (masked to Omega'); outputs follow the family layout.
class PowerFamilyDerivative : public LinearDataMap {
public:
    PowerFamilyDerivative(ScalarField sigma0, std::vector<ScalarField> u0, double p,
                          SolverConfig cfg, OutputCutoff cutoff, ScalarField chi1);

    int input_components() const override { return 1; }
    int output_components() const override;
    std::vector<ScalarField> apply(const std::vector<ScalarField>& in) const override;
    std::vector<ScalarField> apply_adjoint(const std::vector<ScalarField>& out) const override;

    bool has_cross() const { return u0_.size() >= 2 && p_ != 1.0; }
    const ScalarField& cross_weight() const { return phi_; }

private:
    ScalarField sigma0_;
    std::vector<ScalarField> u0_;
    double p_;
    SolverConfig cfg_;
    OutputCutoff cutoff_;
    ScalarField chi1_;
    ScalarField phi_; // fixed cross-functional weight (ones when p = 2)
    ScalarField cut(const ScalarField& f) const;
    ScalarField cut_adjoint(const ScalarField& f) const;
};

/// Derivative of a general functional F(sigma, u, |grad u|).
class GeneralDerivative : public LinearDataMap {
public:
    GeneralDerivative(GeneralFunctional G, ScalarField sigma0, ScalarField u0,
                      SolverConfig cfg, OutputCutoff cutoff, ScalarField chi1);
    int input_components() const override { return 1; }
    int output_components() const override { return 1; }
    std::vector<ScalarField> apply(const std::vector<ScalarField>& in) const override;
    std::vector<ScalarField> apply_adjoint(const std::vector<ScalarField>& out) const override;

private:
    GeneralFunctional G_;
    ScalarField sigma0_, u0_;
    SolverConfig cfg_;
    OutputCutoff cutoff_;
    ScalarField chi1_;
};

/// Derivative of the QPAT data map; input components are (rho, nu).
class QpatDerivative : public LinearDataMap {
public:
    QpatDerivative(ScalarField sigma0, ScalarField gamma0, std::vector<ScalarField> u0,
                   SolverConfig cfg, OutputCutoff cutoff, ScalarField chi1);
    int input_components() const override { return 2; }
    int output_components() const override { return static_cast<int>(u0_.size()); }
    std::vector<ScalarField> apply(const std::vector<ScalarField>& in) const override;
    std::vector<ScalarField> apply_adjoint(const std::vector<ScalarField>& out) const override;

private:
    ScalarField sigma0_, gamma0_;
    std::vector<ScalarField> u0_;
    SolverConfig cfg_;
    OutputCutoff cutoff_;
    ScalarField chi1_;
};

/// The smoothing baseline rho -> restrict(v(rho)).
class SolutionPerturbationMap : public LinearDataMap {
public:
    SolutionPerturbationMap(ScalarField sigma0, ScalarField u0, SolverConfig cfg);
    int input_components() const override { return 1; }
    int output_components() const override { return 1; }
    std::vector<ScalarField> apply(const std::vector<ScalarField>& in) const override;
    std::vector<ScalarField> apply_adjoint(const std::vector<ScalarField>& out) const override;

private:
    ScalarField sigma0_, u0_;
    SolverConfig cfg_;
};

/// A quantized principal symbol presented through the same contract.
class QuantizedSymbolMap : public LinearDataMap {
public:
    explicit QuantizedSymbolMap(QuantizedOperator op) : op_(std::move(op)) {}
    int input_components() const override { return 1; }
    int output_components() const override { return 1; }
    std::vector<ScalarField> apply(const std::vector<ScalarField>& in) const override {
        return {op_.apply(in[0])};
    }
    std::vector<ScalarField> apply_adjoint(const std::vector<ScalarField>& out) const override {
        return {op_.apply_transpose(out[0])};
    }

private:
    QuantizedOperator op_;
};

// --- data synthesis -----------------------------------------------------------

struct SynthesisConfig {
    bool nonlinear = false; // nonlinear difference quotient instead of exact dF
    double eps = 1e-2;      // scale of the nonlinear perturbation
    double noise = 0.0;     // relative additive Gaussian noise
    uint64_t seed = 0;
};

/// Data perturbation for a phantom: exact-linear dF(rho) or the nonlinear
/// difference (F(sigma0 + eps rho) - F(sigma0)) / eps, plus seeded noise.
DataVector synthesize_data(const LinearDataMap& dF, const ForwardMap* nonlinear_forward,
                           const ScalarField& sigma0, const Phantom& phantom,
                           const SynthesisConfig& cfg);

/// Two-coefficient variant for the diffusion data map.
DataVector synthesize_data(const LinearDataMap& dF, const ForwardMap2* nonlinear_forward,
                           const ScalarField& sigma0, const ScalarField& gamma0,
                           const Phantom& phantom, const SynthesisConfig& cfg);

// --- inversion ---------------------------------------------------------------

/// One-pass parametrix inversions. Data fields are premultiplied by chi1
/// before quantized application (the pseudodifferential operator acts on the
/// cutoff data).
ScalarField invert_parametrix_scalar(const DataVector& data, const QuantizedOperator& Q,
                                     const ScalarField& chi1);

ScalarField invert_parametrix_family(const DataVector& data,
                                     const std::vector<QuantizedOperator>& psi_ops,
                                     const QuantizedOperator& Q_psi,
                                     const ScalarField& chi1);

std::pair<ScalarField, ScalarField> invert_parametrix_qpat(const DataVector& data,
                                                           const QuantizedOperator& B_op,
                                                           const ScalarField& chi1);

struct KrylovConfig {
    double tol = 1e-8; // on the normal-equation residual, relative
    int max_iters = 2000;
};

struct ReconstructionReport {
    double rel_error_rho = 0.0; // relative L2(Omega') against the phantom
    double rel_error_nu = 0.0;
    int iterations = 0;
    int iterations_unpreconditioned = 0; // 0 when not measured
    double final_residual = 0.0;         // normal-equation residual, relative
    std::vector<double> residual_history; // least-squares residual per iteration
    double wall_seconds = 0.0;
};

using Preconditioner = std::function<std::vector<ScalarField>(const std::vector<ScalarField>&)>;

/// Symmetric positive preconditioner (R Q E)(R Q E)^T from a quantized
/// parametrix, acting on Omega'-restricted coefficient fields.
Preconditioner parametrix_preconditioner(std::shared_ptr<const QuantizedOperator> Q);

/// CG on the normal equations dF* dF x = dF* data over Omega'-supported
/// coefficients. The recorded history is the least-squares residual, which is
/// monotone for this iteration.
std::vector<ScalarField> invert_krylov(const LinearDataMap& dF, const DataVector& data,
                                       const Preconditioner* precond, const KrylovConfig& cfg,
                                       ReconstructionReport* report);

// --- spectrum ----------------------------------------------------------------

struct SpectrumReport {
    std::vector<double> top;    // largest k singular values, descending
    std::vector<double> bottom; // smallest k, ascending
    std::vector<double> all;    // full dense spectrum when assembled, descending
    int near_kernel_count = 0;  // sigma_i < 1e-6 * sigma_1
    int input_dim = 0;
};

inline constexpr double kNearKernelRel = 1e-6;
inline constexpr int kDenseSpectrumMaxGrid = 48;

/// Dense assembly + SVD on coarse grids (<= 48 per side); randomized subspace
/// iteration for the top k otherwise. Asking for the bottom of the spectrum
/// on a finer grid is an error.
SpectrumReport estimate_spectrum(const LinearDataMap& dF, const GridSpec& spec, int k,
                                 int probes = 8, uint64_t seed = 1, bool want_bottom = true);

// --- experiment orchestration --------------------------------------------------

struct ExperimentConfig {
    int grid = 48;
    double margin_prime = 0.25;
    double margin_double_prime = 0.15;
    std::string background = "constant"; // constant | bump
    double background_amplitude = 0.2;
    std::string boundary_set = "x1"; // x1 | x1x2 | exp4
    std::string mode = "power";      // power | qpat
    double p = 0.5;
    std::string family = "single"; // single | triple
    double phantom_amplitude = 0.3;
    bool nonlinear_synthesis = false;
    double eps = 1e-2;
    double noise = 0.0;
    uint64_t seed = 1;
    SolverConfig solver;
    KrylovConfig krylov;
    bool precondition = true;
    bool spectrum = false;
    int spectrum_k = 12;
    std::string out_dir = "runs/experiment";

    void validate() const;
};

struct ExperimentResult {
    EllipticityReport scan;
    bool parametrix_built = false;
    ReconstructionReport parametrix;
    ReconstructionReport krylov;
    std::optional<SpectrumReport> spectrum;
    std::optional<SpectrumReport> baseline_spectrum;
    std::string report_path;
};

/// Full pipeline: background solve, data synthesis, symbol scan, parametrix
/// build, both inversions, optional spectrum; writes the run directory.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Named bundled configurations: p05_smooth, p2_single, qpat_2pairs.
ExperimentConfig bundled_config(const std::string& name);

} // namespace idlab
