#pragma once

// Kohn-Nirenberg quantization on the grid and the parametrix constructions:
// the scalar inverse symbol Q = chi2 / A0, the weighted combination
// Psi = sum psi_ij A_ij with an explicit partition, and the block
// Douglis-Nirenberg left parametrix B.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "idlab/linear_map.hpp"
#include "idlab/symbols.hpp"

namespace idlab {

struct ParametrixError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Refusal to build against a degenerate symbol; carries the scan evidence.
struct EllipticityError : ParametrixError {
    EllipticityReport report;
    EllipticityError(const std::string& msg, EllipticityReport r)
        : ParametrixError(msg), report(std::move(r)) {}
};

struct QuantizeOptions {
    enum class DirInterp { nearest, linear };
    // grid_adapted looks the symbol up at the direction of the discrete
    // central-difference wavenumber instead of xi itself, matching what the
    // finite-difference operators actually do at high frequency.
    enum class FreqMap { exact, grid_adapted };

    DirInterp interp = DirInterp::linear;
    FreqMap freq_map = FreqMap::exact;
};

/// a(x, D) f = sum_{xi != 0} a(x, xi/|xi|) |xi|^orders fhat(xi) e^{i x.xi},
/// with fhat the DFT of the periodized core (nodes 0..n-2 per axis). The
/// xi = 0 mode passes through the direction-averaged symbol (dropped for
/// entries of positive homogeneity order).
class QuantizedOperator {
public:
    QuantizedOperator(SymbolField sym, QuantizeOptions opt = {});

    int rows() const { return sym_.rows(); }
    int cols() const { return sym_.cols(); }
    const GridSpec& spec() const { return sym_.spec(); }

    /// Scalar-symbol apply.
    ScalarField apply(const ScalarField& f) const;
    /// Transpose of apply with respect to the plain nodal inner product.
    ScalarField apply_transpose(const ScalarField& f) const;

    /// Matrix apply: `in` has cols() fields, result has rows() fields.
    std::vector<ScalarField> apply_vector(const std::vector<ScalarField>& in) const;

private:
    SymbolField sym_;
    QuantizeOptions opt_;
    // Per lattice mode: interpolation pair into the direction grid and the
    // |xi|^(s_r + t_c) factors per matrix entry.
    std::vector<int> dir0_, dir1_;
    std::vector<double> dirw_;
    std::vector<double> factors_; // [mode][entry]
    std::vector<bool> nyquist_;
    std::vector<std::complex<double>> phase_x_, phase_y_; // e^{2 pi i a i / m}

    std::complex<double> entry(int node, int mode, int r, int c) const;
    void spectral_sums(const std::vector<ScalarField>& in,
                       std::vector<std::vector<std::complex<double>>>& fhat) const;
};

QuantizedOperator quantize(const SymbolField& sym, QuantizeOptions opt = {});

/// Q(x, theta) = chi2(x) / A0(x, theta). Refuses degenerate symbols; for
/// elliptic input the floor must never trigger where chi2 > 0.
SymbolField build_q_scalar(const SymbolField& A0, const ScalarField& chi2,
                           double delta_floor = 0.0);

struct Partition {
    std::vector<std::string> labels;
    std::vector<SymbolField> weights;
};

/// Explicit combination recipe psi_ij = m(|A_ij|/tau) conj(A_ij), giving
/// Psi = sum m |A_ij|^2 bounded below wherever the family is elliptic with
/// margin tau. A12 may be null (it is ignored for p = 1); for p < 2 the
/// cross weight is zeroed wherever phi vanishes. tau <= 0 selects
/// 0.25 * (family max modulus).
std::pair<Partition, SymbolField> build_combination(const SymbolField& A11,
                                                    const SymbolField& A22,
                                                    const SymbolField* A12, double tau,
                                                    double p,
                                                    const ScalarField* phi = nullptr);

/// Block DN left parametrix B = chi2 sum_k w_k A_k^{-1} P_k with smoothstepped
/// block weights from |det A_k|, normalized to sum 1. B A = chi2 I2 at symbol
/// level wherever chi2 > 0.
SymbolField build_dn_parametrix(const SymbolField& stacked, const ScalarField& chi2);

struct ResidualTable {
    std::vector<double> freq;
    std::vector<double> residual;

    /// Least-squares slope of log(residual) against log(freq).
    double fitted_exponent() const;
    void write_csv(const std::string& path) const;
};

struct Probe {
    ScalarField field;
    double freq_magnitude;
};

/// cos(2 pi (kx, ky) . x) under a smooth window supported strictly inside
/// Omega'; the standard probe for composition-residual studies.
Probe windowed_wave(const GridSpec& spec, int kx, int ky);

/// Relative L2(Omega') error of Q(A(probe)) - probe per probe magnitude.
ResidualTable compose_residual(const QuantizedOperator& Q, const LinearDataMap& A,
                               const std::vector<Probe>& probes);

} // namespace idlab
