#pragma once

// Principal symbols sampled over (grid node) x (direction circle) and the
// ellipticity scans that decide whether a parametrix can be built.
//
// Symbols are stored at |xi| = 1 and extended by their declared homogeneity
// (scalar order, or Douglis-Nirenberg row/column orders) at quantization time.

#include <complex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "idlab/functionals.hpp"
#include "idlab/grid.hpp"

namespace idlab {

struct DirectionGrid {
    int n = 0;

    static DirectionGrid make(int n = 64) {
        if (n < 16 || n % 2 != 0)
            throw GridError("DirectionGrid: need n >= 16 and even");
        return DirectionGrid{n};
    }
    double angle(int k) const { return 2.0 * M_PI * k / n; }
    double ux(int k) const { return std::cos(angle(k)); }
    double uy(int k) const { return std::sin(angle(k)); }
};

struct DnOrders {
    std::vector<int> s; // row orders
    std::vector<int> t; // column orders
};

class SymbolField {
public:
    using cplx = std::complex<double>;

    SymbolField() = default;
    SymbolField(const GridSpec& spec, const DirectionGrid& dirs, int order,
                int rows = 1, int cols = 1, std::optional<DnOrders> dn = std::nullopt)
        : spec_(spec), dirs_(dirs), order_(order), rows_(rows), cols_(cols),
          dn_(std::move(dn)),
          v_(static_cast<size_t>(spec.node_count()) * dirs.n * rows * cols, cplx{0.0, 0.0}) {}

    const GridSpec& spec() const { return spec_; }
    const DirectionGrid& directions() const { return dirs_; }
    int order() const { return order_; }
    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool is_scalar() const { return rows_ == 1 && cols_ == 1; }
    const std::optional<DnOrders>& dn_orders() const { return dn_; }

    cplx& at(int node, int dir, int r = 0, int c = 0) {
        return v_[((static_cast<size_t>(node) * dirs_.n + dir) * rows_ + r) * cols_ + c];
    }
    cplx at(int node, int dir, int r = 0, int c = 0) const {
        return v_[((static_cast<size_t>(node) * dirs_.n + dir) * rows_ + r) * cols_ + c];
    }
    cplx& at(int i, int j, int dir, int r, int c) {
        return at(j * spec_.nx + i, dir, r, c);
    }
    cplx at(int i, int j, int dir, int r, int c) const {
        return at(j * spec_.nx + i, dir, r, c);
    }

    const std::vector<cplx>& values() const { return v_; }

private:
    GridSpec spec_;
    DirectionGrid dirs_;
    int order_ = 0;
    int rows_ = 1, cols_ = 1;
    std::optional<DnOrders> dn_;
    std::vector<cplx> v_;
};

/// chi1^2 e^{sigma0} |grad u0|^p (1 - p cos^2 theta), theta measured from grad u0.
SymbolField symbol_power(const ScalarField& sigma0, const ScalarField& u0, double p,
                         const ScalarField& chi1);

/// Cross-measurement symbol; for p < 2 the |cos theta|^(p/2-1) factor is
/// clamped below |cos theta| = kCrossAngleClamp.
SymbolField symbol_cross(const ScalarField& sigma0, const ScalarField& u01,
                         const ScalarField& u02, double p, const ScalarField& chi1);

inline constexpr double kCrossAngleClamp = 1e-3;

/// chi1^2 (dF/dy - dF/dw |grad u0| cos^2 theta) at (sigma0, u0, |grad u0|).
SymbolField symbol_general(const GeneralFunctional& G, const ScalarField& sigma0,
                           const ScalarField& u0, const ScalarField& chi1);

/// Stacked 2n x 2 matrix symbol at |xi| = 1, rows (i theta.grad u, u) per
/// measurement, DN orders s = (-1,...,-1), t = (0,1); scaled by chi^2.
SymbolField symbol_qpat(const std::vector<std::array<ScalarField, 2>>& u0_pairs,
                        const ScalarField& chi);

/// V_k = u^{(k,1)} grad u^{(k,2)} - u^{(k,2)} grad u^{(k,1)}.
std::vector<VectorField> vector_fields_qpat(const std::vector<std::array<ScalarField, 2>>& u0_pairs);

/// det(V1 | V2) over the grid (requires exactly two pairs).
ScalarField qpat_vector_det(const std::vector<std::array<ScalarField, 2>>& u0_pairs);

struct EllipticityReport {
    enum class Verdict { elliptic, degenerate };
    Verdict verdict = Verdict::degenerate;
    double delta = 0.0;      // min of the scan quantity over region x directions
    double symbol_max = 0.0; // max of the same quantity (sets the threshold scale)
    double threshold = 0.0;
    int worst_i = -1, worst_j = -1;
    int worst_direction = -1;
    double worst_angle = 0.0; // after parabolic refinement around the grid minimum
    std::vector<double> per_direction_minima;

    bool elliptic() const { return verdict == Verdict::elliptic; }
};

/// Scan quantity: |A| for one scalar symbol, max_i |A_i| for a scalar family,
/// smallest singular value for a matrix symbol (on the unit-frequency
/// representative). Verdict is elliptic iff the minimum over the region and
/// all directions exceeds rel_threshold * symbol_max.
EllipticityReport ellipticity_scan(std::span<const SymbolField> symbols, Region region,
                                   double rel_threshold = 1e-8);
EllipticityReport ellipticity_scan(const SymbolField& symbol, Region region,
                                   double rel_threshold = 1e-8);

std::string report_to_json(const EllipticityReport& r);
void write_direction_csv(const std::string& path, const EllipticityReport& r);

/// Pointwise check |dF/dy| > ||grad u0||_inf |dF/dw| over the whole grid.
struct GeneralConditionReport {
    bool holds = false;
    double margin = 0.0; // min over nodes of |dF/dy| - ||grad u0||_inf |dF/dw|
    int worst_i = -1, worst_j = -1;
};
GeneralConditionReport check_general_condition(const GeneralFunctional& G,
                                               const ScalarField& sigma0,
                                               const ScalarField& u0);

/// Symbol dump: "HSS1" | u32 nx | u32 ny | f64 h | u32 n_dir | u32 rows |
/// u32 cols | (re, im) f64 pairs in storage order.
void write_hss1(const std::string& path, const SymbolField& sym);

} // namespace idlab
