#pragma once

// Discrete geometry on the unit square: nested regions, grid-sampled fields,
// smooth cutoffs, difference operators and the FFT wavenumber lattice.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace idlab {

// Nested scan regions: Omega' = [m',1-m']^2 inside Omega'' = [m'',1-m'']^2
// inside Omega = [0,1]^2.
enum class Region { OmegaPrime, OmegaDoublePrime };

struct GridError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Node layout of the unit square, vertex-centered: x_i = i*hx, i = 0..nx-1.
struct GridSpec {
    int nx = 0;
    int ny = 0;
    double margin_prime = 0.25;        // m'  (Omega')
    double margin_double_prime = 0.15; // m'' (Omega'')

    static GridSpec make(int nx, int ny,
                         double m_prime = 0.25, double m_double_prime = 0.15);

    double hx() const { return 1.0 / (nx - 1); }
    double hy() const { return 1.0 / (ny - 1); }
    double h() const { return hx(); }

    double x(int i) const { return i * hx(); }
    double y(int j) const { return j * hy(); }

    int node_count() const { return nx * ny; }

    double margin(Region r) const {
        return r == Region::OmegaPrime ? margin_prime : margin_double_prime;
    }

    // Max-norm distance to the boundary of [0,1]^2; its level sets are the
    // nested rectangles used throughout.
    double boundary_distance(double px, double py) const {
        return std::min(std::min(px, 1.0 - px), std::min(py, 1.0 - py));
    }

    bool in_region(double px, double py, Region r) const {
        return boundary_distance(px, py) >= margin(r) - 1e-12;
    }
    bool node_in_region(int i, int j, Region r) const {
        return in_region(x(i), y(j), r);
    }

    bool operator==(const GridSpec& o) const {
        return nx == o.nx && ny == o.ny &&
               margin_prime == o.margin_prime &&
               margin_double_prime == o.margin_double_prime;
    }
};

/// Real grid function, row-major over y: values[j*nx + i].
class ScalarField {
public:
    ScalarField() = default;
    explicit ScalarField(const GridSpec& spec)
        : spec_(spec), v_(static_cast<size_t>(spec.nx) * spec.ny, 0.0) {}
    ScalarField(const GridSpec& spec, std::vector<double> values);

    static ScalarField from_function(const GridSpec& spec,
                                     const std::function<double(double, double)>& f);

    const GridSpec& spec() const { return spec_; }
    int nx() const { return spec_.nx; }
    int ny() const { return spec_.ny; }
    size_t size() const { return v_.size(); }

    double& at(int i, int j) { return v_[static_cast<size_t>(j) * spec_.nx + i]; }
    double at(int i, int j) const { return v_[static_cast<size_t>(j) * spec_.nx + i]; }
    double& operator[](size_t k) { return v_[k]; }
    double operator[](size_t k) const { return v_[k]; }

    const std::vector<double>& values() const { return v_; }
    std::vector<double>& values() { return v_; }

    ScalarField& operator+=(const ScalarField& o);
    ScalarField& operator-=(const ScalarField& o);
    ScalarField& operator*=(double a);

    friend ScalarField operator+(ScalarField a, const ScalarField& b) { return a += b; }
    friend ScalarField operator-(ScalarField a, const ScalarField& b) { return a -= b; }
    friend ScalarField operator*(double a, ScalarField f) { return f *= a; }

private:
    GridSpec spec_;
    std::vector<double> v_;
};

ScalarField pointwise_multiply(const ScalarField& a, const ScalarField& b);
void require_same_spec(const GridSpec& a, const GridSpec& b, const char* what);

struct VectorField {
    ScalarField comp_x;
    ScalarField comp_y;

    VectorField() = default;
    explicit VectorField(const GridSpec& spec) : comp_x(spec), comp_y(spec) {}
    const GridSpec& spec() const { return comp_x.spec(); }
};

ScalarField dot(const VectorField& a, const VectorField& b);
ScalarField magnitude(const VectorField& a);

// 6t^5 - 15t^4 + 10t^3 clamped to [0,1]; C^2 at both ends.
double smoothstep_quintic(double t);

/// Smooth plateau cutoff: 1 where boundary distance >= outer, 0 where <= inner,
/// quintic smoothstep in between. Rejects inner >= outer.
ScalarField make_cutoff(const GridSpec& spec, double inner, double outer);

/// chi1 == 1 on a neighborhood of Omega'' and 0 in a boundary collar;
/// chi2 == 1 on a neighborhood of Omega' and supported in Omega''.
/// Transition width shrinks automatically when the margins leave no room.
struct CutoffPair {
    ScalarField chi1;
    ScalarField chi2;
    static CutoffPair standard(const GridSpec& spec, double width = 0.05);
};

/// Central differences in the interior, second-order one-sided at the edges.
VectorField gradient(const ScalarField& u);

// Transposes of the discrete d/dx, d/dy matrices above (for adjoint chains).
ScalarField ddx_transpose(const ScalarField& u);
ScalarField ddy_transpose(const ScalarField& u);

/// Multiplication by the node indicator of the region (zero outside).
ScalarField restrict_to(const ScalarField& u, Region r);

// Norms with the h^2 cell weight; *_region versions restrict first.
double l2_norm(const ScalarField& u);
double l2_norm_region(const ScalarField& u, Region r);
double linf_norm(const ScalarField& u);
double dot_product(const ScalarField& a, const ScalarField& b);

/// FFT wavenumber lattice of the grid. The nodes 0..nx-2 sample one period of
/// the unit torus (node nx-1 duplicates node 0); wavenumbers are xi = 2*pi*k
/// with k in the signed FFT index range. All symbol machinery excludes xi = 0.
struct FrequencyLattice {
    int mx = 0; // nx - 1
    int my = 0; // ny - 1

    static FrequencyLattice of(const GridSpec& spec) {
        return FrequencyLattice{spec.nx - 1, spec.ny - 1};
    }

    int signed_index(int a, int m) const { return a <= m / 2 ? a : a - m; }
    double xi_x(int a) const { return 2.0 * M_PI * signed_index(a, mx); }
    double xi_y(int b) const { return 2.0 * M_PI * signed_index(b, my); }
    double magnitude(int a, int b) const { return std::hypot(xi_x(a), xi_y(b)); }
    size_t mode_count() const { return static_cast<size_t>(mx) * my; }
};

} // namespace idlab
