#include "idlab/grid.hpp"

#include <algorithm>
#include <cmath>

namespace idlab {

GridSpec GridSpec::make(int nx, int ny, double m_prime, double m_double_prime) {
    if (nx < 16 || ny < 16)
        throw GridError("GridSpec: node counts must be >= 16 (got " +
                        std::to_string(nx) + "x" + std::to_string(ny) + ")");
    if (!(0.0 < m_double_prime && m_double_prime < m_prime && m_prime < 0.5))
        throw GridError("GridSpec: margins must satisfy 0 < m'' < m' < 0.5");
    GridSpec s{nx, ny, m_prime, m_double_prime};
    const double h = std::max(s.hx(), s.hy());
    // Each nested boundary pair needs breathing room on the grid.
    if (m_double_prime < 3.0 * h || (m_prime - m_double_prime) < 3.0 * h)
        throw GridError("GridSpec: fewer than 3 grid cells between nested boundaries");
    return s;
}

ScalarField::ScalarField(const GridSpec& spec, std::vector<double> values)
    : spec_(spec), v_(std::move(values)) {
    if (v_.size() != static_cast<size_t>(spec.nx) * spec.ny)
        throw GridError("ScalarField: value count does not match grid");
    for (double x : v_)
        if (!std::isfinite(x)) throw GridError("ScalarField: non-finite value");
}

ScalarField ScalarField::from_function(const GridSpec& spec,
                                       const std::function<double(double, double)>& f) {
    ScalarField out(spec);
    for (int j = 0; j < spec.ny; ++j)
        for (int i = 0; i < spec.nx; ++i)
            out.at(i, j) = f(spec.x(i), spec.y(j));
    return out;
}

void require_same_spec(const GridSpec& a, const GridSpec& b, const char* what) {
    if (!(a == b))
        throw GridError(std::string(what) + ": fields live on different grids");
}

ScalarField& ScalarField::operator+=(const ScalarField& o) {
    require_same_spec(spec_, o.spec_, "operator+");
    for (size_t k = 0; k < v_.size(); ++k) v_[k] += o.v_[k];
    return *this;
}

ScalarField& ScalarField::operator-=(const ScalarField& o) {
    require_same_spec(spec_, o.spec_, "operator-");
    for (size_t k = 0; k < v_.size(); ++k) v_[k] -= o.v_[k];
    return *this;
}

ScalarField& ScalarField::operator*=(double a) {
    for (double& x : v_) x *= a;
    return *this;
}

ScalarField pointwise_multiply(const ScalarField& a, const ScalarField& b) {
    require_same_spec(a.spec(), b.spec(), "pointwise_multiply");
    ScalarField out = a;
    for (size_t k = 0; k < out.size(); ++k) out[k] *= b[k];
    return out;
}

ScalarField dot(const VectorField& a, const VectorField& b) {
    require_same_spec(a.spec(), b.spec(), "dot");
    ScalarField out = pointwise_multiply(a.comp_x, b.comp_x);
    out += pointwise_multiply(a.comp_y, b.comp_y);
    return out;
}

ScalarField magnitude(const VectorField& a) {
    ScalarField out(a.spec());
    for (size_t k = 0; k < out.size(); ++k)
        out[k] = std::hypot(a.comp_x[k], a.comp_y[k]);
    return out;
}

double smoothstep_quintic(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

ScalarField make_cutoff(const GridSpec& spec, double inner, double outer) {
    if (!(0.0 < inner && inner < outer && outer < 0.5))
        throw GridError("make_cutoff: need 0 < inner < outer < 0.5");
    ScalarField out(spec);
    for (int j = 0; j < spec.ny; ++j)
        for (int i = 0; i < spec.nx; ++i) {
            const double d = spec.boundary_distance(spec.x(i), spec.y(j));
            out.at(i, j) = smoothstep_quintic((d - inner) / (outer - inner));
        }
    return out;
}

CutoffPair CutoffPair::standard(const GridSpec& spec, double width) {
    const double mpp = spec.margin_double_prime;
    const double mp = spec.margin_prime;
    // chi1 transitions inside the boundary collar, chi2 between Omega'' and
    // Omega'. Keep both transitions clear of the region boundaries.
    double w = std::min({width, mpp / 2.5, (mp - mpp) / 2.0});
    CutoffPair pair;
    pair.chi1 = make_cutoff(spec, mpp - 2.0 * w, mpp - w);
    pair.chi2 = make_cutoff(spec, mp - 2.0 * w, mp - w);
    return pair;
}

VectorField gradient(const ScalarField& u) {
    const GridSpec& s = u.spec();
    VectorField g(s);
    const double ihx = 1.0 / s.hx(), ihy = 1.0 / s.hy();
    for (int j = 0; j < s.ny; ++j) {
        for (int i = 0; i < s.nx; ++i) {
            double gx, gy;
            if (i == 0)
                gx = (-3.0 * u.at(0, j) + 4.0 * u.at(1, j) - u.at(2, j)) * 0.5 * ihx;
            else if (i == s.nx - 1)
                gx = (3.0 * u.at(i, j) - 4.0 * u.at(i - 1, j) + u.at(i - 2, j)) * 0.5 * ihx;
            else
                gx = (u.at(i + 1, j) - u.at(i - 1, j)) * 0.5 * ihx;
            if (j == 0)
                gy = (-3.0 * u.at(i, 0) + 4.0 * u.at(i, 1) - u.at(i, 2)) * 0.5 * ihy;
            else if (j == s.ny - 1)
                gy = (3.0 * u.at(i, j) - 4.0 * u.at(i, j - 1) + u.at(i, j - 2)) * 0.5 * ihy;
            else
                gy = (u.at(i, j + 1) - u.at(i, j - 1)) * 0.5 * ihy;
            g.comp_x.at(i, j) = gx;
            g.comp_y.at(i, j) = gy;
        }
    }
    return g;
}

// Exact transposes of the stencils in gradient(); kept in scatter form so the
// adjoint identity <Du, v> = <u, D^T v> holds to machine precision.
ScalarField ddx_transpose(const ScalarField& u) {
    const GridSpec& s = u.spec();
    ScalarField out(s);
    const double c = 0.5 / s.hx();
    for (int j = 0; j < s.ny; ++j) {
        for (int i = 0; i < s.nx; ++i) {
            const double w = u.at(i, j) * c;
            if (i == 0) {
                out.at(0, j) += -3.0 * w;
                out.at(1, j) += 4.0 * w;
                out.at(2, j) += -1.0 * w;
            } else if (i == s.nx - 1) {
                out.at(i, j) += 3.0 * w;
                out.at(i - 1, j) += -4.0 * w;
                out.at(i - 2, j) += 1.0 * w;
            } else {
                out.at(i + 1, j) += w;
                out.at(i - 1, j) += -w;
            }
        }
    }
    return out;
}

ScalarField ddy_transpose(const ScalarField& u) {
    const GridSpec& s = u.spec();
    ScalarField out(s);
    const double c = 0.5 / s.hy();
    for (int j = 0; j < s.ny; ++j) {
        for (int i = 0; i < s.nx; ++i) {
            const double w = u.at(i, j) * c;
            if (j == 0) {
                out.at(i, 0) += -3.0 * w;
                out.at(i, 1) += 4.0 * w;
                out.at(i, 2) += -1.0 * w;
            } else if (j == s.ny - 1) {
                out.at(i, j) += 3.0 * w;
                out.at(i, j - 1) += -4.0 * w;
                out.at(i, j - 2) += 1.0 * w;
            } else {
                out.at(i, j + 1) += w;
                out.at(i, j - 1) += -w;
            }
        }
    }
    return out;
}

ScalarField restrict_to(const ScalarField& u, Region r) {
    const GridSpec& s = u.spec();
    ScalarField out(s);
    for (int j = 0; j < s.ny; ++j)
        for (int i = 0; i < s.nx; ++i)
            if (s.node_in_region(i, j, r)) out.at(i, j) = u.at(i, j);
    return out;
}

double l2_norm(const ScalarField& u) {
    double acc = 0.0;
    for (size_t k = 0; k < u.size(); ++k) acc += u[k] * u[k];
    return std::sqrt(acc * u.spec().hx() * u.spec().hy());
}

double l2_norm_region(const ScalarField& u, Region r) {
    const GridSpec& s = u.spec();
    double acc = 0.0;
    for (int j = 0; j < s.ny; ++j)
        for (int i = 0; i < s.nx; ++i)
            if (s.node_in_region(i, j, r)) acc += u.at(i, j) * u.at(i, j);
    return std::sqrt(acc * s.hx() * s.hy());
}

double linf_norm(const ScalarField& u) {
    double m = 0.0;
    for (size_t k = 0; k < u.size(); ++k) m = std::max(m, std::abs(u[k]));
    return m;
}

double dot_product(const ScalarField& a, const ScalarField& b) {
    require_same_spec(a.spec(), b.spec(), "dot_product");
    double acc = 0.0;
    for (size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
    return acc;
}

} // namespace idlab
