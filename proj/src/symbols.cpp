#include "idlab/symbols.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>

#include <nlohmann/json.hpp>

namespace idlab {

namespace {

// Gradient floor over the support of a cutoff field.
void require_floor_on_support(const ScalarField& grad_mag, const ScalarField& chi,
                              const char* what) {
    const GridSpec& s = grad_mag.spec();
    const double floor = kGradientFloorRel * linf_norm(grad_mag);
    for (int j = 0; j < s.ny; ++j)
        for (int i = 0; i < s.nx; ++i)
            if (chi.at(i, j) > 0.0 && grad_mag.at(i, j) < floor)
                throw GradientFloorError(
                    std::string(what) + ": |grad u0| below floor on supp chi at node (" +
                        std::to_string(i) + "," + std::to_string(j) + ")",
                    i, j, grad_mag.at(i, j));
}

} // namespace

SymbolField symbol_power(const ScalarField& sigma0, const ScalarField& u0, double p,
                         const ScalarField& chi1) {
    require_same_spec(sigma0.spec(), u0.spec(), "symbol_power");
    require_same_spec(sigma0.spec(), chi1.spec(), "symbol_power");
    const GridSpec& s = sigma0.spec();
    const DirectionGrid dirs = DirectionGrid::make();
    const VectorField g = gradient(u0);
    const ScalarField mag = magnitude(g);
    require_floor_on_support(mag, chi1, "symbol_power");

    SymbolField sym(s, dirs, 0);
    for (int node = 0; node < s.node_count(); ++node) {
        const double chi = chi1[node];
        if (chi == 0.0) continue;
        const double amp = chi * chi * std::exp(sigma0[node]) * std::pow(mag[node], p);
        const double gx = g.comp_x[node] / mag[node];
        const double gy = g.comp_y[node] / mag[node];
        for (int d = 0; d < dirs.n; ++d) {
            const double c = dirs.ux(d) * gx + dirs.uy(d) * gy;
            sym.at(node, d) = amp * (1.0 - p * c * c);
        }
    }
    return sym;
}

SymbolField symbol_cross(const ScalarField& sigma0, const ScalarField& u01,
                         const ScalarField& u02, double p, const ScalarField& chi1) {
    require_same_spec(sigma0.spec(), u01.spec(), "symbol_cross");
    require_same_spec(sigma0.spec(), u02.spec(), "symbol_cross");
    const GridSpec& s = sigma0.spec();
    const DirectionGrid dirs = DirectionGrid::make();
    const VectorField g1 = gradient(u01);
    const VectorField g2 = gradient(u02);
    const ScalarField m1 = magnitude(g1);
    const ScalarField m2 = magnitude(g2);
    require_floor_on_support(m1, chi1, "symbol_cross");
    require_floor_on_support(m2, chi1, "symbol_cross");

    SymbolField sym(s, dirs, 0);
    for (int node = 0; node < s.node_count(); ++node) {
        const double chi = chi1[node];
        if (chi == 0.0) continue;
        const double amp = chi * chi * std::exp(sigma0[node]) *
                           std::pow(m1[node], 0.5 * p) * std::pow(m2[node], 0.5 * p);
        const double g1x = g1.comp_x[node] / m1[node], g1y = g1.comp_y[node] / m1[node];
        const double g2x = g2.comp_x[node] / m2[node], g2y = g2.comp_y[node] / m2[node];
        const double ct = g1x * g2x + g1y * g2y; // cos of the angle between gradients
        const double act = std::abs(ct);
        for (int d = 0; d < dirs.n; ++d) {
            const double c1 = dirs.ux(d) * g1x + dirs.uy(d) * g1y;
            const double c2 = dirs.ux(d) * g2x + dirs.uy(d) * g2y;
            double head, tail_factor;
            if (p == 2.0) {
                head = act;
                tail_factor = 1.0; // |cos theta|^0, globally smooth
            } else {
                head = std::pow(act, 0.5 * p);
                tail_factor = std::pow(std::max(act, kCrossAngleClamp), 0.5 * p - 1.0);
            }
            sym.at(node, d) = amp * (head - p * c1 * c2 * tail_factor);
        }
    }
    return sym;
}

SymbolField symbol_general(const GeneralFunctional& G, const ScalarField& sigma0,
                           const ScalarField& u0, const ScalarField& chi1) {
    require_same_spec(sigma0.spec(), u0.spec(), "symbol_general");
    const GridSpec& s = sigma0.spec();
    const DirectionGrid dirs = DirectionGrid::make();
    const VectorField g = gradient(u0);
    const ScalarField mag = magnitude(g);
    require_floor_on_support(mag, chi1, "symbol_general");

    SymbolField sym(s, dirs, 0);
    for (int node = 0; node < s.node_count(); ++node) {
        const double chi = chi1[node];
        if (chi == 0.0) continue;
        const double y = sigma0[node], z = u0[node], w = mag[node];
        const double fy = G.df_dy(y, z, w);
        const double fw = G.df_dw(y, z, w);
        const double gx = g.comp_x[node] / w, gy = g.comp_y[node] / w;
        for (int d = 0; d < dirs.n; ++d) {
            const double c = dirs.ux(d) * gx + dirs.uy(d) * gy;
            sym.at(node, d) = chi * chi * (fy - fw * w * c * c);
        }
    }
    return sym;
}

SymbolField symbol_qpat(const std::vector<std::array<ScalarField, 2>>& u0_pairs,
                        const ScalarField& chi) {
    if (u0_pairs.empty()) throw GridError("symbol_qpat: no measurement pairs");
    const GridSpec& s = chi.spec();
    const DirectionGrid dirs = DirectionGrid::make();
    const int rows = 2 * static_cast<int>(u0_pairs.size());
    DnOrders dn;
    dn.s.assign(rows, -1);
    dn.t = {0, 1};
    SymbolField sym(s, dirs, 0, rows, 2, dn);

    for (size_t k = 0; k < u0_pairs.size(); ++k)
        for (int m = 0; m < 2; ++m) {
            const ScalarField& u = u0_pairs[k][m];
            require_same_spec(s, u.spec(), "symbol_qpat");
            const VectorField g = gradient(u);
            const int r = 2 * static_cast<int>(k) + m;
            for (int node = 0; node < s.node_count(); ++node) {
                const double c2 = chi[node] * chi[node];
                if (c2 == 0.0) continue;
                for (int d = 0; d < dirs.n; ++d) {
                    const double tg = dirs.ux(d) * g.comp_x[node] + dirs.uy(d) * g.comp_y[node];
                    sym.at(node, d, r, 0) = std::complex<double>(0.0, c2 * tg);
                    sym.at(node, d, r, 1) = c2 * u[node];
                }
            }
        }
    return sym;
}

std::vector<VectorField> vector_fields_qpat(
    const std::vector<std::array<ScalarField, 2>>& u0_pairs) {
    std::vector<VectorField> out;
    for (const auto& pair : u0_pairs) {
        const VectorField g1 = gradient(pair[0]);
        const VectorField g2 = gradient(pair[1]);
        VectorField v(pair[0].spec());
        for (size_t k = 0; k < v.comp_x.size(); ++k) {
            v.comp_x[k] = pair[0][k] * g2.comp_x[k] - pair[1][k] * g1.comp_x[k];
            v.comp_y[k] = pair[0][k] * g2.comp_y[k] - pair[1][k] * g1.comp_y[k];
        }
        out.push_back(std::move(v));
    }
    return out;
}

ScalarField qpat_vector_det(const std::vector<std::array<ScalarField, 2>>& u0_pairs) {
    if (u0_pairs.size() != 2)
        throw GridError("qpat_vector_det: exactly two measurement pairs required");
    const auto vs = vector_fields_qpat(u0_pairs);
    ScalarField det(u0_pairs[0][0].spec());
    for (size_t k = 0; k < det.size(); ++k)
        det[k] = vs[0].comp_x[k] * vs[1].comp_y[k] - vs[0].comp_y[k] * vs[1].comp_x[k];
    return det;
}

namespace {

double scan_quantity(std::span<const SymbolField> symbols, int node, int d,
                     Eigen::MatrixXcd& scratch) {
    if (symbols.size() == 1 && symbols[0].is_scalar())
        return std::abs(symbols[0].at(node, d));
    if (symbols[0].is_scalar()) {
        double best = 0.0;
        for (const auto& sym : symbols) best = std::max(best, std::abs(sym.at(node, d)));
        return best;
    }
    const SymbolField& m = symbols[0];
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) scratch(r, c) = m.at(node, d, r, c);
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(scratch);
    return svd.singularValues().minCoeff();
}

double scan_quantity_max(std::span<const SymbolField> symbols, int node, int d,
                         Eigen::MatrixXcd& scratch) {
    if (symbols[0].is_scalar()) {
        double best = 0.0;
        for (const auto& sym : symbols) best = std::max(best, std::abs(sym.at(node, d)));
        return best;
    }
    const SymbolField& m = symbols[0];
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) scratch(r, c) = m.at(node, d, r, c);
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(scratch);
    return svd.singularValues().maxCoeff();
}

} // namespace

EllipticityReport ellipticity_scan(std::span<const SymbolField> symbols, Region region,
                                   double rel_threshold) {
    if (symbols.empty()) throw GridError("ellipticity_scan: no symbols");
    const GridSpec& s = symbols[0].spec();
    const DirectionGrid& dirs = symbols[0].directions();
    for (const auto& sym : symbols) {
        if (!(sym.spec() == s) || sym.directions().n != dirs.n)
            throw GridError("ellipticity_scan: symbols on mismatched grids");
        if (symbols.size() > 1 && !sym.is_scalar())
            throw GridError("ellipticity_scan: matrix symbols scan one at a time");
    }

    EllipticityReport rep;
    rep.per_direction_minima.assign(dirs.n, std::numeric_limits<double>::infinity());
    Eigen::MatrixXcd scratch(symbols[0].rows(), symbols[0].cols());

    bool any = false;
    for (int j = 0; j < s.ny; ++j)
        for (int i = 0; i < s.nx; ++i) {
            if (!s.node_in_region(i, j, region)) continue;
            const int node = j * s.nx + i;
            for (int d = 0; d < dirs.n; ++d) {
                const double q = scan_quantity(symbols, node, d, scratch);
                const double qmax = scan_quantity_max(symbols, node, d, scratch);
                rep.symbol_max = std::max(rep.symbol_max, qmax);
                rep.per_direction_minima[d] = std::min(rep.per_direction_minima[d], q);
                if (!any || q < rep.delta) {
                    any = true;
                    rep.delta = q;
                    rep.worst_i = i;
                    rep.worst_j = j;
                    rep.worst_direction = d;
                }
            }
        }
    if (!any) throw GridError("ellipticity_scan: region contains no grid nodes");

    // Refine the angle at the worst node with a parabola through the three
    // samples around the minimizing direction; a vertex below zero means the
    // symbol crosses zero between grid directions.
    {
        const int node = rep.worst_j * s.nx + rep.worst_i;
        const int d = rep.worst_direction;
        const int dm = (d + dirs.n - 1) % dirs.n, dp = (d + 1) % dirs.n;
        const double qm = scan_quantity(symbols, node, dm, scratch);
        const double q0 = rep.delta;
        const double qp = scan_quantity(symbols, node, dp, scratch);
        const double denom = qm - 2.0 * q0 + qp;
        double offset = 0.0, refined = q0;
        if (std::abs(denom) > 1e-300) {
            offset = 0.5 * (qm - qp) / denom;
            offset = std::clamp(offset, -1.0, 1.0);
            refined = q0 - 0.25 * (qm - qp) * offset;
        }
        rep.worst_angle = dirs.angle(d) + offset * (2.0 * M_PI / dirs.n);
        rep.delta = std::max(0.0, std::min(q0, refined));
    }

    rep.threshold = rel_threshold * rep.symbol_max;
    rep.verdict = rep.delta > rep.threshold ? EllipticityReport::Verdict::elliptic
                                            : EllipticityReport::Verdict::degenerate;
    return rep;
}

EllipticityReport ellipticity_scan(const SymbolField& symbol, Region region,
                                   double rel_threshold) {
    return ellipticity_scan(std::span<const SymbolField>(&symbol, 1), region, rel_threshold);
}

std::string report_to_json(const EllipticityReport& r) {
    nlohmann::json j;
    j["verdict"] = r.elliptic() ? "elliptic" : "degenerate";
    j["delta"] = r.delta;
    j["symbol_max"] = r.symbol_max;
    j["threshold"] = r.threshold;
    j["worst_node"] = {r.worst_i, r.worst_j};
    j["worst_direction_index"] = r.worst_direction;
    j["worst_angle"] = r.worst_angle;
    j["per_direction_minima"] = r.per_direction_minima;
    return j.dump(2);
}

void write_direction_csv(const std::string& path, const EllipticityReport& r) {
    std::ofstream os(path);
    if (!os) throw GridError("write_direction_csv: cannot open " + path);
    os << "direction_index,angle,minimum\n" << std::setprecision(17);
    const int n = static_cast<int>(r.per_direction_minima.size());
    for (int d = 0; d < n; ++d)
        os << d << ',' << 2.0 * M_PI * d / n << ',' << r.per_direction_minima[d] << '\n';
}

GeneralConditionReport check_general_condition(const GeneralFunctional& G,
                                               const ScalarField& sigma0,
                                               const ScalarField& u0) {
    const GridSpec& s = sigma0.spec();
    const ScalarField mag = magnitude(gradient(u0));
    const double floor = kGradientFloorRel * linf_norm(mag);
    const double grad_sup = linf_norm(mag);
    GeneralConditionReport rep;
    bool any = false;
    for (int j = 0; j < s.ny; ++j)
        for (int i = 0; i < s.nx; ++i) {
            const double w = mag.at(i, j);
            if (w < floor)
                throw GradientFloorError("check_general_condition: vanishing gradient at (" +
                                             std::to_string(i) + "," + std::to_string(j) + ")",
                                         i, j, w);
            const double y = sigma0.at(i, j), z = u0.at(i, j);
            const double m = std::abs(G.df_dy(y, z, w)) - grad_sup * std::abs(G.df_dw(y, z, w));
            if (!any || m < rep.margin) {
                any = true;
                rep.margin = m;
                rep.worst_i = i;
                rep.worst_j = j;
            }
        }
    rep.holds = rep.margin > 0.0;
    return rep;
}

void write_hss1(const std::string& path, const SymbolField& sym) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw GridError("write_hss1: cannot open " + path);
    auto put32 = [&](uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    auto put64 = [&](double v) { os.write(reinterpret_cast<const char*>(&v), 8); };
    os.write("HSS1", 4);
    put32(static_cast<uint32_t>(sym.spec().nx));
    put32(static_cast<uint32_t>(sym.spec().ny));
    put64(sym.spec().h());
    put32(static_cast<uint32_t>(sym.directions().n));
    put32(static_cast<uint32_t>(sym.rows()));
    put32(static_cast<uint32_t>(sym.cols()));
    for (const auto& z : sym.values()) {
        put64(z.real());
        put64(z.imag());
    }
    if (!os) throw GridError("write_hss1: write failed for " + path);
}

} // namespace idlab
