#include "idlab/parametrix.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <iomanip>

namespace idlab {

namespace {

using cplx = std::complex<double>;

// Smoothstep gate: 0 below t = 1/2, 1 above t = 1.
double gate(double t) { return smoothstep_quintic((t - 0.5) / 0.5); }

std::vector<cplx> dft_core(const ScalarField& f) {
    const GridSpec& s = f.spec();
    const int mx = s.nx - 1, my = s.ny - 1;
    std::vector<cplx> buf(static_cast<size_t>(mx) * my);
    for (int b = 0; b < my; ++b)
        for (int a = 0; a < mx; ++a) buf[static_cast<size_t>(b) * mx + a] = f.at(a, b);
    std::vector<cplx> out(buf.size());
    fftw_plan plan = fftw_plan_dft_2d(my, mx,
                                      reinterpret_cast<fftw_complex*>(buf.data()),
                                      reinterpret_cast<fftw_complex*>(out.data()),
                                      FFTW_FORWARD, FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
    const double scale = 1.0 / (static_cast<double>(mx) * my);
    for (auto& z : out) z *= scale;
    return out;
}

} // namespace

QuantizedOperator::QuantizedOperator(SymbolField sym, QuantizeOptions opt)
    : sym_(std::move(sym)), opt_(opt) {
    const GridSpec& s = sym_.spec();
    const FrequencyLattice lat = FrequencyLattice::of(s);
    const int mx = lat.mx, my = lat.my;
    const int n_dir = sym_.directions().n;
    const int entries = sym_.rows() * sym_.cols();
    const size_t modes = lat.mode_count();

    dir0_.resize(modes);
    dir1_.resize(modes);
    dirw_.resize(modes);
    factors_.resize(modes * entries);

    auto entry_order = [&](int r, int c) {
        if (sym_.dn_orders()) return sym_.dn_orders()->s[r] + sym_.dn_orders()->t[c];
        return sym_.order();
    };

    for (int b = 0; b < my; ++b)
        for (int a = 0; a < mx; ++a) {
            const size_t m = static_cast<size_t>(b) * mx + a;
            const double xx = lat.xi_x(a), xy = lat.xi_y(b);
            double dx = xx, dy = xy;
            if (opt_.freq_map == QuantizeOptions::FreqMap::grid_adapted && (a != 0 || b != 0)) {
                const double sx = std::sin(xx * s.hx()) / s.hx();
                const double sy = std::sin(xy * s.hy()) / s.hy();
                if (std::hypot(sx, sy) > 1e-9 * std::hypot(xx, xy)) {
                    dx = sx;
                    dy = sy;
                }
            }
            double t = std::atan2(dy, dx) / (2.0 * M_PI) * n_dir;
            t -= n_dir * std::floor(t / n_dir);
            if (opt_.interp == QuantizeOptions::DirInterp::nearest) {
                dir0_[m] = static_cast<int>(std::lround(t)) % n_dir;
                dir1_[m] = dir0_[m];
                dirw_[m] = 0.0;
            } else {
                const int d0 = static_cast<int>(std::floor(t)) % n_dir;
                dir0_[m] = d0;
                dir1_[m] = (d0 + 1) % n_dir;
                dirw_[m] = t - std::floor(t);
            }
            const double mag = lat.magnitude(a, b);
            for (int r = 0; r < sym_.rows(); ++r)
                for (int c = 0; c < sym_.cols(); ++c) {
                    const int ord = entry_order(r, c);
                    double fac;
                    if (a == 0 && b == 0)
                        fac = ord > 0 ? 0.0 : 1.0; // no canonical value at xi = 0
                    else
                        fac = ord == 0 ? 1.0 : std::pow(mag, ord);
                    factors_[m * entries + r * sym_.cols() + c] = fac;
                }
        }

    phase_x_.resize(static_cast<size_t>(s.nx) * mx);
    for (int i = 0; i < s.nx; ++i)
        for (int a = 0; a < mx; ++a)
            phase_x_[static_cast<size_t>(i) * mx + a] =
                std::polar(1.0, 2.0 * M_PI * static_cast<double>(i) * a / mx);
    phase_y_.resize(static_cast<size_t>(s.ny) * my);
    for (int j = 0; j < s.ny; ++j)
        for (int b = 0; b < my; ++b)
            phase_y_[static_cast<size_t>(j) * my + b] =
                std::polar(1.0, 2.0 * M_PI * static_cast<double>(j) * b / my);
}

std::complex<double> QuantizedOperator::entry(int node, int mode, int r, int c) const {
    const cplx s0 = sym_.at(node, dir0_[mode], r, c);
    if (dirw_[mode] == 0.0) return s0;
    const cplx s1 = sym_.at(node, dir1_[mode], r, c);
    return (1.0 - dirw_[mode]) * s0 + dirw_[mode] * s1;
}

std::vector<ScalarField> QuantizedOperator::apply_vector(const std::vector<ScalarField>& in) const {
    if (static_cast<int>(in.size()) != sym_.cols())
        throw ParametrixError("QuantizedOperator: input component count mismatch");
    const GridSpec& s = sym_.spec();
    for (const auto& f : in) require_same_spec(s, f.spec(), "QuantizedOperator::apply");
    const int mx = s.nx - 1, my = s.ny - 1;
    const int R = sym_.rows(), C = sym_.cols();
    const int n_dir = sym_.directions().n;

    std::vector<std::vector<cplx>> fhat(C);
    for (int c = 0; c < C; ++c) fhat[c] = dft_core(in[c]);

    std::vector<ScalarField> out(R, ScalarField(s));
    std::vector<cplx> acc(R);
    for (int j = 0; j < s.ny; ++j) {
        const cplx* py = &phase_y_[static_cast<size_t>(j) * my];
        for (int i = 0; i < s.nx; ++i) {
            const cplx* px = &phase_x_[static_cast<size_t>(i) * mx];
            const int node = j * s.nx + i;
            std::fill(acc.begin(), acc.end(), cplx{0.0, 0.0});
            for (int b = 0; b < my; ++b) {
                const cplx pb = py[b];
                for (int a = 0; a < mx; ++a) {
                    const size_t m = static_cast<size_t>(b) * mx + a;
                    if (m == 0) continue;
                    const cplx ph = px[a] * pb;
                    for (int r = 0; r < R; ++r)
                        for (int c = 0; c < C; ++c) {
                            const double fac = factors_[m * (R * C) + r * C + c];
                            if (fac == 0.0) continue;
                            acc[r] += entry(node, static_cast<int>(m), r, c) *
                                      (fac * fhat[c][m]) * ph;
                        }
                }
            }
            // xi = 0: direction-averaged symbol, entries of positive order drop.
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) {
                    if (factors_[r * C + c] == 0.0) continue;
                    cplx avg{0.0, 0.0};
                    for (int d = 0; d < n_dir; ++d) avg += sym_.at(node, d, r, c);
                    acc[r] += avg * (1.0 / n_dir) * fhat[c][0];
                }
            for (int r = 0; r < R; ++r) out[r].at(i, j) = acc[r].real();
        }
    }
    return out;
}

ScalarField QuantizedOperator::apply(const ScalarField& f) const {
    if (sym_.rows() != 1 || sym_.cols() != 1)
        throw ParametrixError("QuantizedOperator::apply: symbol is matrix-valued");
    return apply_vector({f})[0];
}

ScalarField QuantizedOperator::apply_transpose(const ScalarField& g) const {
    if (sym_.rows() != 1 || sym_.cols() != 1)
        throw ParametrixError("QuantizedOperator::apply_transpose: scalar symbols only");
    const GridSpec& s = sym_.spec();
    require_same_spec(s, g.spec(), "QuantizedOperator::apply_transpose");
    const int mx = s.nx - 1, my = s.ny - 1;
    const int n_dir = sym_.directions().n;
    const size_t modes = static_cast<size_t>(mx) * my;

    // T[m] = sum_x S(x, m) g(x) e^{+i xi x}; the dc column accumulates the
    // direction-averaged part.
    std::vector<cplx> T(modes, cplx{0.0, 0.0});
    cplx dc{0.0, 0.0};
    for (int j = 0; j < s.ny; ++j) {
        const cplx* py = &phase_y_[static_cast<size_t>(j) * my];
        for (int i = 0; i < s.nx; ++i) {
            const double gv = g.at(i, j);
            if (gv == 0.0) continue;
            const cplx* px = &phase_x_[static_cast<size_t>(i) * mx];
            const int node = j * s.nx + i;
            for (int b = 0; b < my; ++b) {
                const cplx pb = py[b] * gv;
                for (int a = 0; a < mx; ++a) {
                    const size_t m = static_cast<size_t>(b) * mx + a;
                    if (m == 0) continue;
                    T[m] += entry(node, static_cast<int>(m), 0, 0) * px[a] * pb;
                }
            }
            cplx avg{0.0, 0.0};
            for (int d = 0; d < n_dir; ++d) avg += sym_.at(node, d, 0, 0);
            dc += avg * (1.0 / n_dir) * gv;
        }
    }

    const double scale = 1.0 / (static_cast<double>(mx) * my);
    ScalarField out(s);
    for (int b = 0; b < my; ++b)
        for (int a = 0; a < mx; ++a) {
            const size_t m = static_cast<size_t>(b) * mx + a;
            if (m == 0) continue;
            T[m] *= factors_[m] * scale;
        }
    for (int j = 0; j < my; ++j) {
        const cplx* py = &phase_y_[static_cast<size_t>(j) * my];
        for (int i = 0; i < mx; ++i) {
            const cplx* px = &phase_x_[static_cast<size_t>(i) * mx];
            cplx acc = dc * scale;
            for (int b = 0; b < my; ++b) {
                const cplx pb = std::conj(py[b]);
                for (int a = 0; a < mx; ++a) {
                    const size_t m = static_cast<size_t>(b) * mx + a;
                    if (m == 0) continue;
                    acc += T[m] * std::conj(px[a]) * pb;
                }
            }
            out.at(i, j) = acc.real();
        }
    }
    return out;
}

QuantizedOperator quantize(const SymbolField& sym, QuantizeOptions opt) {
    return QuantizedOperator(sym, opt);
}

SymbolField build_q_scalar(const SymbolField& A0, const ScalarField& chi2,
                           double delta_floor) {
    if (!A0.is_scalar()) throw ParametrixError("build_q_scalar: scalar symbols only");
    require_same_spec(A0.spec(), chi2.spec(), "build_q_scalar");
    EllipticityReport scan = ellipticity_scan(A0, Region::OmegaPrime);
    if (!scan.elliptic())
        throw EllipticityError("build_q_scalar: symbol is degenerate (delta " +
                                   std::to_string(scan.delta) + ")",
                               scan);
    const double floor = delta_floor > 0.0 ? delta_floor : 1e-8 * scan.symbol_max;

    const GridSpec& s = A0.spec();
    SymbolField Q(s, A0.directions(), 0);
    for (int node = 0; node < s.node_count(); ++node) {
        const double c2 = chi2[node];
        if (c2 == 0.0) continue;
        for (int d = 0; d < A0.directions().n; ++d) {
            const auto a = A0.at(node, d);
            if (std::abs(a) <= floor)
                throw ParametrixError(
                    "build_q_scalar: reciprocal floor triggered on supp chi2 at node " +
                    std::to_string(node) + ", direction " + std::to_string(d));
            Q.at(node, d) = c2 / a;
        }
    }
    return Q;
}

std::pair<Partition, SymbolField> build_combination(const SymbolField& A11,
                                                    const SymbolField& A22,
                                                    const SymbolField* A12, double tau,
                                                    double p, const ScalarField* phi) {
    std::vector<SymbolField> family{A11, A22};
    const bool use_cross = (p != 1.0) && A12 != nullptr;
    if (use_cross) family.push_back(*A12);

    EllipticityReport scan =
        ellipticity_scan(std::span<const SymbolField>(family.data(), family.size()),
                         Region::OmegaPrime);
    if (!scan.elliptic())
        throw EllipticityError("build_combination: family scans degenerate", scan);
    if (tau <= 0.0) {
        // The gate only keeps Psi positive where the usable family moduli
        // reach tau, so the default must respect the usable margin: for p < 2
        // the cross symbol acts only where phi is positive, and its clamped
        // values spike near orthogonal gradients without being usable there.
        // Scan over Omega'' (the support of any chi2 the reciprocal will see).
        double usable_max = 0.0;
        double usable_margin = std::numeric_limits<double>::infinity();
        const GridSpec& gs = A11.spec();
        for (int j = 0; j < gs.ny; ++j)
            for (int i = 0; i < gs.nx; ++i) {
                if (!gs.node_in_region(i, j, Region::OmegaDoublePrime)) continue;
                const int node = j * gs.nx + i;
                for (int d = 0; d < A11.directions().n; ++d) {
                    double best = 0.0;
                    for (size_t f = 0; f < family.size(); ++f) {
                        if (f == 2 && p < 2.0 && phi && (*phi)[node] == 0.0) continue;
                        best = std::max(best, std::abs(family[f].at(node, d)));
                    }
                    usable_max = std::max(usable_max, best);
                    usable_margin = std::min(usable_margin, best);
                }
            }
        tau = std::min(0.25 * usable_max, 0.5 * usable_margin);
        if (!(tau > 0.0))
            throw EllipticityError("build_combination: usable family margin vanishes", scan);
    }

    const GridSpec& s = A11.spec();
    const int n_dir = A11.directions().n;
    Partition part;
    part.labels = {"psi11", "psi22"};
    part.weights.assign(2, SymbolField(s, A11.directions(), 0));
    if (use_cross) {
        part.labels.push_back("psi12");
        part.weights.emplace_back(s, A11.directions(), 0);
    }
    SymbolField psi_sum(s, A11.directions(), 0);

    for (int node = 0; node < s.node_count(); ++node)
        for (int d = 0; d < n_dir; ++d) {
            cplx total{0.0, 0.0};
            for (size_t f = 0; f < family.size(); ++f) {
                const cplx a = family[f].at(node, d);
                double w = gate(std::abs(a) / tau);
                // The cross weight stays off outside the region where the
                // gradients' dot product is safely positive.
                if (f == 2 && p < 2.0 && phi && (*phi)[node] == 0.0) w = 0.0;
                const cplx psi = w * std::conj(a);
                part.weights[f].at(node, d) = psi;
                total += psi * a;
            }
            psi_sum.at(node, d) = total;
        }
    return {std::move(part), std::move(psi_sum)};
}

SymbolField build_dn_parametrix(const SymbolField& stacked, const ScalarField& chi2) {
    if (stacked.cols() != 2 || stacked.rows() % 2 != 0 || stacked.rows() < 2)
        throw ParametrixError("build_dn_parametrix: expected a stacked 2n x 2 symbol");
    require_same_spec(stacked.spec(), chi2.spec(), "build_dn_parametrix");

    EllipticityReport scan = ellipticity_scan(stacked, Region::OmegaPrime);
    if (!scan.elliptic())
        throw EllipticityError("build_dn_parametrix: stacked symbol scans degenerate", scan);

    const GridSpec& s = stacked.spec();
    const int n_dir = stacked.directions().n;
    const int blocks = stacked.rows() / 2;

    // Global determinant scale over the support of chi2 sets the refusal floor.
    double det_scale = 0.0;
    for (int node = 0; node < s.node_count(); ++node) {
        if (chi2[node] == 0.0) continue;
        for (int d = 0; d < n_dir; ++d)
            for (int k = 0; k < blocks; ++k) {
                const cplx det = stacked.at(node, d, 2 * k, 0) * stacked.at(node, d, 2 * k + 1, 1) -
                                 stacked.at(node, d, 2 * k, 1) * stacked.at(node, d, 2 * k + 1, 0);
                det_scale = std::max(det_scale, std::abs(det));
            }
    }

    DnOrders dn;
    dn.s = {0, -1};
    dn.t.assign(stacked.rows(), 1);
    SymbolField B(s, stacked.directions(), 0, 2, stacked.rows(), dn);

    std::vector<cplx> dets(blocks);
    for (int node = 0; node < s.node_count(); ++node) {
        const double c2 = chi2[node];
        if (c2 == 0.0) continue;
        for (int d = 0; d < n_dir; ++d) {
            double dmax = 0.0;
            for (int k = 0; k < blocks; ++k) {
                dets[k] = stacked.at(node, d, 2 * k, 0) * stacked.at(node, d, 2 * k + 1, 1) -
                          stacked.at(node, d, 2 * k, 1) * stacked.at(node, d, 2 * k + 1, 0);
                dmax = std::max(dmax, std::abs(dets[k]));
            }
            if (dmax <= 1e-12 * det_scale)
                throw ParametrixError("build_dn_parametrix: no invertible block at node " +
                                      std::to_string(node) + ", direction " + std::to_string(d));
            double wsum = 0.0;
            std::vector<double> w(blocks);
            for (int k = 0; k < blocks; ++k) {
                w[k] = gate(std::abs(dets[k]) / dmax);
                wsum += w[k];
            }
            for (int k = 0; k < blocks; ++k) {
                if (w[k] == 0.0) continue;
                const double wk = c2 * w[k] / wsum;
                const cplx a00 = stacked.at(node, d, 2 * k, 0);
                const cplx a01 = stacked.at(node, d, 2 * k, 1);
                const cplx a10 = stacked.at(node, d, 2 * k + 1, 0);
                const cplx a11 = stacked.at(node, d, 2 * k + 1, 1);
                const cplx inv_det = 1.0 / dets[k];
                B.at(node, d, 0, 2 * k) += wk * a11 * inv_det;
                B.at(node, d, 0, 2 * k + 1) += wk * (-a01) * inv_det;
                B.at(node, d, 1, 2 * k) += wk * (-a10) * inv_det;
                B.at(node, d, 1, 2 * k + 1) += wk * a00 * inv_det;
            }
        }
    }
    return B;
}

double ResidualTable::fitted_exponent() const {
    const size_t n = freq.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t k = 0; k < n; ++k) {
        const double lx = std::log(freq[k]), ly = std::log(residual[k]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void ResidualTable::write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ParametrixError("ResidualTable: cannot open " + path);
    os << "freq,residual\n" << std::setprecision(17);
    for (size_t k = 0; k < freq.size(); ++k) os << freq[k] << ',' << residual[k] << '\n';
}

Probe windowed_wave(const GridSpec& spec, int kx, int ky) {
    const double inner = spec.margin_prime + 0.02;
    const double outer = spec.margin_prime + 0.10;
    const ScalarField window = make_cutoff(spec, inner, outer);
    ScalarField f(spec);
    for (int j = 0; j < spec.ny; ++j)
        for (int i = 0; i < spec.nx; ++i)
            f.at(i, j) = window.at(i, j) *
                         std::cos(2.0 * M_PI * (kx * spec.x(i) + ky * spec.y(j)));
    return Probe{std::move(f), 2.0 * M_PI * std::hypot(double(kx), double(ky))};
}

ResidualTable compose_residual(const QuantizedOperator& Q, const LinearDataMap& A,
                               const std::vector<Probe>& probes) {
    if (A.input_components() != 1 || A.output_components() != 1)
        throw ParametrixError("compose_residual: single-component maps only");
    ResidualTable table;
    for (const auto& probe : probes) {
        const ScalarField data = A.apply({probe.field})[0];
        ScalarField recon = Q.apply(data);
        recon -= probe.field;
        const double ref = l2_norm_region(probe.field, Region::OmegaPrime);
        table.freq.push_back(probe.freq_magnitude);
        table.residual.push_back(ref > 0.0 ? l2_norm_region(recon, Region::OmegaPrime) / ref
                                           : 0.0);
    }
    return table;
}

} // namespace idlab
