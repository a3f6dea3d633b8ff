#include "idlab/field_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>

namespace idlab {

namespace {

// The build targets little-endian hosts; write scalars byte-for-byte.
template <typename T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is, const char* what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw IoError(std::string("read_hsf1: truncated ") + what);
    return v;
}

} // namespace

void write_hsf1(const std::string& path, const ScalarField& f) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_hsf1: cannot open " + path);
    os.write("HSF1", 4);
    put<uint32_t>(os, static_cast<uint32_t>(f.nx()));
    put<uint32_t>(os, static_cast<uint32_t>(f.ny()));
    put<double>(os, f.spec().h());
    for (double v : f.values()) put<double>(os, v);
    if (!os) throw IoError("write_hsf1: write failed for " + path);
}

ScalarField read_hsf1(const std::string& path,
                      double margin_prime, double margin_double_prime) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("read_hsf1: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "HSF1", 4) != 0)
        throw IoError("read_hsf1: bad magic in " + path);
    const auto nx = get<uint32_t>(is, "nx");
    const auto ny = get<uint32_t>(is, "ny");
    const double h = get<double>(is, "h");
    GridSpec spec = GridSpec::make(static_cast<int>(nx), static_cast<int>(ny),
                                   margin_prime, margin_double_prime);
    if (std::abs(spec.h() - h) > 1e-12 * std::max(1.0, std::abs(h)))
        throw IoError("read_hsf1: header spacing inconsistent with node count");
    std::vector<double> vals(static_cast<size_t>(nx) * ny);
    for (double& v : vals) v = get<double>(is, "values");
    return ScalarField(spec, std::move(vals));
}

void write_csv(const std::string& path, const ScalarField& f) {
    std::ofstream os(path);
    if (!os) throw IoError("write_csv: cannot open " + path);
    os << "x,y,value\n" << std::setprecision(17);
    const GridSpec& s = f.spec();
    for (int j = 0; j < s.ny; ++j)
        for (int i = 0; i < s.nx; ++i)
            os << s.x(i) << ',' << s.y(j) << ',' << f.at(i, j) << '\n';
}

PgmScale write_pgm(const std::string& path, const ScalarField& f) {
    double lo = f[0], hi = f[0];
    for (size_t k = 0; k < f.size(); ++k) {
        lo = std::min(lo, f[k]);
        hi = std::max(hi, f[k]);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_pgm: cannot open " + path);
    os << "P5\n" << f.nx() << ' ' << f.ny() << "\n255\n";
    for (int j = 0; j < f.ny(); ++j)
        for (int i = 0; i < f.nx(); ++i) {
            const double t = (f.at(i, j) - lo) / span;
            os.put(static_cast<char>(static_cast<int>(255.0 * t + 0.5)));
        }
    return PgmScale{lo, hi};
}

} // namespace idlab
