#pragma once

// Field serialization.
//
// HSF1 binary layout (little-endian):
//   magic "HSF1" | u32 nx | u32 ny | f64 h | nx*ny f64 values, row-major in y
// Margins are not stored; readers supply them (defaults used otherwise).
//
// CSV export writes one "x,y,value" row per node. PGM previews are binary P5
// with linear min-max scaling; the scale is returned so reports can record it.

#include <string>

#include "idlab/grid.hpp"

namespace idlab {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_hsf1(const std::string& path, const ScalarField& f);
ScalarField read_hsf1(const std::string& path,
                      double margin_prime = 0.25, double margin_double_prime = 0.15);

void write_csv(const std::string& path, const ScalarField& f);

struct PgmScale {
    double min = 0.0;
    double max = 0.0;
};
PgmScale write_pgm(const std::string& path, const ScalarField& f);

} // namespace idlab
