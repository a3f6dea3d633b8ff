#pragma once

// The contract "coefficient perturbation -> data perturbation", realized by
// the exact PDE-based derivative or by a quantized principal symbol.

#include <vector>

#include "idlab/grid.hpp"

namespace idlab {

struct LinearDataMap {
    virtual ~LinearDataMap() = default;

    virtual int input_components() const = 0;
    virtual int output_components() const = 0;

    virtual std::vector<ScalarField> apply(const std::vector<ScalarField>& in) const = 0;

    // Transpose with respect to the plain nodal inner product. Maps with no
    // usable adjoint may throw.
    virtual std::vector<ScalarField> apply_adjoint(const std::vector<ScalarField>& out) const = 0;
};

} // namespace idlab
