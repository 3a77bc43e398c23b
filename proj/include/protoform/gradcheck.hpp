#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protoform/geometry.hpp"

namespace protoform {

struct GradCheckRow {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t points = 0;
};

// Checks similarity_gradient against central finite differences (float64,
// step 1e-5) at `points` random (prototype, z) pairs. Relative error is
// |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckRow gradcheck_formulation(Formulation f, std::size_t dim, std::size_t points,
                                   std::uint64_t seed);

// One row per CLI formulation tag.
std::vector<GradCheckRow> gradcheck_all(std::size_t points, std::uint64_t seed,
                                        std::size_t dim = 8);

// Random prototype with parameters spread across the similarity's domain;
// used by the gradient checks and the property tests.
Prototype random_prototype(Formulation f, std::size_t dim, std::uint64_t seed);

}  // namespace protoform
