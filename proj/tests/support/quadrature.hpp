#pragma once

#include <functional>
#include <vector>

namespace testsupport {

struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// Nodes and weights of the n-point Gauss-Legendre rule on [a, b], computed
// by Newton iteration on the Legendre recurrence. Test-side oracle; kept
// independent of the library under test.
GaussLegendre gauss_legendre(int n, double a, double b);

double integrate(const std::function<double(double)>& f, double a, double b, int n = 512);

}  // namespace testsupport
