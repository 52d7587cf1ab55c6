#include "qdpillar/numeric.hpp"

#include <numbers>

namespace qdpillar::numeric {

double erfcx(double x) {
    if (x < 0.0) return 2.0 * std::exp(x * x) - erfcx(-x);
    if (x < 10.0) return std::exp(x * x) * std::erfc(x);
    // Continued fraction x + (1/2)/(x + 1/(x + (3/2)/(x + ...))), evaluated backwards.
    double tail = x;
    for (int k = 60; k >= 1; --k) tail = x + 0.5 * k / tail;
    return 1.0 / (std::sqrt(std::numbers::pi) * tail);
}

} // namespace qdpillar::numeric
