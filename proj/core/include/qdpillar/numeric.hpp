#pragma once

// Small numerical helpers shared by the modules.

#include <cmath>
#include <limits>

#include "qdpillar/error.hpp"

namespace qdpillar::numeric {

/// Bisection on a bracketing interval. Runs until the bracket is below `tol`
/// or cannot shrink further in double precision.
template <class F>
double bisect(F&& f, double a, double b, double tol) {
    double fa = f(a);
    double fb = f(b);
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    if ((fa > 0.0) == (fb > 0.0))
        throw Error(ErrorKind::numerical_failure,
                    "bisection bracket [" + std::to_string(a) + ", " + std::to_string(b) +
                        "] does not change sign");
    for (int it = 0; it < 400; ++it) {
        const double m = 0.5 * (a + b);
        if (m <= std::min(a, b) || m >= std::max(a, b) || std::abs(b - a) <= tol) break;
        const double fm = f(m);
        if (fm == 0.0) return m;
        if ((fm > 0.0) == (fa > 0.0)) {
            a = m;
            fa = fm;
        } else {
            b = m;
            fb = fm;
        }
    }
    return std::abs(fa) < std::abs(fb) ? a : b;
}

/// exp(x^2) erfc(x), finite for every x where the result is representable.
double erfcx(double x);

/// Composite Simpson rule on [a, b] with an even number of panels.
template <class F>
double simpson(F&& f, double a, double b, int panels) {
    if (panels % 2) ++panels;
    const double h = (b - a) / panels;
    double s = f(a) + f(b);
    for (int i = 1; i < panels; ++i) s += f(a + h * i) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

} // namespace qdpillar::numeric
