#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace tunnelflow {

/// Library-wide error type. Everything that violates a documented
/// precondition or hits a non-finite state throws one of these with a
/// message naming the offending quantity.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline std::string strf(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    char buf[512];
    vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return std::string(buf);
}

}  // namespace detail

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

/// Formats a double with 17 significant digits so CSV output round-trips
/// bit-exactly.
inline std::string fmt_full(double v) { return detail::strf("%.17g", v); }

inline std::vector<double> linspace(double a, double b, std::size_t n) {
    require(n >= 2, "linspace: need at least 2 points");
    std::vector<double> out(n);
    double h = (b - a) / double(n - 1);
    for (std::size_t i = 0; i < n; ++i) out[i] = a + h * double(i);
    out.back() = b;
    return out;
}

/// Uniform grid from a with fixed spacing, covering [a, b].
inline std::vector<double> grid_with_spacing(double a, double b, double h) {
    require(h > 0 && b > a, "grid_with_spacing: invalid grid request");
    std::size_t n = std::size_t(std::ceil((b - a) / h)) + 1;
    return linspace(a, b, n < 2 ? 2 : n);
}

/// Least-squares slope of y against x. Used for the log-log convergence
/// fits in the acceptance checks.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, "fit_slope: need >= 2 samples");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
    mx /= double(x.size());
    my /= double(x.size());
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    require(sxx > 0, "fit_slope: degenerate abscissae");
    return sxy / sxx;
}

inline bool all_finite(const std::vector<double>& v) {
    for (double a : v)
        if (!std::isfinite(a)) return false;
    return true;
}

}  // namespace tunnelflow
