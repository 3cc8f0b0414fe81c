#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cranra {

/// Invalid or inconsistent configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Iterative solver produced a non-finite objective. Maps to CLI exit code 3.
class SolverDivergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An RA report that assigns zero or several outcomes to one (sector, slot).
class MalformedReport : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using DeviceId = std::uint64_t;

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

inline constexpr double kPi = 3.14159265358979323846;

inline double to_db(double linear) { return 10.0 * std::log10(linear); }
inline double from_db(double db) { return std::pow(10.0, db / 10.0); }

}  // namespace cranra
