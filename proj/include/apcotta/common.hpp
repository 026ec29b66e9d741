#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace apcotta {

using Vec3 = std::array<double, 3>;

// Sentinel for points without ground truth (e.g. injected noise).
// Such points are excluded from every metric.
inline constexpr std::uint8_t kIgnoreLabel = 255;

// Error categories surface in CLI output as `error: <category>: <message>`.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}
    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg) : Error("parse", msg) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error("validation", msg) {}
};

class StateError : public Error {
public:
    explicit StateError(const std::string& msg) : Error("state", msg) {}
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

} // namespace apcotta
