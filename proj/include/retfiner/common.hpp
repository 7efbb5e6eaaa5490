#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace retfiner {

// Row-major everywhere: sequence data is stored as [rows = positions, cols = channels]
// and checkpoint blobs are written in row-major order.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;

using Index = Eigen::Index;

// Error categories used across the library. All derive from std::runtime_error
// so callers that do not care about the category can catch one type.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error("usage error: " + msg) {}
};

struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error("integrity error: " + msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error("data error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

template <typename T>
bool all_finite(const Mat<T>& m) {
    return m.allFinite();
}

inline Index checked_div(Index a, Index b, const char* what) {
    if (b <= 0 || a % b != 0) {
        throw ConfigError(std::string(what) + ": " + std::to_string(a) + " is not divisible by " +
                          std::to_string(b));
    }
    return a / b;
}

}  // namespace retfiner
