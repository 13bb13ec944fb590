#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace ftc {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Carries the certificate of the feasibility pre-check: the smallest
// achievable worst-case constraint violation and the row attaining it.
struct InfeasibleError : std::runtime_error {
    double violation;
    int row;
    InfeasibleError(const std::string& msg, double viol, int r)
        : std::runtime_error(msg), violation(viol), row(r) {}
};

}  // namespace ftc
