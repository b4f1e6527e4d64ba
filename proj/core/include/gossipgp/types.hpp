#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace gossipgp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Vector2 = Eigen::Vector2d;
using Matrix2 = Eigen::Matrix2d;

// Thrown when a linear-algebra or consensus quantity degenerates
// (failed factorization, non-positive accumulator, ...) as opposed to
// a caller passing bad arguments.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gossipgp
