#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dmse {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

struct DimMismatch : Error {
  using Error::Error;
};

struct NotPositiveDefinite : Error {
  using Error::Error;
};

struct SingularCovariance : Error {
  using Error::Error;
};

struct ZeroColumn : Error {
  using Error::Error;
};

}  // namespace dmse
