#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string_view>

namespace catuda {

// Row-major so that one row is one sample.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Throws ShapeError unless `m` is rows x cols.
void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, std::string_view what);

/// Derives an independent 64-bit seed from a base seed and a list of tags.
/// Pure function; used wherever a sub-stream of randomness is needed.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

}  // namespace catuda
