#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nttc {

/// Thrown when a computation breaks down numerically (non-finite values,
/// failed factorization, stalled line search).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when an input is structurally valid but degenerate for the
/// requested operation (zero tensor, non-positive normalization, ...).
struct DegenerateInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Thrown when internally cached state is used out of sync with the data
/// it was derived from.
struct InternalConsistencyError : std::logic_error {
  using std::logic_error::logic_error;
};

/// 0-based multi-index into a d-way tensor. External file formats store
/// indices 1-based; conversion happens at the I/O boundary.
using MultiIndex = std::vector<std::int32_t>;

using Rng = std::mt19937_64;

inline void check_index(std::span<const std::int32_t> idx,
                        std::span<const int> dims) {
  if (idx.size() != dims.size())
    throw std::invalid_argument("multi-index length " +
                                std::to_string(idx.size()) +
                                " does not match dimension count " +
                                std::to_string(dims.size()));
  for (std::size_t k = 0; k < idx.size(); ++k)
    if (idx[k] < 0 || idx[k] >= dims[k])
      throw std::invalid_argument("index " + std::to_string(idx[k]) +
                                  " out of range for mode " +
                                  std::to_string(k) + " of size " +
                                  std::to_string(dims[k]));
}

/// Number of entries of a dense tensor with the given mode sizes.
inline std::int64_t entry_count(std::span<const int> dims) {
  std::int64_t n = 1;
  for (int m : dims) n *= m;
  return n;
}

/// Row-major linearization (last index fastest).
inline std::int64_t linear_index(std::span<const std::int32_t> idx,
                                 std::span<const int> dims) {
  std::int64_t lin = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) lin = lin * dims[k] + idx[k];
  return lin;
}

inline MultiIndex unlinear_index(std::int64_t lin, std::span<const int> dims) {
  MultiIndex idx(dims.size());
  for (std::size_t k = dims.size(); k-- > 0;) {
    idx[k] = static_cast<std::int32_t>(lin % dims[k]);
    lin /= dims[k];
  }
  return idx;
}

inline MultiIndex random_index(std::span<const int> dims, Rng& rng) {
  MultiIndex idx(dims.size());
  for (std::size_t k = 0; k < dims.size(); ++k) {
    std::uniform_int_distribution<int> pick(0, dims[k] - 1);
    idx[k] = static_cast<std::int32_t>(pick(rng));
  }
  return idx;
}

}  // namespace nttc
