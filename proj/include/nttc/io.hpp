#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "nttc/common.hpp"
#include "nttc/ntt_fit.hpp"
#include "nttc/tensor_train.hpp"

namespace nttc {

/// Binary tensor-train container.
///
/// Layout (all little-endian):
///   u32 format version (1)
///   u32 flags (bit 0: strictly positive / NTT)
///   u32 d
///   u32 dims[d]
///   u32 ranks[d-1]
///   f64 cores, each contiguous row-major (left_rank, mode, right_rank)
///
/// Loaders verify the rank chain and, when the positivity flag is set,
/// strict positivity of every entry.
namespace io {

constexpr std::uint32_t kTtFormatVersion = 1;
constexpr std::uint32_t kFlagStrictlyPositive = 1u;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::invalid_argument("truncated file while reading " + what);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, const std::string& what) {
  const std::uint64_t lo = get_u32(is, what);
  const std::uint64_t hi = get_u32(is, what);
  return lo | (hi << 32);
}

inline double get_f64(std::istream& is, const std::string& what) {
  const std::uint64_t bits = get_u64(is, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

inline void write_tensor_train(std::ostream& os, const TensorTrain& tt,
                               bool strictly_positive_flag) {
  if (strictly_positive_flag && !tt.strictly_positive())
    throw DegenerateInputError(
        "write_tensor_train: positivity flag requested on a tensor with "
        "non-positive entries");
  detail::put_u32(os, kTtFormatVersion);
  detail::put_u32(os, strictly_positive_flag ? kFlagStrictlyPositive : 0u);
  const auto dims = tt.dims();
  const auto ranks = tt.ranks();
  detail::put_u32(os, static_cast<std::uint32_t>(dims.size()));
  for (int n : dims) detail::put_u32(os, static_cast<std::uint32_t>(n));
  for (int r : ranks) detail::put_u32(os, static_cast<std::uint32_t>(r));
  for (int k = 0; k < tt.dim_count(); ++k) {
    const TtCore& c = tt.core(k);
    for (int a = 0; a < c.left_rank(); ++a)
      for (int i = 0; i < c.mode_size(); ++i)
        for (int b = 0; b < c.right_rank(); ++b) detail::put_f64(os, c(a, i, b));
  }
}

struct LoadedTensorTrain {
  TensorTrain tt;
  bool strictly_positive = false;
};

inline LoadedTensorTrain read_tensor_train(std::istream& is) {
  const auto version = detail::get_u32(is, "format version");
  if (version != kTtFormatVersion)
    throw std::invalid_argument("unsupported tensor-train format version " +
                                std::to_string(version));
  const auto flags = detail::get_u32(is, "flags");
  const auto d = detail::get_u32(is, "dimension count");
  if (d < 1 || d > 100000)
    throw std::invalid_argument("implausible dimension count " + std::to_string(d));
  std::vector<int> dims(d), ranks(d >= 1 ? d - 1 : 0);
  for (auto& n : dims) n = static_cast<int>(detail::get_u32(is, "mode size"));
  for (auto& r : ranks) r = static_cast<int>(detail::get_u32(is, "rank"));
  std::vector<TtCore> cores;
  cores.reserve(d);
  for (std::uint32_t k = 0; k < d; ++k) {
    const int rl = (k == 0) ? 1 : ranks[k - 1];
    const int rr = (k + 1 == d) ? 1 : ranks[k];
    TtCore c(rl, dims[k], rr);
    for (int a = 0; a < rl; ++a)
      for (int i = 0; i < dims[k]; ++i)
        for (int b = 0; b < rr; ++b) c(a, i, b) = detail::get_f64(is, "core entry");
    cores.push_back(std::move(c));
  }
  LoadedTensorTrain out{TensorTrain(std::move(cores)),
                        (flags & kFlagStrictlyPositive) != 0};
  if (out.strictly_positive && !out.tt.strictly_positive())
    throw DegenerateInputError(
        "tensor-train file claims strict positivity but has a non-positive entry");
  return out;
}

inline void save_tensor_train(const std::string& path, const TensorTrain& tt,
                              bool strictly_positive_flag) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::invalid_argument("cannot open '" + path + "' for writing");
  write_tensor_train(os, tt, strictly_positive_flag);
  if (!os) throw std::invalid_argument("write failed for '" + path + "'");
}

inline LoadedTensorTrain load_tensor_train(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("cannot open '" + path + "'");
  return read_tensor_train(is);
}

/// Sample-set container: u32 d, u32 dims[d], u64 N, then N records of d
/// 1-based u32 indices (in-memory indices are 0-based).
inline void write_sample_set(std::ostream& os, const SampleSet& samples) {
  const auto& dims = samples.dims();
  detail::put_u32(os, static_cast<std::uint32_t>(dims.size()));
  for (int n : dims) detail::put_u32(os, static_cast<std::uint32_t>(n));
  detail::put_u64(os, static_cast<std::uint64_t>(samples.count()));
  for (std::int32_t v : samples.flat())
    detail::put_u32(os, static_cast<std::uint32_t>(v) + 1u);
}

inline SampleSet read_sample_set(std::istream& is) {
  const auto d = detail::get_u32(is, "dimension count");
  if (d < 1 || d > 100000)
    throw std::invalid_argument("implausible dimension count " + std::to_string(d));
  std::vector<int> dims(d);
  for (auto& n : dims) n = static_cast<int>(detail::get_u32(is, "mode size"));
  const auto n_samples = detail::get_u64(is, "sample count");
  SampleSet out(dims);
  out.reserve(static_cast<std::int64_t>(n_samples));
  MultiIndex idx(d);
  for (std::uint64_t j = 0; j < n_samples; ++j) {
    for (std::uint32_t k = 0; k < d; ++k) {
      const auto raw = detail::get_u32(is, "sample index");
      if (raw < 1 || raw > static_cast<std::uint32_t>(dims[k]))
        throw std::invalid_argument("sample " + std::to_string(j) +
                                    " index out of range at coordinate " +
                                    std::to_string(k));
      idx[k] = static_cast<std::int32_t>(raw) - 1;
    }
    out.append_unchecked(idx);
  }
  return out;
}

inline void save_sample_set(const std::string& path, const SampleSet& samples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::invalid_argument("cannot open '" + path + "' for writing");
  write_sample_set(os, samples);
  if (!os) throw std::invalid_argument("write failed for '" + path + "'");
}

inline SampleSet load_sample_set(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("cannot open '" + path + "'");
  return read_sample_set(is);
}

/// Decimal with 17 significant digits (round-trips any double).
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_trace_csv(std::ostream& os, const FitTrace& trace) {
  os << "sweep,wall_ms,rel_sq_frob,mean_mu,mean_step,mean_decrement\n";
  for (const auto& r : trace.sweeps)
    os << r.sweep << ',' << format_g17(r.wall_ms) << ','
       << format_g17(r.rel_sq_frob) << ',' << format_g17(r.mean_mu) << ','
       << format_g17(r.mean_step) << ',' << format_g17(r.mean_decrement)
       << '\n';
}

inline void save_trace_csv(const std::string& path, const FitTrace& trace) {
  std::ofstream os(path);
  if (!os) throw std::invalid_argument("cannot open '" + path + "' for writing");
  write_trace_csv(os, trace);
  if (!os) throw std::invalid_argument("write failed for '" + path + "'");
}

}  // namespace io
}  // namespace nttc
