#pragma once

// IDX dataset ingestion and the RBMPARM1 parameter container.
//
// RBMPARM1 layout: 8-byte magic "RBMPARM1", u32 M, u32 J, then c (M), b (J)
// and W (M x J, row-major) as IEEE-754 doubles. All integers and floats are
// little-endian.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rts/rbm.hpp"

namespace rts {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

inline std::uint32_t read_le32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

inline void put_le32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_le_f64(std::vector<unsigned char>& out, double x) {
  const auto u = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(u >> (8 * i)));
}

inline double read_le_f64(const unsigned char* p) {
  std::uint64_t u = 0;
  for (int i = 7; i >= 0; --i) u = (u << 8) | p[i];
  return std::bit_cast<double>(u);
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace detail

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t rows() const { return dims.empty() ? 0 : dims[0]; }
  std::size_t row_size() const {
    std::size_t n = 1;
    for (std::size_t i = 1; i < dims.size(); ++i) n *= dims[i];
    return n;
  }
};

inline constexpr std::uint32_t kIdxImages = 0x00000803;
inline constexpr std::uint32_t kIdxLabels = 0x00000801;

inline IdxArray parse_idx(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4) throw ParseError("truncated IDX header: missing magic", bytes.size());
  const std::uint32_t magic = detail::read_be32(bytes.data());
  const std::size_t ndims = magic & 0xFF;
  if ((magic >> 8) != 0x08 || ndims == 0 || ndims > 3) throw ParseError("bad IDX magic", 0);
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header)
    throw ParseError("truncated IDX header: expected " + std::to_string(header) + " bytes, found " +
                         std::to_string(bytes.size()),
                     bytes.size());
  IdxArray out;
  std::size_t total = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    out.dims.push_back(detail::read_be32(bytes.data() + 4 + 4 * i));
    total *= out.dims.back();
  }
  if (bytes.size() < header + total)
    throw ParseError("truncated IDX data: expected " + std::to_string(header + total) +
                         " bytes, found " + std::to_string(bytes.size()),
                     bytes.size());
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                  bytes.begin() + static_cast<std::ptrdiff_t>(header + total));
  return out;
}

inline IdxArray load_idx(const std::filesystem::path& path) { return parse_idx(detail::read_file(path)); }

inline void save_idx(const std::filesystem::path& path, const IdxArray& a) {
  if (a.dims.empty() || a.dims.size() > 3) throw std::invalid_argument("IDX arrays have 1 to 3 dims");
  std::vector<unsigned char> bytes;
  const std::uint32_t magic = a.dims.size() == 1 ? kIdxLabels : kIdxImages;
  const std::uint32_t m = (magic & ~0xFFu) | static_cast<std::uint32_t>(a.dims.size());
  auto be = [&](std::uint32_t v) {
    for (int i = 3; i >= 0; --i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  };
  be(m);
  for (auto d : a.dims) be(d);
  bytes.insert(bytes.end(), a.data.begin(), a.data.end());
  detail::write_file(path, bytes);
}

// Pixels strictly above threshold_frac * max become 1.
inline Dataset binarize(const IdxArray& a, double threshold_frac = 0.5) {
  const std::size_t n = a.rows(), m = a.row_size();
  std::uint8_t mx = 0;
  for (auto v : a.data) mx = std::max(mx, v);
  const double thr = threshold_frac * mx;
  Dataset d(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < m; ++i)
      d(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = a.data[r * m + i] > thr ? 1.0 : 0.0;
  return d;
}

inline IdxArray dataset_to_idx(const Dataset& d) {
  IdxArray a;
  a.dims = {static_cast<std::uint32_t>(d.rows()), static_cast<std::uint32_t>(d.cols())};
  a.data.reserve(static_cast<std::size_t>(d.size()));
  for (Eigen::Index r = 0; r < d.rows(); ++r)
    for (Eigen::Index i = 0; i < d.cols(); ++i) a.data.push_back(d(r, i) > 0.5 ? 255 : 0);
  return a;
}

inline constexpr char kRbmMagic[8] = {'R', 'B', 'M', 'P', 'A', 'R', 'M', '1'};

inline std::vector<unsigned char> encode_rbm(const RbmParams& p) {
  p.validate();
  if (p.num_visible() == 0 || p.num_hidden() == 0)
    throw std::invalid_argument("cannot save an RBM with a zero dimension");
  std::vector<unsigned char> out(std::begin(kRbmMagic), std::end(kRbmMagic));
  detail::put_le32(out, static_cast<std::uint32_t>(p.num_visible()));
  detail::put_le32(out, static_cast<std::uint32_t>(p.num_hidden()));
  for (Eigen::Index i = 0; i < p.c.size(); ++i) detail::put_le_f64(out, p.c(i));
  for (Eigen::Index j = 0; j < p.b.size(); ++j) detail::put_le_f64(out, p.b(j));
  for (Eigen::Index i = 0; i < p.w.rows(); ++i)
    for (Eigen::Index j = 0; j < p.w.cols(); ++j) detail::put_le_f64(out, p.w(i, j));
  return out;
}

inline RbmParams decode_rbm(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16)
    throw ParseError("truncated RBMPARM1 header: expected 16 bytes, found " + std::to_string(bytes.size()),
                     bytes.size());
  if (std::memcmp(bytes.data(), kRbmMagic, 8) != 0) throw ParseError("bad RBMPARM1 magic", 0);
  const std::uint32_t m = detail::read_le32(bytes.data() + 8);
  const std::uint32_t j = detail::read_le32(bytes.data() + 12);
  if (m == 0 || j == 0) throw ParseError("RBMPARM1 with a zero dimension", 8);
  const std::uint64_t expected = 16 + 8 * (std::uint64_t{m} + j + std::uint64_t{m} * j);
  if (bytes.size() != expected)
    throw ParseError("RBMPARM1 size mismatch: expected " + std::to_string(expected) + " bytes, found " +
                         std::to_string(bytes.size()),
                     std::min<std::uint64_t>(bytes.size(), expected));
  RbmParams p(m, j);
  const unsigned char* q = bytes.data() + 16;
  for (Eigen::Index i = 0; i < p.c.size(); ++i, q += 8) p.c(i) = detail::read_le_f64(q);
  for (Eigen::Index k = 0; k < p.b.size(); ++k, q += 8) p.b(k) = detail::read_le_f64(q);
  for (Eigen::Index i = 0; i < p.w.rows(); ++i)
    for (Eigen::Index k = 0; k < p.w.cols(); ++k, q += 8) p.w(i, k) = detail::read_le_f64(q);
  p.validate();
  return p;
}

inline void save_rbm(const std::filesystem::path& path, const RbmParams& p) {
  detail::write_file(path, encode_rbm(p));
}

inline RbmParams load_rbm(const std::filesystem::path& path) { return decode_rbm(detail::read_file(path)); }

inline void write_free_energy_csv(std::ostream& os, const RbmParams& p, const Dataset& data, double log_z) {
  const Eigen::VectorXd f = rbm_free_energies(p, data);
  os.precision(17);
  os << "index,free_energy,log_likelihood\n";
  for (Eigen::Index r = 0; r < f.size(); ++r) os << r << ',' << f(r) << ',' << f(r) - log_z << '\n';
}

}  // namespace rts
