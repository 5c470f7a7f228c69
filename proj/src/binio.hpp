#pragma once

// Internal helpers for the on-disk formats: one JSON header line followed by
// little-endian float32 blocks.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace ssd::detail {

inline void append_f32(std::vector<float>& buf, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    buf.push_back(static_cast<float>(v(i)));
}

// Row-major.
inline void append_f32(std::vector<float>& buf, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      buf.push_back(static_cast<float>(m(r, c)));
}

inline std::uint64_t fnv1a(const std::vector<float>& buf) {
  std::uint64_t h = 1469598103934665603ull;
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  for (std::size_t i = 0; i < buf.size() * sizeof(float); ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

inline void write_header_and_block(const std::string& path,
                                   const nlohmann::json& header,
                                   const std::vector<float>& block) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(block.data()),
            static_cast<std::streamsize>(block.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct HeaderAndBlock {
  nlohmann::json header;
  std::vector<float> block;
};

inline HeaderAndBlock read_header_and_block(const std::string& path,
                                            const std::string& expected_kind,
                                            std::size_t expected_floats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("format error: missing header in " + path);
  HeaderAndBlock out;
  try {
    out.header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("format error: bad header in " + path + ": " +
                             e.what());
  }
  if (out.header.value("kind", "") != expected_kind)
    throw std::runtime_error("format error: " + path + " is not a " +
                             expected_kind + " file");
  out.block.resize(expected_floats);
  in.read(reinterpret_cast<char*>(out.block.data()),
          static_cast<std::streamsize>(expected_floats * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != expected_floats * sizeof(float))
    throw std::runtime_error("format error: truncated block in " + path);
  char extra;
  if (in.read(&extra, 1))
    throw std::runtime_error("format error: trailing bytes in " + path);
  return out;
}

inline Eigen::VectorXd take_vector(const std::vector<float>& buf,
                                   std::size_t& pos, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = buf[pos++];
  return v;
}

inline Eigen::MatrixXd take_matrix(const std::vector<float>& buf,
                                   std::size_t& pos, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = buf[pos++];
  return m;
}

}  // namespace ssd::detail
