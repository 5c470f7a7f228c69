#include "ssd/pca.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "binio.hpp"

namespace ssd {

namespace {

std::vector<float> serialize_blocks(const PcaTransform& t) {
  std::vector<float> buf;
  buf.reserve(t.mean.size() + t.basis.size() + t.explained_variance.size());
  detail::append_f32(buf, t.mean);
  detail::append_f32(buf, t.basis);
  detail::append_f32(buf, t.explained_variance);
  return buf;
}

}  // namespace

PcaTransform fit_pca(const Matrix& data, int d_pca) {
  const int n = static_cast<int>(data.rows());
  const int d_raw = static_cast<int>(data.cols());
  if (d_pca < 1 || d_pca > d_raw)
    throw std::invalid_argument("fit_pca: d_pca must be in [1, d_raw]");
  if (n < d_pca)
    throw std::invalid_argument("fit_pca: need at least d_pca samples");

  PcaTransform t;
  t.mean = data.colwise().mean();
  Matrix centered = data.rowwise() - t.mean.transpose();
  Matrix cov = centered.transpose() * centered / std::max(1, n - 1);

  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("fit_pca: eigendecomposition failed");

  // Eigenvalues come out ascending; keep the top d_pca, descending.
  t.basis.resize(d_pca, d_raw);
  t.explained_variance.resize(d_pca);
  for (int i = 0; i < d_pca; ++i) {
    const int src = d_raw - 1 - i;
    Vector v = es.eigenvectors().col(src);
    int arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    t.basis.row(i) = v.transpose();
    t.explained_variance(i) = std::max(0.0, es.eigenvalues()(src));
  }
  t.id = detail::hex64(detail::fnv1a(serialize_blocks(t)));
  return t;
}

Vector pca_transform(const PcaTransform& t, const Vector& z) {
  if (z.size() != t.d_raw())
    throw std::invalid_argument("pca_transform: dimension mismatch");
  return t.basis * (z - t.mean);
}

Matrix pca_transform_rows(const PcaTransform& t, const Matrix& zs) {
  if (zs.cols() != t.d_raw())
    throw std::invalid_argument("pca_transform_rows: dimension mismatch");
  return (zs.rowwise() - t.mean.transpose()) * t.basis.transpose();
}

Vector pca_inverse_transform(const PcaTransform& t, const Vector& y) {
  if (y.size() != t.d_pca())
    throw std::invalid_argument("pca_inverse_transform: dimension mismatch");
  return t.mean + t.basis.transpose() * y;
}

void save_pca(const PcaTransform& t, const std::string& path) {
  nlohmann::json header = {
      {"kind", "ssd.pca"},
      {"format_version", 1},
      {"d_raw", t.d_raw()},
      {"d_pca", t.d_pca()},
      {"id", t.id},
  };
  detail::write_header_and_block(path, header, serialize_blocks(t));
}

PcaTransform load_pca(const std::string& path) {
  // Peek the header first to size the block.
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("format error: bad header in " + path + ": " +
                             e.what());
  }
  if (header.value("format_version", -1) != 1)
    throw std::runtime_error("format error: unsupported pca format version");
  const int d_raw = header.at("d_raw").get<int>();
  const int d_pca = header.at("d_pca").get<int>();
  if (d_raw < 1 || d_pca < 1 || d_pca > d_raw)
    throw std::runtime_error("format error: bad pca dimensions in header");
  const std::size_t floats =
      static_cast<std::size_t>(d_raw) + static_cast<std::size_t>(d_pca) * d_raw +
      static_cast<std::size_t>(d_pca);
  auto hb = detail::read_header_and_block(path, "ssd.pca", floats);

  PcaTransform t;
  std::size_t pos = 0;
  t.mean = detail::take_vector(hb.block, pos, d_raw);
  t.basis = detail::take_matrix(hb.block, pos, d_pca, d_raw);
  t.explained_variance = detail::take_vector(hb.block, pos, d_pca);
  t.id = hb.header.at("id").get<std::string>();
  return t;
}

}  // namespace ssd
