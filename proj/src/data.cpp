#include "ssd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "ssd/rng.hpp"

namespace ssd {

using nlohmann::json;

namespace {

json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json matrix_to_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    a.push_back(vector_to_json(m.row(r).transpose()));
  return a;
}

Vector vector_from_json(const json& a, int expected, const std::string& what) {
  if (!a.is_array() || (expected >= 0 && static_cast<int>(a.size()) != expected))
    throw std::runtime_error("dimension mismatch in field " + what);
  Vector v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v(i) = a[i].get<double>();
  return v;
}

Matrix matrix_from_json(const json& a, int rows, int cols,
                        const std::string& what) {
  if (!a.is_array() || (rows >= 0 && static_cast<int>(a.size()) != rows))
    throw std::runtime_error("dimension mismatch in field " + what);
  Matrix m(a.size(), cols);
  for (std::size_t r = 0; r < a.size(); ++r)
    m.row(r) = vector_from_json(a[r], cols, what).transpose();
  return m;
}

}  // namespace

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("format error: missing dataset header");
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("format error: bad dataset header: ") +
                             e.what());
  }
  if (h.value("kind", "") != "ssd.dataset")
    throw std::runtime_error("format error: not an ssd.dataset file");
  if (h.value("format_version", -1) != 1)
    throw std::runtime_error("format error: unsupported dataset format version");

  Dataset ds;
  ds.header.format_version = 1;
  ds.header.d_h = h.at("d_h").get<int>();
  ds.header.d_raw = h.at("d_raw").get<int>();
  ds.header.S = h.at("S").get<int>();
  ds.header.count = h.at("count").get<std::int64_t>();
  ds.header.split = h.value("split", "");
  ds.header.provenance = h.value("provenance", "");
  if (ds.header.S < 1)
    throw std::runtime_error("format error: header S must be >= 1");

  std::int64_t idx = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("format error at record " + std::to_string(idx) +
                               ": " + e.what());
    }
    try {
      PromptRecord rec;
      rec.id = r.at("id").get<std::string>();
      rec.h = vector_from_json(r.at("h"), ds.header.d_h, "h");
      rec.samples =
          matrix_from_json(r.at("samples"), ds.header.S, ds.header.d_raw,
                           "samples");
      rec.default_embedding = vector_from_json(
          r.at("default_embedding"), ds.header.d_raw, "default_embedding");
      rec.label = r.at("label").get<int>();
      if (rec.label != 0 && rec.label != 1)
        throw std::runtime_error("label must be 0 or 1");
      if (r.contains("truth")) {
        const json& t = r["truth"];
        Vector w = vector_from_json(t.at("weights"), -1, "truth.weights");
        Matrix mu = matrix_from_json(t.at("means"), static_cast<int>(w.size()),
                                     ds.header.d_raw, "truth.means");
        Matrix sig = matrix_from_json(t.at("scales"), static_cast<int>(w.size()),
                                      ds.header.d_raw, "truth.scales");
        rec.truth.emplace(std::move(w), std::move(mu), std::move(sig));
      }
      ds.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error("format error at record " + std::to_string(idx) +
                               ": " + e.what());
    }
    ++idx;
  }
  if (idx != ds.header.count)
    throw std::runtime_error("format error: header count " +
                             std::to_string(ds.header.count) + " but read " +
                             std::to_string(idx) + " records");
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  if (static_cast<std::int64_t>(ds.records.size()) != ds.header.count)
    throw std::invalid_argument("write_dataset: header count disagrees with records");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  json h = {
      {"kind", "ssd.dataset"}, {"format_version", 1},
      {"d_h", ds.header.d_h},  {"d_raw", ds.header.d_raw},
      {"S", ds.header.S},      {"count", ds.header.count},
      {"split", ds.header.split}, {"provenance", ds.header.provenance},
  };
  out << h.dump() << '\n';
  for (const auto& rec : ds.records) {
    json r = {
        {"id", rec.id},
        {"h", vector_to_json(rec.h)},
        {"samples", matrix_to_json(rec.samples)},
        {"default_embedding", vector_to_json(rec.default_embedding)},
        {"label", rec.label},
    };
    if (rec.truth) {
      r["truth"] = {
          {"weights", vector_to_json(rec.truth->weights)},
          {"means", matrix_to_json(rec.truth->means)},
          {"scales", matrix_to_json(rec.truth->scales)},
      };
    }
    out << r.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

Vector softmax(const Vector& v) {
  Vector e = (v.array() - v.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

Dataset generate_synthetic(const SyntheticTeacherConfig& cfg, int S) {
  if (cfg.n_prompts < 1 || cfg.d_h < 1 || cfg.d_z < 1 || S < 1)
    throw std::invalid_argument("generate_synthetic: bad sizes");
  if (cfg.k_min < 1 || cfg.k_max > 10 || cfg.k_min > cfg.k_max)
    throw std::invalid_argument("generate_synthetic: component range must be within [1,10]");
  if (cfg.separation < 0.0 || cfg.noise_scale <= 0.0)
    throw std::invalid_argument("generate_synthetic: scales must be positive");

  Rng rng(cfg.seed);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.d_h));

  // Fixed random projections shared by all prompts; the truth mixture is a
  // smooth deterministic function of the latent prompt vector through them.
  Vector entropy_dir = rng.normal_vector(cfg.d_h);
  std::vector<Matrix> mean_proj(cfg.k_max);
  for (int k = 0; k < cfg.k_max; ++k) {
    mean_proj[k].resize(cfg.d_z, cfg.d_h);
    for (int r = 0; r < cfg.d_z; ++r)
      mean_proj[k].row(r) = rng.normal_vector(cfg.d_h).transpose();
  }
  Matrix weight_proj(cfg.k_max, cfg.d_h);
  for (int k = 0; k < cfg.k_max; ++k)
    weight_proj.row(k) = rng.normal_vector(cfg.d_h).transpose();

  // Scale modulation amplitude vanishes with the separation scale so that a
  // separation-0 single-component config yields identical truth entropies.
  const double scale_amp = 2.0 * cfg.separation / (1.0 + cfg.separation);
  const double obs_noise = 0.05;

  Dataset ds;
  ds.header.d_h = cfg.d_h;
  ds.header.d_raw = cfg.d_z;
  ds.header.S = S;
  ds.header.count = cfg.n_prompts;
  ds.header.split = "all";
  ds.header.provenance = "synthetic-teacher seed=" + std::to_string(cfg.seed);

  std::vector<double> entropies(cfg.n_prompts);
  for (int i = 0; i < cfg.n_prompts; ++i) {
    Vector w = rng.normal_vector(cfg.d_h);
    const double t = std::tanh(entropy_dir.dot(w) * inv_sqrt_dh);
    const double mod = std::exp(scale_amp * t);
    const int K = rng.uniform_int(cfg.k_min, cfg.k_max);

    Matrix means(K, cfg.d_z), scales(K, cfg.d_z);
    for (int k = 0; k < K; ++k) {
      means.row(k) = (cfg.separation * mod) *
                     (mean_proj[k] * w * inv_sqrt_dh).array().tanh().matrix();
      scales.row(k).setConstant(cfg.noise_scale * mod);
    }
    Vector weights = softmax(weight_proj.topRows(K) * w * inv_sqrt_dh);

    PromptRecord rec;
    rec.id = "p" + std::to_string(i);
    rec.truth.emplace(weights, means, scales);
    entropies[i] = renyi2_entropy(*rec.truth);

    const std::uint64_t draw_seed = rng.next_u64();
    Matrix draws = sample(*rec.truth, draw_seed, S + 1);
    rec.samples = draws.topRows(S);
    rec.default_embedding = draws.row(S).transpose();
    rec.h = w + obs_noise * rng.normal_vector(cfg.d_h);
    ds.records.push_back(std::move(rec));
  }

  // Logistic label rule on the truth entropy, centered at the dataset median
  // plus the configured offset.
  std::vector<double> sorted = entropies;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  for (int i = 0; i < cfg.n_prompts; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-cfg.label_slope *
                                           (entropies[i] - median -
                                            cfg.label_midpoint)));
    ds.records[i].label = rng.uniform() < p ? 1 : 0;
  }
  return ds;
}

std::vector<OodPair> pair_for_ood(const Dataset& ds, std::uint64_t seed) {
  const int n = static_cast<int>(ds.records.size());
  if (n < 2) throw std::invalid_argument("pair_for_ood: need at least 2 prompts");
  Rng rng(seed);
  std::vector<int> perm(n);
  bool ok = false;
  while (!ok) {
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    ok = true;
    for (int i = 0; i < n; ++i)
      if (perm[i] == i) { ok = false; break; }
  }
  std::vector<OodPair> out;
  out.reserve(2 * n);
  for (int i = 0; i < n; ++i) {
    out.push_back({i, ds.records[i].default_embedding, true});
    out.push_back({i, ds.records[perm[i]].default_embedding, false});
  }
  return out;
}

}  // namespace ssd
