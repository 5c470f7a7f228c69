#include <cstdio>
#include <fstream>
#include <set>

#include <doctest.h>

#include "ssd/data.hpp"
#include "ssd/gmm.hpp"

using namespace ssd;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST_CASE("empty dataset round trips") {
  Dataset ds;
  ds.header.d_h = 4;
  ds.header.d_raw = 3;
  ds.header.S = 2;
  ds.header.count = 0;
  ds.header.split = "train";
  const std::string p = "ds_empty.ndjson";
  write_dataset(ds, p);
  auto back = read_dataset(p);
  CHECK(back.records.empty());
  CHECK(back.header.d_h == 4);
  std::remove(p.c_str());
}

TEST_CASE("synthetic dataset round trips bit-exactly") {
  SyntheticTeacherConfig cfg;
  cfg.n_prompts = 20;
  cfg.seed = 42;
  auto ds = generate_synthetic(cfg, 5);
  const std::string p1 = "ds_rt_1.ndjson", p2 = "ds_rt_2.ndjson";
  write_dataset(ds, p1);
  auto back = read_dataset(p1);
  write_dataset(back, p2);
  CHECK(slurp(p1) == slurp(p2));
  for (int i = 0; i < 20; ++i) {
    CHECK(back.records[i].h == ds.records[i].h);
    CHECK(back.records[i].samples == ds.records[i].samples);
    CHECK(back.records[i].label == ds.records[i].label);
    REQUIRE(back.records[i].truth.has_value());
    CHECK(back.records[i].truth->means == ds.records[i].truth->means);
  }
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("schema guards reject malformed files") {
  SyntheticTeacherConfig cfg;
  cfg.n_prompts = 3;
  cfg.seed = 1;
  auto ds = generate_synthetic(cfg, 4);
  const std::string p = "ds_bad.ndjson";

  SUBCASE("count mismatch") {
    ds.header.count = 5;
    CHECK_THROWS_AS(write_dataset(ds, p), std::invalid_argument);
    ds.header.count = 3;
    write_dataset(ds, p);
    std::string body = slurp(p);
    body = body.substr(0, body.rfind("{\"default_embedding"));
    std::ofstream(p) << body;
    CHECK_THROWS_WITH_AS(read_dataset(p), doctest::Contains("count"),
                         std::runtime_error);
  }

  SUBCASE("record with wrong sample count names the record") {
    std::ofstream out(p);
    out << R"({"kind":"ssd.dataset","format_version":1,"d_h":2,"d_raw":1,"S":2,"count":1,"split":"","provenance":""})" << "\n";
    out << R"({"id":"a","h":[0,0],"samples":[[0.0]],"default_embedding":[0.0],"label":0})" << "\n";
    out.close();
    CHECK_THROWS_WITH_AS(read_dataset(p), doctest::Contains("record 0"),
                         std::runtime_error);
  }

  SUBCASE("unknown format version is rejected") {
    std::ofstream out(p);
    out << R"({"kind":"ssd.dataset","format_version":9,"d_h":1,"d_raw":1,"S":1,"count":0})" << "\n";
    out.close();
    CHECK_THROWS_WITH_AS(read_dataset(p), doctest::Contains("version"),
                         std::runtime_error);
  }
  std::remove(p.c_str());
}

TEST_CASE("generate_synthetic: determinism and degenerate config") {
  SyntheticTeacherConfig cfg;
  cfg.n_prompts = 30;
  cfg.seed = 77;
  auto a = generate_synthetic(cfg, 8);
  auto b = generate_synthetic(cfg, 8);
  const std::string p1 = "ds_det_1.ndjson", p2 = "ds_det_2.ndjson";
  write_dataset(a, p1);
  write_dataset(b, p2);
  CHECK(slurp(p1) == slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());

  // Separation 0, single component: constant truth entropy, ~coin labels.
  SyntheticTeacherConfig flat;
  flat.n_prompts = 400;
  flat.k_min = flat.k_max = 1;
  flat.separation = 0.0;
  flat.seed = 5;
  auto ds = generate_synthetic(flat, 4);
  const double h0 = renyi2_entropy(*ds.records[0].truth);
  int positives = 0;
  for (const auto& rec : ds.records) {
    CHECK(renyi2_entropy(*rec.truth) == doctest::Approx(h0).epsilon(1e-12));
    positives += rec.label;
  }
  const double rate = static_cast<double>(positives) / flat.n_prompts;
  CHECK(rate > 0.4);
  CHECK(rate < 0.6);
}

TEST_CASE("generate_synthetic: sample means concentrate around truth means") {
  SyntheticTeacherConfig cfg;
  cfg.n_prompts = 1000;
  cfg.seed = 123;
  const int S = 32;
  auto ds = generate_synthetic(cfg, S);
  int ok = 0;
  for (const auto& rec : ds.records) {
    const Vector centroid = rec.samples.colwise().mean();
    const Vector truth_mean = mixture_mean(*rec.truth);
    // Per-dim standard error from the mixture's marginal variance.
    bool within = true;
    for (int j = 0; j < cfg.d_z; ++j) {
      double second = 0.0;
      for (int k = 0; k < rec.truth->components(); ++k)
        second += rec.truth->weights(k) *
                  (rec.truth->scales(k, j) * rec.truth->scales(k, j) +
                   rec.truth->means(k, j) * rec.truth->means(k, j));
      const double var = second - truth_mean(j) * truth_mean(j);
      const double se = std::sqrt(std::max(var, 1e-12) / S);
      if (std::abs(centroid(j) - truth_mean(j)) > 4.0 * se) within = false;
    }
    if (within) ++ok;
  }
  CHECK(ok >= 990);
}

TEST_CASE("stored truth reproduces its entropy exactly") {
  SyntheticTeacherConfig cfg;
  cfg.n_prompts = 10;
  cfg.seed = 9;
  auto ds = generate_synthetic(cfg, 4);
  const std::string p = "ds_truth.ndjson";
  write_dataset(ds, p);
  auto back = read_dataset(p);
  for (int i = 0; i < 10; ++i)
    CHECK(std::abs(renyi2_entropy(*back.records[i].truth) -
                   renyi2_entropy(*ds.records[i].truth)) < 1e-12);
  std::remove(p.c_str());
}

TEST_CASE("pair_for_ood") {
  SyntheticTeacherConfig cfg;
  cfg.n_prompts = 2;
  cfg.seed = 3;
  auto two = generate_synthetic(cfg, 3);
  auto pairs = pair_for_ood(two, 11);
  REQUIRE(pairs.size() == 4);
  // The only derangement of two elements is the swap.
  CHECK(pairs[1].embedding == two.records[1].default_embedding);
  CHECK(pairs[3].embedding == two.records[0].default_embedding);

  cfg.n_prompts = 50;
  auto ds = generate_synthetic(cfg, 3);
  auto big = pair_for_ood(ds, 12);
  int matched = 0;
  for (const auto& p : big) matched += p.matched;
  CHECK(matched * 2 == static_cast<int>(big.size()));
  // No prompt paired with its own default answer on the mismatch side.
  for (std::size_t i = 1; i < big.size(); i += 2)
    CHECK(big[i].embedding !=
          ds.records[big[i].prompt_index].default_embedding);

  auto rerun = pair_for_ood(ds, 12);
  for (std::size_t i = 0; i < big.size(); ++i) {
    CHECK(big[i].prompt_index == rerun[i].prompt_index);
    CHECK(big[i].embedding == rerun[i].embedding);
  }

  Dataset one;
  one.header.count = 1;
  one.records.resize(1);
  CHECK_THROWS_AS(pair_for_ood(one, 1), std::invalid_argument);
}
