#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssd/gmm.hpp"

namespace ssd {

// One prompt: its representation, the teacher's sampled answer embeddings,
// the low-temperature default answer, and the correctness label
// (1 = hallucination / incorrect).
struct PromptRecord {
  std::string id;
  Vector h;                              // d_h
  Matrix samples;                        // S x d_raw
  Vector default_embedding;              // d_raw
  int label = 0;
  std::optional<GaussianMixture> truth;  // synthetic data only
};

struct DatasetHeader {
  int format_version = 1;
  int d_h = 0;
  int d_raw = 0;
  int S = 0;
  std::int64_t count = 0;
  std::string split;
  std::string provenance;
};

struct Dataset {
  DatasetHeader header;
  std::vector<PromptRecord> records;
};

// NDJSON: one header line, then one record per line. Lossless float round
// trip; rejects count or dimension mismatches with the offending index.
Dataset read_dataset(const std::string& path);
void write_dataset(const Dataset& ds, const std::string& path);

struct SyntheticTeacherConfig {
  int n_prompts = 1000;
  int d_h = 16;
  int d_z = 8;
  int k_min = 1;
  int k_max = 3;
  double separation = 3.0;    // distance scale between truth component means
  double noise_scale = 0.5;   // base per-dimension standard deviation
  double label_midpoint = 0;  // offset from the dataset median truth entropy
  double label_slope = 1.0;   // logistic slope on truth entropy
  std::uint64_t seed = 0;
};

// Draws a ground-truth mixture per prompt as a smooth function of a latent
// prompt vector, samples S teacher embeddings from it, and assigns labels by
// a logistic rule on the truth's Renyi-2 entropy.
Dataset generate_synthetic(const SyntheticTeacherConfig& cfg, int S = 32);

struct OodPair {
  int prompt_index = 0;
  Vector embedding;  // raw space
  bool matched = false;
};

// Two entries per prompt: its own default embedding (matched) and one drawn
// from a different prompt via a seeded derangement.
std::vector<OodPair> pair_for_ood(const Dataset& ds, std::uint64_t seed);

}  // namespace ssd
