#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssd/data.hpp"
#include "ssd/gmm.hpp"
#include "ssd/mdn.hpp"
#include "ssd/pca.hpp"

namespace ssd {

enum class ScoreKind { kEntropy, kNegLogLikelihood, kProbeProbability, kDispersion };

struct ScoredSet {
  Vector scores;
  std::vector<int> labels;  // binary
  ScoreKind kind = ScoreKind::kEntropy;
};

struct EvalReport {
  std::string metric;
  double point = 0.0;
  double boot_mean = 0.0;
  double boot_std = 0.0;
  int resamples = 0;
  int skipped = 0;  // degenerate resamples lacking both classes
  std::uint64_t seed = 0;
};

// Probability that a random positive outscores a random negative; ties count
// one half (mid-rank convention).
double auroc(const ScoredSet& s);

// Average precision over the descending-score step sweep, equal-score groups
// processed together.
double auprc(const ScoredSet& s);

using MetricFn = std::function<double(const ScoredSet&)>;

EvalReport bootstrap(const ScoredSet& s, const MetricFn& metric,
                     const std::string& metric_name, int resamples,
                     std::uint64_t seed);

// Pearson correlation of mid-ranks.
double spearman(const Vector& a, const Vector& b);

// Root of the mean over dimensions of the per-dimension unbiased sample
// variance of the S embeddings.
double teacher_dispersion(const Matrix& samples);

struct LinearProbe {
  Vector weights;
  double bias = 0.0;
  double final_loss = 0.0;
};

struct ProbeConfig {
  double l2 = 1e-3;
  int iterations = 500;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

// L2-regularized logistic regression by deterministic full-batch gradient
// descent (the PCP baseline and the layer-sweep probe).
LinearProbe train_probe(const Matrix& features, const std::vector<int>& labels,
                        const ProbeConfig& cfg);

double probe_probability(const LinearProbe& p, const Vector& x);

struct LayerSweepResult {
  int chosen_layer = 0;
  std::map<int, double> validation_accuracy;
};

struct SweepConfig {
  double validation_fraction = 0.2;
  ProbeConfig probe;
  std::uint64_t seed = 0;
};

// One probe per layer against shared binary targets; returns the layer with
// the best validation accuracy, ties broken toward the deepest layer.
LayerSweepResult sweep_layers(const std::map<int, Matrix>& layer_features,
                              const std::vector<int>& targets,
                              const SweepConfig& cfg);

// Prompt -> predicted mixture; lets tests inject an oracle student.
using MixtureProvider = std::function<GaussianMixture(const PromptRecord&)>;

MixtureProvider model_provider(const MdnModel& model, const PcaTransform* pca);

struct EvalOptions {
  int resamples = 1000;
  std::uint64_t seed = 0;
};

struct HallucinationEval {
  EvalReport ssd_auroc, ssd_auprc;
  EvalReport td_auroc, td_auprc;
};

HallucinationEval run_hallucination_eval(const MdnModel& model,
                                         const PcaTransform* pca,
                                         const Dataset& ds,
                                         const EvalOptions& opt);
HallucinationEval run_hallucination_eval(const MixtureProvider& student,
                                         const PcaTransform* pca,
                                         const Dataset& ds,
                                         const EvalOptions& opt);

// Matched vs mismatched prompt-answer pairs scored by log q(z|h); matched is
// the positive class.
EvalReport run_ood_eval(const MdnModel& model, const PcaTransform* pca,
                        const Dataset& ds, const EvalOptions& opt);
EvalReport run_ood_eval(const MixtureProvider& student, const PcaTransform* pca,
                        const Dataset& ds, const EvalOptions& opt);

struct FidelityEval {
  double rho_td = 0.0;                 // predicted H2 vs teacher dispersion
  std::optional<double> rho_truth;     // vs ground-truth H2 (synthetic only)
};

FidelityEval run_fidelity(const MdnModel& model, const PcaTransform* pca,
                          const Dataset& ds);
FidelityEval run_fidelity(const MixtureProvider& student,
                          const PcaTransform* pca, const Dataset& ds);

struct ConsensusRow {
  std::string subset;  // all / correct / incorrect
  int n = 0;
  double default_msd = 0.0;
  double ssd_msd = 0.0;
  double default_std_pct = 0.0;  // bootstrap std as % of the mean
  double ssd_std_pct = 0.0;
  double improvement_pct = 0.0;
  double win_rate = 0.0;  // fraction where the mixture mean is strictly closer
};

struct ConsensusEval {
  std::vector<ConsensusRow> rows;
};

// MSD of the default embedding and of the mixture mean to the S-sample
// centroid, overall and split by label.
ConsensusEval run_consensus_eval(const MdnModel& model, const PcaTransform* pca,
                                 const Dataset& ds, const EvalOptions& opt);
ConsensusEval run_consensus_eval(const MixtureProvider& student,
                                 const PcaTransform* pca, const Dataset& ds,
                                 const EvalOptions& opt);

}  // namespace ssd
