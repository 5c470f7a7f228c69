#include "ssd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ssd/rng.hpp"

namespace ssd {

namespace {

void check_scored_set(const ScoredSet& s) {
  if (static_cast<std::size_t>(s.scores.size()) != s.labels.size())
    throw std::invalid_argument("scored set: scores/labels length mismatch");
  for (int l : s.labels)
    if (l != 0 && l != 1)
      throw std::invalid_argument("scored set: labels must be binary");
}

Vector mid_ranks(const Vector& v) {
  const int n = static_cast<int>(v.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return v(a) < v(b); });
  Vector ranks(n);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && v(order[j + 1]) == v(order[i])) ++j;
    const double r = 0.5 * (i + j) + 1.0;  // average of 1-based ranks
    for (int k = i; k <= j; ++k) ranks(order[k]) = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double auroc(const ScoredSet& s) {
  check_scored_set(s);
  const int n = static_cast<int>(s.labels.size());
  std::int64_t n_pos = 0;
  for (int l : s.labels) n_pos += l;
  const std::int64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::domain_error("auroc: needs both classes");
  const Vector ranks = mid_ranks(s.scores);
  double rank_sum = 0.0;
  for (int i = 0; i < n; ++i)
    if (s.labels[i] == 1) rank_sum += ranks(i);
  return (rank_sum - 0.5 * n_pos * (n_pos + 1)) /
         (static_cast<double>(n_pos) * n_neg);
}

double auprc(const ScoredSet& s) {
  check_scored_set(s);
  const int n = static_cast<int>(s.labels.size());
  std::int64_t n_pos = 0;
  for (int l : s.labels) n_pos += l;
  if (n_pos == 0) throw std::domain_error("auprc: needs at least one positive");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return s.scores(a) > s.scores(b);
  });

  double ap = 0.0;
  std::int64_t tp = 0, fp = 0, tp_prev = 0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && s.scores(order[j + 1]) == s.scores(order[i])) ++j;
    for (int k = i; k <= j; ++k) {
      if (s.labels[order[k]] == 1) ++tp; else ++fp;
    }
    const double precision = static_cast<double>(tp) / (tp + fp);
    ap += precision * static_cast<double>(tp - tp_prev) / n_pos;
    tp_prev = tp;
    i = j + 1;
  }
  return ap;
}

EvalReport bootstrap(const ScoredSet& s, const MetricFn& metric,
                     const std::string& metric_name, int resamples,
                     std::uint64_t seed) {
  check_scored_set(s);
  if (resamples < 1) throw std::invalid_argument("bootstrap: resamples >= 1");
  const int n = static_cast<int>(s.labels.size());
  EvalReport rep;
  rep.metric = metric_name;
  rep.point = metric(s);
  rep.resamples = resamples;
  rep.seed = seed;

  Rng rng(seed);
  std::vector<double> values;
  values.reserve(resamples);
  ScoredSet re;
  re.kind = s.kind;
  re.scores.resize(n);
  re.labels.resize(n);
  for (int r = 0; r < resamples; ++r) {
    for (int i = 0; i < n; ++i) {
      const int j = rng.uniform_int(0, n - 1);
      re.scores(i) = s.scores(j);
      re.labels[i] = s.labels[j];
    }
    try {
      values.push_back(metric(re));
    } catch (const std::domain_error&) {
      ++rep.skipped;
    }
  }
  if (rep.skipped * 2 > resamples)
    throw std::domain_error("bootstrap: metric undefined on most resamples");

  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= values.size();
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  rep.boot_mean = mean;
  rep.boot_std = values.size() > 1 ? std::sqrt(var / (values.size() - 1)) : 0.0;
  return rep;
}

double spearman(const Vector& a, const Vector& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman: equal lengths >= 2 required");
  const Vector ra = mid_ranks(a);
  const Vector rb = mid_ranks(b);
  const Vector ca = ra.array() - ra.mean();
  const Vector cb = rb.array() - rb.mean();
  const double va = ca.squaredNorm();
  const double vb = cb.squaredNorm();
  if (va == 0.0 || vb == 0.0)
    throw std::domain_error("spearman: zero rank variance");
  return ca.dot(cb) / std::sqrt(va * vb);
}

double teacher_dispersion(const Matrix& samples) {
  const int n = static_cast<int>(samples.rows());
  if (n < 2) throw std::invalid_argument("teacher_dispersion: need >= 2 samples");
  const Vector mean = samples.colwise().mean();
  const double total_var =
      (samples.rowwise() - mean.transpose()).array().square().sum() /
      (n - 1);
  return std::sqrt(total_var / samples.cols());
}

LinearProbe train_probe(const Matrix& features, const std::vector<int>& labels,
                        const ProbeConfig& cfg) {
  const int n = static_cast<int>(features.rows());
  const int d = static_cast<int>(features.cols());
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("train_probe: feature/label count mismatch");
  std::int64_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1)
      throw std::invalid_argument("train_probe: labels must be binary");
    n_pos += l;
  }
  if (n_pos == 0 || n_pos == n)
    throw std::domain_error("train_probe: needs both classes");

  Vector y(n);
  for (int i = 0; i < n; ++i) y(i) = labels[i];

  LinearProbe probe;
  probe.weights = Vector::Zero(d);
  double bias = 0.0;
  for (int it = 0; it < cfg.iterations; ++it) {
    Vector logits = features * probe.weights;
    logits.array() += bias;
    const Vector p = 1.0 / (1.0 + (-logits.array()).exp());
    const Vector err = p - y;
    const Vector gw =
        features.transpose() * err / n + cfg.l2 * probe.weights;
    const double gb = err.mean();
    probe.weights -= cfg.learning_rate * gw;
    bias -= cfg.learning_rate * gb;
  }
  probe.bias = bias;

  Vector logits = features * probe.weights;
  logits.array() += bias;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    // log(1 + exp(x)) without overflow
    const double x = logits(i);
    const double lse = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    loss += lse - y(i) * x;
  }
  probe.final_loss = loss / n + 0.5 * cfg.l2 * probe.weights.squaredNorm();
  return probe;
}

double probe_probability(const LinearProbe& p, const Vector& x) {
  if (x.size() != p.weights.size())
    throw std::invalid_argument("probe_probability: dimension mismatch");
  return 1.0 / (1.0 + std::exp(-(p.weights.dot(x) + p.bias)));
}

LayerSweepResult sweep_layers(const std::map<int, Matrix>& layer_features,
                              const std::vector<int>& targets,
                              const SweepConfig& cfg) {
  if (layer_features.empty())
    throw std::invalid_argument("sweep_layers: need at least one layer");
  const int n = static_cast<int>(targets.size());
  for (const auto& [layer, feats] : layer_features)
    if (feats.rows() != n)
      throw std::invalid_argument("sweep_layers: inconsistent target length at layer " +
                                  std::to_string(layer));

  // Shared split across layers so accuracies are comparable.
  Rng rng(cfg.seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const int n_val = std::max(1, static_cast<int>(cfg.validation_fraction * n));
  const int n_train = n - n_val;
  if (n_train < 1) throw std::invalid_argument("sweep_layers: dataset too small");

  LayerSweepResult result;
  double best_acc = -1.0;
  for (const auto& [layer, feats] : layer_features) {
    Matrix train_x(n_train, feats.cols());
    std::vector<int> train_y(n_train);
    for (int i = 0; i < n_train; ++i) {
      train_x.row(i) = feats.row(order[i]);
      train_y[i] = targets[order[i]];
    }
    const LinearProbe probe = train_probe(train_x, train_y, cfg.probe);
    int correct = 0;
    for (int i = n_train; i < n; ++i) {
      const double p = probe_probability(probe, feats.row(order[i]).transpose());
      if ((p >= 0.5 ? 1 : 0) == targets[order[i]]) ++correct;
    }
    const double acc = static_cast<double>(correct) / n_val;
    result.validation_accuracy[layer] = acc;
    if (acc >= best_acc) {  // ties break toward the deeper layer
      best_acc = acc;
      result.chosen_layer = layer;
    }
  }
  return result;
}

MixtureProvider model_provider(const MdnModel& model, const PcaTransform* pca) {
  if (pca && pca->d_pca() != model.config().target_dim)
    throw std::invalid_argument("model/pca target dimension mismatch");
  return [&model](const PromptRecord& rec) { return model.forward(rec.h); };
}

namespace {

Matrix record_samples(const PromptRecord& rec, const PcaTransform* pca) {
  return pca ? pca_transform_rows(*pca, rec.samples) : rec.samples;
}

Vector record_default(const PromptRecord& rec, const PcaTransform* pca) {
  return pca ? pca_transform(*pca, rec.default_embedding)
             : rec.default_embedding;
}

}  // namespace

HallucinationEval run_hallucination_eval(const MixtureProvider& student,
                                         const PcaTransform* pca,
                                         const Dataset& ds,
                                         const EvalOptions& opt) {
  const int n = static_cast<int>(ds.records.size());
  ScoredSet ssd{Vector(n), std::vector<int>(n), ScoreKind::kEntropy};
  ScoredSet td{Vector(n), std::vector<int>(n), ScoreKind::kDispersion};
  for (int i = 0; i < n; ++i) {
    const auto& rec = ds.records[i];
    ssd.scores(i) = renyi2_entropy(student(rec));
    td.scores(i) = teacher_dispersion(record_samples(rec, pca));
    ssd.labels[i] = td.labels[i] = rec.label;
  }
  HallucinationEval out;
  out.ssd_auroc = bootstrap(ssd, auroc, "ssd_entropy_auroc", opt.resamples, opt.seed);
  out.ssd_auprc = bootstrap(ssd, auprc, "ssd_entropy_auprc", opt.resamples, opt.seed + 1);
  out.td_auroc = bootstrap(td, auroc, "td_auroc", opt.resamples, opt.seed + 2);
  out.td_auprc = bootstrap(td, auprc, "td_auprc", opt.resamples, opt.seed + 3);
  return out;
}

HallucinationEval run_hallucination_eval(const MdnModel& model,
                                         const PcaTransform* pca,
                                         const Dataset& ds,
                                         const EvalOptions& opt) {
  return run_hallucination_eval(model_provider(model, pca), pca, ds, opt);
}

EvalReport run_ood_eval(const MixtureProvider& student, const PcaTransform* pca,
                        const Dataset& ds, const EvalOptions& opt) {
  const auto pairs = pair_for_ood(ds, opt.seed);
  const int n = static_cast<int>(pairs.size());
  ScoredSet s{Vector(n), std::vector<int>(n), ScoreKind::kNegLogLikelihood};
  for (int i = 0; i < n; ++i) {
    const auto& rec = ds.records[pairs[i].prompt_index];
    const Vector z = pca ? pca_transform(*pca, pairs[i].embedding)
                         : pairs[i].embedding;
    s.scores(i) = log_density(student(rec), z);
    s.labels[i] = pairs[i].matched ? 1 : 0;  // matched pairs score high
  }
  return bootstrap(s, auroc, "ood_loglik_auroc", opt.resamples, opt.seed);
}

EvalReport run_ood_eval(const MdnModel& model, const PcaTransform* pca,
                        const Dataset& ds, const EvalOptions& opt) {
  return run_ood_eval(model_provider(model, pca), pca, ds, opt);
}

FidelityEval run_fidelity(const MixtureProvider& student,
                          const PcaTransform* pca, const Dataset& ds) {
  const int n = static_cast<int>(ds.records.size());
  if (n < 2) throw std::invalid_argument("run_fidelity: need >= 2 prompts");
  Vector h2(n), td(n), truth_h2(n);
  bool have_truth = true;
  for (int i = 0; i < n; ++i) {
    const auto& rec = ds.records[i];
    h2(i) = renyi2_entropy(student(rec));
    td(i) = teacher_dispersion(record_samples(rec, pca));
    if (rec.truth) truth_h2(i) = renyi2_entropy(*rec.truth);
    else have_truth = false;
  }
  FidelityEval out;
  out.rho_td = spearman(h2, td);
  if (have_truth) out.rho_truth = spearman(h2, truth_h2);
  return out;
}

FidelityEval run_fidelity(const MdnModel& model, const PcaTransform* pca,
                          const Dataset& ds) {
  return run_fidelity(model_provider(model, pca), pca, ds);
}

namespace {

ConsensusRow consensus_row(const std::string& subset,
                           const std::vector<double>& def_sq,
                           const std::vector<double>& ssd_sq, int resamples,
                           std::uint64_t seed) {
  ConsensusRow row;
  row.subset = subset;
  row.n = static_cast<int>(def_sq.size());
  if (row.n == 0) return row;
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / v.size();
  };
  row.default_msd = mean_of(def_sq);
  row.ssd_msd = mean_of(ssd_sq);
  row.improvement_pct = row.default_msd > 0.0
      ? 100.0 * (row.default_msd - row.ssd_msd) / row.default_msd
      : 0.0;
  int wins = 0;
  for (int i = 0; i < row.n; ++i)
    if (ssd_sq[i] < def_sq[i]) ++wins;
  row.win_rate = static_cast<double>(wins) / row.n;

  // Bootstrap std of the mean MSD, reported as a percentage of the mean.
  Rng rng(seed);
  auto boot_std_pct = [&](const std::vector<double>& v, double mean) {
    double m1 = 0.0, m2 = 0.0;
    for (int r = 0; r < resamples; ++r) {
      double s = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i)
        s += v[rng.uniform_int(0, static_cast<int>(v.size()) - 1)];
      const double bm = s / v.size();
      m1 += bm;
      m2 += bm * bm;
    }
    m1 /= resamples;
    m2 = m2 / resamples - m1 * m1;
    const double sd = std::sqrt(std::max(0.0, m2));
    return mean > 0.0 ? 100.0 * sd / mean : 0.0;
  };
  row.default_std_pct = boot_std_pct(def_sq, row.default_msd);
  row.ssd_std_pct = boot_std_pct(ssd_sq, row.ssd_msd);
  return row;
}

}  // namespace

ConsensusEval run_consensus_eval(const MixtureProvider& student,
                                 const PcaTransform* pca, const Dataset& ds,
                                 const EvalOptions& opt) {
  const int n = static_cast<int>(ds.records.size());
  std::vector<double> def_all, ssd_all, def_c, ssd_c, def_i, ssd_i;
  for (int i = 0; i < n; ++i) {
    const auto& rec = ds.records[i];
    const Matrix samples = record_samples(rec, pca);
    const Vector centroid = samples.colwise().mean();
    const double d_def = (record_default(rec, pca) - centroid).squaredNorm();
    const double d_ssd = (mixture_mean(student(rec)) - centroid).squaredNorm();
    def_all.push_back(d_def);
    ssd_all.push_back(d_ssd);
    if (rec.label == 0) { def_c.push_back(d_def); ssd_c.push_back(d_ssd); }
    else { def_i.push_back(d_def); ssd_i.push_back(d_ssd); }
  }
  ConsensusEval out;
  out.rows.push_back(consensus_row("all", def_all, ssd_all, opt.resamples, opt.seed));
  out.rows.push_back(consensus_row("correct", def_c, ssd_c, opt.resamples, opt.seed + 1));
  out.rows.push_back(consensus_row("incorrect", def_i, ssd_i, opt.resamples, opt.seed + 2));
  return out;
}

ConsensusEval run_consensus_eval(const MdnModel& model, const PcaTransform* pca,
                                 const Dataset& ds, const EvalOptions& opt) {
  return run_consensus_eval(model_provider(model, pca), pca, ds, opt);
}

}  // namespace ssd
