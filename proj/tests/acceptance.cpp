// End-to-end acceptance suite. Each numbered check prints one PASS/FAIL
// line; the process exits nonzero if any check fails. argv[1] must be the
// path to the command-line binary (used by the determinism check).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ssd/data.hpp"
#include "ssd/eval.hpp"
#include "ssd/gmm.hpp"
#include "ssd/mdn.hpp"
#include "ssd/pca.hpp"
#include "ssd/rng.hpp"

using namespace ssd;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("[%d] %s  %s\n", criterion, pass ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

GaussianMixture random_mixture(Rng& rng, int max_k, int max_d) {
  const int K = rng.uniform_int(1, max_k);
  const int d = rng.uniform_int(1, max_d);
  Vector logits(K);
  for (int k = 0; k < K; ++k) logits(k) = rng.normal();
  Vector e = (logits.array() - logits.maxCoeff()).exp();
  Vector weights = e / e.sum();
  Matrix means(K, d), scales(K, d);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < d; ++j) {
      means(k, j) = 2.0 * rng.normal();
      scales(k, j) = std::exp(0.5 * rng.normal());
    }
  return GaussianMixture(weights, means, scales);
}

// --- independent metric oracles -------------------------------------------

double auroc_brute(const ScoredSet& s) {
  const int n = static_cast<int>(s.labels.size());
  double num = 0.0;
  std::int64_t pairs = 0;
  for (int i = 0; i < n; ++i) {
    if (s.labels[i] != 1) continue;
    for (int j = 0; j < n; ++j) {
      if (s.labels[j] != 0) continue;
      ++pairs;
      if (s.scores(i) > s.scores(j)) num += 1.0;
      else if (s.scores(i) == s.scores(j)) num += 0.5;
    }
  }
  return num / static_cast<double>(pairs);
}

double auprc_brute(const ScoredSet& s) {
  const int n = static_cast<int>(s.labels.size());
  std::vector<double> uniq(s.scores.data(), s.scores.data() + n);
  std::sort(uniq.begin(), uniq.end(), std::greater<>());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::int64_t n_pos = 0;
  for (int l : s.labels) n_pos += l;
  double ap = 0.0;
  std::int64_t tp_prev = 0;
  for (double thr : uniq) {
    std::int64_t tp = 0, fp = 0;
    for (int i = 0; i < n; ++i) {
      if (s.scores(i) >= thr) {
        if (s.labels[i] == 1) ++tp; else ++fp;
      }
    }
    ap += (static_cast<double>(tp) / (tp + fp)) *
          (static_cast<double>(tp - tp_prev) / n_pos);
    tp_prev = tp;
  }
  return ap;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

int run_cli(const std::string& bin, const std::string& args) {
  const std::string cmd = "\"" + bin + "\" " + args + " 2>/dev/null";
  return std::system(cmd.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <path-to-cli-binary>\n");
    return 2;
  }
  const std::string cli = argv[1];

  // ---- 1. Monte Carlo check of the closed-form collision integral ---------
  {
    const auto t0 = Clock::now();
    Rng rng(20260823);
    double worst = 0.0;
    bool ok = true;
    for (int trial = 0; trial < 100; ++trial) {
      const auto mix = random_mixture(rng, 10, 16);
      const Matrix z = sample(mix, 9000 + trial, 1000000);
      const Vector logq = log_density_batch(mix, z);
      // E_{z~q}[q(z)] estimates the collision integral.
      const double mc = logq.array().exp().mean();
      const double closed = std::exp(-renyi2_entropy(mix));
      const double rel = std::abs(mc - closed) / closed;
      worst = std::max(worst, rel);
      if (rel > 0.01) ok = false;
    }
    const double secs = seconds_since(t0);
    if (secs > 120.0) ok = false;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "collision integral vs 1e6-sample Monte Carlo on 100 random "
                  "mixtures: worst rel err %.4f (limit 0.01), %.1fs (limit 120)",
                  worst, secs);
    report(1, ok, buf);
  }

  // ---- 2. Closed-form entropy spot checks ---------------------------------
  {
    bool ok = true;
    Rng rng(2);
    double worst_single = 0.0, worst_multi = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const int d = rng.uniform_int(1, 16);
      Vector w(1);
      w << 1.0;
      Matrix mu(1, d), sig(1, d);
      double expect = 0.5 * d * std::log(4.0 * M_PI);
      for (int j = 0; j < d; ++j) {
        mu(0, j) = 3.0 * rng.normal();
        sig(0, j) = std::exp(rng.normal());
        expect += std::log(sig(0, j));
      }
      const double got = renyi2_entropy(GaussianMixture(w, mu, sig));
      worst_single = std::max(worst_single, std::abs(got - expect));
      if (std::abs(got - expect) > 1e-9) ok = false;

      // M equal-weight copies pushed >= 20 sigma apart along one axis.
      const int M = rng.uniform_int(2, 6);
      const double sigma0 = sig.maxCoeff();
      Vector wm = Vector::Constant(M, 1.0 / M);
      Matrix mum(M, d), sigm(M, d);
      for (int m = 0; m < M; ++m) {
        mum.row(m) = mu.row(0);
        mum(m, 0) += 25.0 * sigma0 * m;
        sigm.row(m) = sig.row(0);
      }
      const double multi = renyi2_entropy(GaussianMixture(wm, mum, sigm));
      const double err = std::abs(multi - (expect + std::log(M)));
      worst_multi = std::max(worst_multi, err);
      if (err > 1e-3) ok = false;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "single-Gaussian H2 err %.2e (limit 1e-9); separated "
                  "M-component offset ln M err %.2e (limit 1e-3)",
                  worst_single, worst_multi);
    report(2, ok, buf);
  }

  // ---- 3. Gradient vs central finite differences --------------------------
  {
    const auto t0 = Clock::now();
    bool ok = true;
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
      Rng rng(400 + trial);
      MdnConfig cfg;
      cfg.input_dim = rng.uniform_int(1, 6);
      cfg.target_dim = rng.uniform_int(1, 4);
      cfg.components = rng.uniform_int(1, 4);
      cfg.hidden_width = rng.uniform_int(4, 12);
      cfg.depth = rng.uniform_int(1, 3);
      MdnModel model(cfg);
      Vector p = model.parameters();
      for (int i = 0; i < p.size(); ++i) p(i) = 0.3 * rng.normal();
      model.set_parameters(p);
      std::vector<TrainExample> batch(3);
      for (auto& ex : batch) {
        ex.h = rng.normal_vector(cfg.input_dim);
        ex.targets.resize(4, cfg.target_dim);
        for (int i = 0; i < 4; ++i)
          ex.targets.row(i) = rng.normal_vector(cfg.target_dim).transpose();
      }
      Vector grad;
      nll_gradient(model, batch, grad);
      for (int check = 0; check < 10; ++check) {
        const int i = rng.uniform_int(0, static_cast<int>(p.size()) - 1);
        const double eps = 1e-5;
        auto eval_at = [&](double delta) {
          Vector q = p;
          q(i) += delta;
          MdnModel m(cfg);
          m.set_parameters(q);
          double loss = 0.0;
          for (const auto& ex : batch)
            loss += nll_loss(m, ex.h, ex.targets) / batch.size();
          return loss;
        };
        const double fd = (eval_at(eps) - eval_at(-eps)) / (2 * eps);
        const double denom = std::max({std::abs(fd), std::abs(grad(i)), 1e-4});
        const double rel = std::abs(fd - grad(i)) / denom;
        worst = std::max(worst, rel);
        if (rel > 1e-4) ok = false;
      }
    }
    const double secs = seconds_since(t0);
    if (secs > 60.0) ok = false;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "analytic vs finite-difference gradient over 20 random "
                  "configs: worst rel err %.2e (limit 1e-4), %.1fs (limit 60)",
                  worst, secs);
    report(3, ok, buf);
  }

  // ---- Shared full-scale pipeline for 4, 5, 6, 8 ---------------------------
  const auto pipeline_t0 = Clock::now();
  SyntheticTeacherConfig gen;
  gen.n_prompts = 5000;
  gen.label_slope = 8.0;  // steep logistic rule: labels nearly threshold H2
  gen.seed = 20260823;
  Dataset full = generate_synthetic(gen, 32);
  Dataset train_ds, test_ds;
  train_ds.header = test_ds.header = full.header;
  train_ds.records.assign(full.records.begin(), full.records.begin() + 4000);
  test_ds.records.assign(full.records.begin() + 4000, full.records.end());
  train_ds.header.count = 4000;
  test_ds.header.count = 1000;

  std::vector<TrainExample> examples;
  examples.reserve(train_ds.records.size());
  for (const auto& rec : train_ds.records)
    examples.push_back({rec.h, rec.samples});
  MdnConfig mcfg;
  mcfg.input_dim = full.header.d_h;
  mcfg.target_dim = full.header.d_raw;
  mcfg.components = 5;
  mcfg.hidden_width = 128;
  mcfg.depth = 2;
  mcfg.seed = 1;
  TrainConfig tcfg;
  tcfg.seed = 1;
  const TrainResult trained = train(examples, mcfg, tcfg);
  const double pipeline_secs = seconds_since(pipeline_t0);

  // ---- 4. Fidelity of the learned uncertainty -----------------------------
  {
    const FidelityEval f = run_fidelity(trained.model, nullptr, test_ds);
    const bool ok = f.rho_truth && *f.rho_truth >= 0.9 && f.rho_td >= 0.7 &&
                    pipeline_secs <= 900.0;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "4000/1000 pipeline: Spearman vs truth H2 %.4f (need >=0.9), "
                  "vs teacher dispersion %.4f (need >=0.7), train %.0fs "
                  "(limit 900)",
                  f.rho_truth ? *f.rho_truth : -2.0, f.rho_td, pipeline_secs);
    report(4, ok, buf);
  }

  // ---- 5. Hallucination detection beats a shuffled control ----------------
  {
    const HallucinationEval h =
        run_hallucination_eval(trained.model, nullptr, test_ds, {1000, 5});
    ScoredSet shuffled;
    shuffled.scores.resize(test_ds.records.size());
    shuffled.labels.resize(test_ds.records.size());
    for (std::size_t i = 0; i < test_ds.records.size(); ++i) {
      shuffled.scores(static_cast<Eigen::Index>(i)) =
          renyi2_entropy(trained.model.forward(test_ds.records[i].h));
      shuffled.labels[i] = test_ds.records[i].label;
    }
    Rng rng(55);
    rng.shuffle(shuffled.labels);
    const double control = auroc(shuffled);
    const bool ok = h.ssd_auroc.point >= 0.9 &&
                    std::abs(control - 0.5) < 0.06 &&
                    h.ssd_auroc.point > control;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "steep-label AUROC %.4f (need >=0.9), shuffled-label "
                  "control %.4f (need ~0.5)",
                  h.ssd_auroc.point, control);
    report(5, ok, buf);
  }

  // ---- 6. Matched vs mismatched answers -----------------------------------
  {
    const EvalReport r = run_ood_eval(trained.model, nullptr, test_ds, {1000, 6});
    char buf[120];
    std::snprintf(buf, sizeof(buf),
                  "matched-vs-mismatched log-likelihood AUROC %.4f (need >=0.95)",
                  r.point);
    report(6, r.point >= 0.95, buf);
  }

  // ---- 7. Metrics vs brute force; bootstrap reproducibility ---------------
  {
    bool ok = true;
    Rng rng(77);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      const int n = rng.uniform_int(4, 60);
      ScoredSet s;
      s.scores.resize(n);
      s.labels.resize(n);
      bool has_pos = false, has_neg = false;
      for (int i = 0; i < n; ++i) {
        // Few distinct score levels force heavy ties.
        s.scores(i) = 0.25 * rng.uniform_int(0, 5);
        s.labels[i] = rng.uniform() < 0.5 ? 1 : 0;
        (s.labels[i] ? has_pos : has_neg) = true;
      }
      if (!has_pos || !has_neg) {
        s.labels[0] = 1;
        s.labels[n - 1] = 0;
      }
      const double da = std::abs(auroc(s) - auroc_brute(s));
      const double dp = std::abs(auprc(s) - auprc_brute(s));
      worst = std::max({worst, da, dp});
      if (da > 1e-12 || dp > 1e-12) ok = false;
    }

    ScoredSet big;
    big.scores.resize(400);
    big.labels.resize(400);
    for (int i = 0; i < 400; ++i) {
      big.scores(i) = rng.normal();
      big.labels[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    const EvalReport a = bootstrap(big, auroc, "auroc", 1000, 99);
    const EvalReport b = bootstrap(big, auroc, "auroc", 1000, 99);
    std::ostringstream sa, sb;
    sa.precision(17);
    sb.precision(17);
    sa << a.point << a.boot_mean << a.boot_std << a.skipped;
    sb << b.point << b.boot_mean << b.boot_std << b.skipped;
    if (sa.str() != sb.str()) ok = false;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "auroc/auprc vs brute force on 200 tied instances: worst "
                  "diff %.2e (limit 1e-12); bootstrap x2 identical: %s",
                  worst, sa.str() == sb.str() ? "yes" : "no");
    report(7, ok, buf);
  }

  // ---- 8. Oracle student improves consensus over the default answer -------
  {
    const MixtureProvider oracle = [](const PromptRecord& rec) {
      return *rec.truth;
    };
    const ConsensusEval c = run_consensus_eval(oracle, nullptr, test_ds, {1000, 8});
    const ConsensusRow& all = c.rows.front();
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "oracle-injected consensus on %d prompts: win rate %.3f "
                  "(need >0.5), mean-squared-distance %.3f vs default %.3f",
                  all.n, all.win_rate, all.ssd_msd, all.default_msd);
    report(8, all.win_rate > 0.5 && all.n == 1000, buf);
  }

  // ---- 9. Round trips and command-line determinism -------------------------
  {
    bool ok = true;
    std::string detail;
    fs::path tmp = fs::current_path() / "acceptance_tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    const auto P = [&](const char* name) { return (tmp / name).string(); };

    // Dataset round trip.
    write_dataset(test_ds, P("ds1.ndjson"));
    Dataset back = read_dataset(P("ds1.ndjson"));
    write_dataset(back, P("ds2.ndjson"));
    if (slurp(P("ds1.ndjson")) != slurp(P("ds2.ndjson"))) {
      ok = false;
      detail += " dataset-round-trip";
    }

    // PCA round trip.
    Matrix flat(32 * 50, full.header.d_raw);
    for (int i = 0; i < 50; ++i)
      flat.middleRows(32 * i, 32) = test_ds.records[i].samples;
    PcaTransform pca = fit_pca(flat, 4);
    save_pca(pca, P("p1.bin"));
    save_pca(load_pca(P("p1.bin")), P("p2.bin"));
    if (slurp(P("p1.bin")) != slurp(P("p2.bin"))) {
      ok = false;
      detail += " pca-round-trip";
    }

    // Checkpoint round trip, including bit-identical forward passes.
    save_model(trained.model, "", trained.best_val_nll, P("m1.bin"));
    Checkpoint ck = load_model(P("m1.bin"));
    save_model(ck.model, ck.pca_id, trained.best_val_nll, P("m2.bin"));
    if (slurp(P("m1.bin")) != slurp(P("m2.bin"))) {
      ok = false;
      detail += " checkpoint-round-trip";
    }
    for (int i = 0; i < 20; ++i) {
      const auto a = trained.model.forward(test_ds.records[i].h);
      const auto b = ck.model.forward(test_ds.records[i].h);
      if (a.weights != b.weights || a.means != b.means || a.scales != b.scales) {
        ok = false;
        detail += " checkpoint-forward";
        break;
      }
    }

    // Identical seeded command-line invocations produce identical bytes.
    auto chain = [&](const std::string& tag) {
      bool good = true;
      good &= run_cli(cli, "synth --n 200 --seed 7 --out " + P(("s" + tag + ".ndjson").c_str())) == 0;
      good &= run_cli(cli, "fit-pca --dataset " + P(("s" + tag + ".ndjson").c_str()) +
                              " --dpca 4 --out " + P(("f" + tag + ".bin").c_str())) == 0;
      good &= run_cli(cli, "train --dataset " + P(("s" + tag + ".ndjson").c_str()) +
                              " --pca " + P(("f" + tag + ".bin").c_str()) +
                              " --k 2 --width 16 --depth 2 --epochs 3 --out " +
                              P(("t" + tag + ".bin").c_str())) == 0;
      good &= run_cli(cli, "score --model " + P(("t" + tag + ".bin").c_str()) +
                              " --pca " + P(("f" + tag + ".bin").c_str()) +
                              " --dataset " + P(("s" + tag + ".ndjson").c_str()) +
                              " --mode entropy --out " +
                              P(("sc" + tag + ".ndjson").c_str())) == 0;
      return good;
    };
    if (!chain("A") || !chain("B")) {
      ok = false;
      detail += " cli-exit-status";
    }
    const std::vector<std::pair<std::string, std::string>> outs = {
        {"sA.ndjson", "sB.ndjson"},
        {"fA.bin", "fB.bin"},
        {"tA.bin", "tB.bin"},
        {"scA.ndjson", "scB.ndjson"}};
    for (const auto& [a, b] : outs) {
      if (slurp(tmp / a) != slurp(tmp / b)) {
        ok = false;
        detail += " cli-bytes:" + a;
      }
    }
    fs::remove_all(tmp);
    report(9, ok,
           ok ? "dataset/pca/checkpoint round trips bit-exact; seeded CLI "
                "chains byte-identical"
              : "failures:" + detail);
  }

  std::printf("%s (%d/9)\n", g_failures == 0 ? "ALL PASS" : "FAILURES",
              9 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
