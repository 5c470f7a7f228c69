// ssd: synthesize or ingest datasets, fit PCA, train mixture-density
// students, score prompts, run the evaluation suites, and sweep
// hyperparameters. Logs go to stderr; data goes to files or stdout.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssd/data.hpp"
#include "ssd/eval.hpp"
#include "ssd/gmm.hpp"
#include "ssd/mdn.hpp"
#include "ssd/pca.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_snapshot(const std::string& out_path, const std::string& subcommand,
                    const json& resolved) {
  json snap = {{"subcommand", subcommand}, {"resolved", resolved}};
  std::ofstream out(out_path + ".run.json");
  out << snap.dump(2) << '\n';
}

// Flags override values from --config; the resolved value is what runs.
json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json j;
  in >> j;
  return j;
}

template <typename T>
void apply_config(const json& cfg, const CLI::App& app, const std::string& key,
                  T& value) {
  if (cfg.contains(key) && app.count("--" + key) == 0)
    value = cfg.at(key).get<T>();
}

// Samples of every record flattened into one matrix (rows).
ssd::Matrix flatten_samples(const ssd::Dataset& ds) {
  const int S = ds.header.S;
  ssd::Matrix all(static_cast<Eigen::Index>(ds.records.size()) * S,
                  ds.header.d_raw);
  Eigen::Index row = 0;
  for (const auto& rec : ds.records) {
    all.middleRows(row, S) = rec.samples;
    row += S;
  }
  return all;
}

std::vector<ssd::TrainExample> to_examples(const ssd::Dataset& ds,
                                           const ssd::PcaTransform* pca) {
  std::vector<ssd::TrainExample> out;
  out.reserve(ds.records.size());
  for (const auto& rec : ds.records)
    out.push_back({rec.h, pca ? pca_transform_rows(*pca, rec.samples)
                              : rec.samples});
  return out;
}

struct LoadedModel {
  ssd::Checkpoint ck;
  std::optional<ssd::PcaTransform> pca;
};

LoadedModel load_model_and_pca(const std::string& model_path,
                               const std::string& pca_path) {
  LoadedModel lm{ssd::load_model(model_path), std::nullopt};
  if (!pca_path.empty()) {
    lm.pca = ssd::load_pca(pca_path);
    if (!lm.ck.pca_id.empty() && lm.ck.pca_id != lm.pca->id)
      throw std::runtime_error("dimension mismatch: checkpoint was trained "
                               "with pca id " + lm.ck.pca_id +
                               " but file has id " + lm.pca->id);
  } else if (!lm.ck.pca_id.empty()) {
    throw std::runtime_error("checkpoint requires pca id " + lm.ck.pca_id +
                             " (pass --pca)");
  }
  return lm;
}

void check_dataset_dims(const ssd::Dataset& ds, const ssd::MdnModel& model,
                        const ssd::PcaTransform* pca) {
  if (ds.header.d_h != model.config().input_dim)
    throw std::runtime_error("dimension mismatch: dataset d_h=" +
                             std::to_string(ds.header.d_h) + " but model expects " +
                             std::to_string(model.config().input_dim));
  const int target = pca ? pca->d_pca() : ds.header.d_raw;
  if (pca && pca->d_raw() != ds.header.d_raw)
    throw std::runtime_error("dimension mismatch: dataset d_raw=" +
                             std::to_string(ds.header.d_raw) + " but pca expects " +
                             std::to_string(pca->d_raw()));
  if (target != model.config().target_dim)
    throw std::runtime_error("dimension mismatch: target dim " +
                             std::to_string(target) + " but model expects " +
                             std::to_string(model.config().target_dim));
}

json report_to_json(const ssd::EvalReport& r) {
  return {{"metric", r.metric},      {"point", r.point},
          {"boot_mean", r.boot_mean}, {"boot_std", r.boot_std},
          {"resamples", r.resamples}, {"skipped", r.skipped},
          {"seed", r.seed}};
}

void print_report_line(std::ostream& os, const ssd::EvalReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %8.4f  (boot %8.4f +- %.4f, R=%d)",
                r.metric.c_str(), r.point, r.boot_mean, r.boot_std,
                r.resamples);
  os << buf << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic self-distillation pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic-teacher dataset");
  ssd::SyntheticTeacherConfig scfg;
  int synth_s = 32;
  std::string synth_out;
  synth->add_option("--n", scfg.n_prompts, "number of prompts");
  synth->add_option("--dh", scfg.d_h, "prompt representation dim");
  synth->add_option("--dz", scfg.d_z, "embedding dim");
  synth->add_option("--kmin", scfg.k_min, "min truth components");
  synth->add_option("--kmax", scfg.k_max, "max truth components");
  synth->add_option("--components", scfg.k_max, "max truth components (alias)");
  synth->add_option("--separation", scfg.separation, "component separation scale");
  synth->add_option("--noise", scfg.noise_scale, "base component scale");
  synth->add_option("--label-midpoint", scfg.label_midpoint, "label rule midpoint offset");
  synth->add_option("--label-slope", scfg.label_slope, "label rule slope");
  synth->add_option("--samples", synth_s, "teacher samples per prompt (S)");
  synth->add_option("--seed", scfg.seed, "rng seed");
  synth->add_option("--out", synth_out, "output dataset path")->required();
  int synth_holdout = 0;
  std::string synth_holdout_out;
  synth->add_option("--holdout", synth_holdout,
                    "reserve the last N prompts as a held-out split");
  synth->add_option("--holdout-out", synth_holdout_out,
                    "path for the held-out split");

  // fit-pca
  auto* fitpca = app.add_subcommand("fit-pca", "Fit PCA on a dataset's flattened samples");
  std::string fp_dataset, fp_out;
  int fp_dpca = 16;
  fitpca->add_option("--dataset", fp_dataset)->required();
  fitpca->add_option("--dpca", fp_dpca, "reduced dimension");
  fitpca->add_option("--out", fp_out)->required();

  // train
  auto* traincmd = app.add_subcommand("train", "Train an MDN student");
  std::string tr_dataset, tr_pca, tr_out;
  ssd::MdnConfig mcfg;
  mcfg.components = 5;
  mcfg.hidden_width = 128;
  mcfg.depth = 2;
  ssd::TrainConfig tcfg;
  traincmd->add_option("--dataset", tr_dataset)->required();
  traincmd->add_option("--pca", tr_pca, "pca transform file (optional)");
  traincmd->add_option("--k", mcfg.components, "mixture components");
  traincmd->add_option("--width", mcfg.hidden_width, "hidden width");
  traincmd->add_option("--depth", mcfg.depth, "backbone depth");
  traincmd->add_option("--seed", mcfg.seed, "init + shuffle seed");
  traincmd->add_option("--lr", tcfg.learning_rate);
  traincmd->add_option("--batch", tcfg.batch_size);
  traincmd->add_option("--epochs", tcfg.max_epochs);
  traincmd->add_option("--patience", tcfg.patience);
  traincmd->add_option("--val-fraction", tcfg.validation_fraction);
  traincmd->add_option("--clip", tcfg.grad_clip_norm);
  traincmd->add_option("--out", tr_out, "checkpoint path")->required();

  // score
  auto* score = app.add_subcommand("score", "Per-prompt scores as NDJSON");
  std::string sc_model, sc_pca, sc_dataset, sc_mode = "entropy", sc_out;
  score->add_option("--model", sc_model)->required();
  score->add_option("--pca", sc_pca);
  score->add_option("--dataset", sc_dataset)->required();
  score->add_option("--mode", sc_mode)
      ->check(CLI::IsMember({"entropy", "likelihood", "mean"}));
  score->add_option("--out", sc_out, "output path (default stdout)");

  // eval
  auto* evalcmd = app.add_subcommand("eval", "Run evaluation suites");
  std::string ev_model, ev_pca, ev_dataset, ev_out;
  std::vector<std::string> ev_suites{"hallucination", "ood", "fidelity", "consensus"};
  int ev_resamples = 1000;
  std::uint64_t ev_seed = 0;
  evalcmd->add_option("--model", ev_model)->required();
  evalcmd->add_option("--pca", ev_pca);
  evalcmd->add_option("--dataset", ev_dataset)->required();
  evalcmd->add_option("--suite", ev_suites, "suites to run")
      ->check(CLI::IsMember({"hallucination", "ood", "fidelity", "consensus"}));
  evalcmd->add_option("--resamples", ev_resamples);
  evalcmd->add_option("--seed", ev_seed);
  evalcmd->add_option("--out", ev_out, "JSON report path")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Grid over K/H/D/d_pca");
  std::string sw_train, sw_test, sw_out;
  std::vector<int> sw_k{1, 2, 5, 10};
  std::vector<int> sw_width{128};
  std::vector<int> sw_depth{2};
  std::vector<int> sw_dpca{16};
  int sw_epochs = 60, sw_resamples = 200;
  std::uint64_t sw_seed = 0;
  sweep->add_option("--dataset", sw_train, "training dataset")->required();
  sweep->add_option("--test-dataset", sw_test, "held-out dataset")->required();
  sweep->add_option("--k-grid", sw_k);
  sweep->add_option("--width-grid", sw_width);
  sweep->add_option("--depth-grid", sw_depth);
  sweep->add_option("--dpca-grid", sw_dpca);
  sweep->add_option("--epochs", sw_epochs);
  sweep->add_option("--resamples", sw_resamples);
  sweep->add_option("--seed", sw_seed);
  sweep->add_option("--out", sw_out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error[usage]: " << e.what() << '\n';
    return 2;
  }

  try {
    const json file_cfg = load_config_file(config_path);

    if (synth->parsed()) {
      apply_config(file_cfg, *synth, "n", scfg.n_prompts);
      apply_config(file_cfg, *synth, "dh", scfg.d_h);
      apply_config(file_cfg, *synth, "dz", scfg.d_z);
      apply_config(file_cfg, *synth, "separation", scfg.separation);
      apply_config(file_cfg, *synth, "seed", scfg.seed);
      auto ds = ssd::generate_synthetic(scfg, synth_s);
      if (synth_holdout > 0) {
        if (synth_holdout_out.empty())
          throw std::invalid_argument("--holdout requires --holdout-out");
        if (synth_holdout >= scfg.n_prompts)
          throw std::invalid_argument("--holdout must be smaller than --n");
        ssd::Dataset held;
        held.header = ds.header;
        held.header.count = synth_holdout;
        held.header.split = "holdout";
        held.records.assign(ds.records.end() - synth_holdout, ds.records.end());
        ds.records.resize(ds.records.size() - synth_holdout);
        ds.header.count = static_cast<std::int64_t>(ds.records.size());
        ds.header.split = "train";
        ssd::write_dataset(held, synth_holdout_out);
      }
      ssd::write_dataset(ds, synth_out);
      write_snapshot(synth_out, "synth",
                     {{"n", scfg.n_prompts}, {"dh", scfg.d_h}, {"dz", scfg.d_z},
                      {"kmin", scfg.k_min}, {"kmax", scfg.k_max},
                      {"separation", scfg.separation}, {"noise", scfg.noise_scale},
                      {"label_midpoint", scfg.label_midpoint},
                      {"label_slope", scfg.label_slope}, {"samples", synth_s},
                      {"seed", scfg.seed}, {"out", synth_out}});
      std::cerr << "wrote " << ds.records.size() << " prompts to " << synth_out
                << '\n';
    } else if (fitpca->parsed()) {
      apply_config(file_cfg, *fitpca, "dpca", fp_dpca);
      auto ds = ssd::read_dataset(fp_dataset);
      auto t = ssd::fit_pca(flatten_samples(ds), fp_dpca);
      ssd::save_pca(t, fp_out);
      write_snapshot(fp_out, "fit-pca",
                     {{"dataset", fp_dataset}, {"dpca", fp_dpca},
                      {"out", fp_out}, {"id", t.id}});
      std::cerr << "fitted pca " << t.id << " (" << t.d_raw() << " -> "
                << t.d_pca() << ")\n";
    } else if (traincmd->parsed()) {
      auto ds = ssd::read_dataset(tr_dataset);
      std::optional<ssd::PcaTransform> pca;
      if (!tr_pca.empty()) pca = ssd::load_pca(tr_pca);
      mcfg.input_dim = ds.header.d_h;
      mcfg.target_dim = pca ? pca->d_pca() : ds.header.d_raw;
      if (pca && pca->d_raw() != ds.header.d_raw)
        throw std::runtime_error("dimension mismatch: pca d_raw=" +
                                 std::to_string(pca->d_raw()) + " dataset d_raw=" +
                                 std::to_string(ds.header.d_raw));
      tcfg.seed = mcfg.seed;
      auto result = ssd::train(to_examples(ds, pca ? &*pca : nullptr), mcfg, tcfg);
      ssd::save_model(result.model, pca ? pca->id : "", result.best_val_nll,
                      tr_out);
      json log = json::array();
      for (const auto& e : result.log)
        log.push_back({{"epoch", e.epoch}, {"train_nll", e.train_nll},
                       {"val_nll", e.val_nll}});
      write_snapshot(tr_out, "train",
                     {{"dataset", tr_dataset}, {"pca", tr_pca},
                      {"k", mcfg.components}, {"width", mcfg.hidden_width},
                      {"depth", mcfg.depth}, {"seed", mcfg.seed},
                      {"lr", tcfg.learning_rate}, {"batch", tcfg.batch_size},
                      {"epochs", tcfg.max_epochs}, {"patience", tcfg.patience},
                      {"val_fraction", tcfg.validation_fraction},
                      {"clip", tcfg.grad_clip_norm}, {"out", tr_out},
                      {"best_val_nll", result.best_val_nll},
                      {"best_epoch", result.best_epoch},
                      {"training_log", log}});
      std::cerr << "trained " << result.log.size() << " epochs, best val nll "
                << result.best_val_nll << " at epoch " << result.best_epoch
                << '\n';
    } else if (score->parsed()) {
      auto lm = load_model_and_pca(sc_model, sc_pca);
      auto ds = ssd::read_dataset(sc_dataset);
      const ssd::PcaTransform* pca = lm.pca ? &*lm.pca : nullptr;
      check_dataset_dims(ds, lm.ck.model, pca);
      std::ofstream file;
      if (!sc_out.empty()) file.open(sc_out);
      std::ostream& out = sc_out.empty() ? std::cout : file;
      for (const auto& rec : ds.records) {
        const auto mix = lm.ck.model.forward(rec.h);
        json line = {{"id", rec.id}, {"label", rec.label}};
        if (sc_mode == "entropy") {
          line["score"] = ssd::renyi2_entropy(mix);
        } else if (sc_mode == "likelihood") {
          const ssd::Vector z = pca
              ? ssd::pca_transform(*pca, rec.default_embedding)
              : rec.default_embedding;
          line["score"] = ssd::log_density(mix, z);
        } else {
          const ssd::Vector m = ssd::mixture_mean(mix);
          json arr = json::array();
          for (Eigen::Index i = 0; i < m.size(); ++i) arr.push_back(m(i));
          line["mean"] = arr;
        }
        out << line.dump() << '\n';
      }
      if (!sc_out.empty())
        write_snapshot(sc_out, "score",
                       {{"model", sc_model}, {"pca", sc_pca},
                        {"dataset", sc_dataset}, {"mode", sc_mode},
                        {"out", sc_out}});
    } else if (evalcmd->parsed()) {
      auto lm = load_model_and_pca(ev_model, ev_pca);
      auto ds = ssd::read_dataset(ev_dataset);
      const ssd::PcaTransform* pca = lm.pca ? &*lm.pca : nullptr;
      check_dataset_dims(ds, lm.ck.model, pca);
      const ssd::EvalOptions opt{ev_resamples, ev_seed};
      json report;
      for (const std::string& suite : ev_suites) {
        if (suite == "hallucination") {
          auto h = ssd::run_hallucination_eval(lm.ck.model, pca, ds, opt);
          report["hallucination"] = {
              {"ssd_auroc", report_to_json(h.ssd_auroc)},
              {"ssd_auprc", report_to_json(h.ssd_auprc)},
              {"td_auroc", report_to_json(h.td_auroc)},
              {"td_auprc", report_to_json(h.td_auprc)}};
          print_report_line(std::cout, h.ssd_auroc);
          print_report_line(std::cout, h.ssd_auprc);
          print_report_line(std::cout, h.td_auroc);
          print_report_line(std::cout, h.td_auprc);
        } else if (suite == "ood") {
          auto r = ssd::run_ood_eval(lm.ck.model, pca, ds, opt);
          report["ood"] = report_to_json(r);
          print_report_line(std::cout, r);
        } else if (suite == "fidelity") {
          auto f = ssd::run_fidelity(lm.ck.model, pca, ds);
          report["fidelity"]["rho_td"] = f.rho_td;
          if (f.rho_truth) report["fidelity"]["rho_truth"] = *f.rho_truth;
          char buf[120];
          std::snprintf(buf, sizeof(buf), "%-24s %8.4f", "fidelity_rho_td",
                        f.rho_td);
          std::cout << buf << '\n';
          if (f.rho_truth) {
            std::snprintf(buf, sizeof(buf), "%-24s %8.4f", "fidelity_rho_truth",
                          *f.rho_truth);
            std::cout << buf << '\n';
          }
        } else if (suite == "consensus") {
          auto c = ssd::run_consensus_eval(lm.ck.model, pca, ds, opt);
          json rows = json::array();
          std::cout << "consensus (msd to 32-sample centroid)\n"
                    << "  subset     n    default      ssd        win%\n";
          for (const auto& row : c.rows) {
            rows.push_back({{"subset", row.subset}, {"n", row.n},
                            {"default_msd", row.default_msd},
                            {"ssd_msd", row.ssd_msd},
                            {"default_std_pct", row.default_std_pct},
                            {"ssd_std_pct", row.ssd_std_pct},
                            {"improvement_pct", row.improvement_pct},
                            {"win_rate", row.win_rate}});
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "  %-9s %4d  %9.5f  %9.5f  %6.1f", row.subset.c_str(),
                          row.n, row.default_msd, row.ssd_msd,
                          100.0 * row.win_rate);
            std::cout << buf << '\n';
          }
          report["consensus"] = rows;
        }
      }
      std::ofstream out(ev_out);
      out << report.dump(2) << '\n';
      write_snapshot(ev_out, "eval",
                     {{"model", ev_model}, {"pca", ev_pca},
                      {"dataset", ev_dataset}, {"suites", ev_suites},
                      {"resamples", ev_resamples}, {"seed", ev_seed},
                      {"out", ev_out}});
    } else if (sweep->parsed()) {
      auto train_ds = ssd::read_dataset(sw_train);
      auto test_ds = ssd::read_dataset(sw_test);
      std::ofstream out(sw_out);
      if (!out) throw std::runtime_error("cannot open for writing: " + sw_out);
      out << "k,width,depth,d_pca,best_val_nll,ssd_auroc,ssd_auprc,fidelity_rho_td\n";
      for (int dpca : sw_dpca) {
        auto pca = ssd::fit_pca(flatten_samples(train_ds), dpca);
        auto examples = to_examples(train_ds, &pca);
        for (int k : sw_k)
          for (int width : sw_width)
            for (int depth : sw_depth) {
              ssd::MdnConfig mc;
              mc.input_dim = train_ds.header.d_h;
              mc.target_dim = dpca;
              mc.components = k;
              mc.hidden_width = width;
              mc.depth = depth;
              mc.seed = sw_seed;
              ssd::TrainConfig tc;
              tc.max_epochs = sw_epochs;
              tc.seed = sw_seed;
              auto result = ssd::train(examples, mc, tc);
              auto h = ssd::run_hallucination_eval(result.model, &pca, test_ds,
                                                   {sw_resamples, sw_seed});
              auto f = ssd::run_fidelity(result.model, &pca, test_ds);
              char buf[200];
              std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%.6f,%.6f,%.6f,%.6f",
                            k, width, depth, dpca, result.best_val_nll,
                            h.ssd_auroc.point, h.ssd_auprc.point, f.rho_td);
              out << buf << '\n';
              std::cerr << "sweep " << buf << '\n';
            }
      }
      write_snapshot(sw_out, "sweep",
                     {{"dataset", sw_train}, {"test_dataset", sw_test},
                      {"k_grid", sw_k}, {"width_grid", sw_width},
                      {"depth_grid", sw_depth}, {"dpca_grid", sw_dpca},
                      {"epochs", sw_epochs}, {"resamples", sw_resamples},
                      {"seed", sw_seed}, {"out", sw_out}});
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error[invalid]: " << e.what() << '\n';
    return 1;
  } catch (const std::domain_error& e) {
    std::cerr << "error[metric]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    const std::string what = e.what();
    const char* prefix = what.find("format error") != std::string::npos
        ? "error[format]: " : what.find("dimension mismatch") != std::string::npos
        ? "error[dim]: " : "error[io]: ";
    std::cerr << prefix << what << '\n';
    return 1;
  }
  return 0;
}
