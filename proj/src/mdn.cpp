#include "ssd/mdn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "binio.hpp"
#include "ssd/rng.hpp"

namespace ssd {

namespace {

constexpr double kLn2Pi = 1.8378770664093454836;

void validate_config(const MdnConfig& cfg) {
  if (cfg.input_dim < 1 || cfg.target_dim < 1 || cfg.components < 1 ||
      cfg.hidden_width < 1 || cfg.depth < 1 || cfg.scale_floor <= 0.0)
    throw std::invalid_argument("invalid MdnConfig");
}

// Offsets into the flat parameter vector. Layer l weight/bias, then the
// logits, means, and log-scales heads.
struct Layout {
  int d_h, d_z, K, H, D;
  std::vector<int> layer_w, layer_b;
  int logits_w, logits_b, means_w, means_b, scales_w, scales_b, total;

  explicit Layout(const MdnConfig& cfg)
      : d_h(cfg.input_dim), d_z(cfg.target_dim), K(cfg.components),
        H(cfg.hidden_width), D(cfg.depth) {
    int off = 0;
    for (int l = 0; l < D; ++l) {
      const int in = l == 0 ? d_h : H;
      layer_w.push_back(off); off += H * in;
      layer_b.push_back(off); off += H;
    }
    logits_w = off; off += K * H;
    logits_b = off; off += K;
    means_w = off; off += K * d_z * H;
    means_b = off; off += K * d_z;
    scales_w = off; off += K * d_z * H;
    scales_b = off; off += K * d_z;
    total = off;
  }

  int layer_in(int l) const { return l == 0 ? d_h : H; }
};

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using ConstVecMap = Eigen::Map<const Vector>;
using MutVecMap = Eigen::Map<Vector>;

// Eigen maps are column-major; weights are stored as (out x in) blocks.
ConstMap wmat(const Vector& p, int off, int rows, int cols) {
  return ConstMap(p.data() + off, rows, cols);
}
ConstVecMap wvec(const Vector& p, int off, int n) {
  return ConstVecMap(p.data() + off, n);
}
MutMap gmat(Vector& p, int off, int rows, int cols) {
  return MutMap(p.data() + off, rows, cols);
}
MutVecMap gvec(Vector& p, int off, int n) {
  return MutVecMap(p.data() + off, n);
}

struct ForwardCache {
  std::vector<Vector> hidden;  // post-ReLU activations per layer
  Vector logits;               // K
  Vector mu;                   // K*d_z, component-major
  Vector s_raw;                // K*d_z, pre-clamp log-scales
  Vector s;                    // K*d_z, clamped log-scales
  Vector log_weights;          // K
};

ForwardCache run_forward(const Layout& L, const Vector& params,
                         const Vector& h, double scale_floor) {
  ForwardCache c;
  Vector a = h;
  c.hidden.reserve(L.D);
  for (int l = 0; l < L.D; ++l) {
    a = (wmat(params, L.layer_w[l], L.H, L.layer_in(l)) * a +
         wvec(params, L.layer_b[l], L.H)).cwiseMax(0.0);
    c.hidden.push_back(a);
  }
  c.logits = wmat(params, L.logits_w, L.K, L.H) * a +
             wvec(params, L.logits_b, L.K);
  c.mu = wmat(params, L.means_w, L.K * L.d_z, L.H) * a +
         wvec(params, L.means_b, L.K * L.d_z);
  c.s_raw = wmat(params, L.scales_w, L.K * L.d_z, L.H) * a +
            wvec(params, L.scales_b, L.K * L.d_z);
  c.s = c.s_raw.cwiseMax(std::log(scale_floor));
  c.log_weights = c.logits.array() - log_sum_exp(c.logits);
  return c;
}

GaussianMixture cache_to_mixture(const Layout& L, const ForwardCache& c) {
  Vector w = c.log_weights.array().exp();
  w /= w.sum();  // renormalize away exp/log round-off
  Matrix mu(L.K, L.d_z), sig(L.K, L.d_z);
  for (int k = 0; k < L.K; ++k) {
    mu.row(k) = c.mu.segment(k * L.d_z, L.d_z).transpose();
    sig.row(k) = c.s.segment(k * L.d_z, L.d_z).array().exp().transpose();
  }
  return GaussianMixture(std::move(w), std::move(mu), std::move(sig));
}

// Mean NLL over the example's targets plus head gradients (d_logits, d_mu,
// d_s) accumulated into the provided buffers.
double example_loss_and_head_grads(const Layout& L, const ForwardCache& c,
                                   const Matrix& targets, Vector* d_logits,
                                   Vector* d_mu, Vector* d_s) {
  const int S = static_cast<int>(targets.rows());
  const int K = L.K;
  const int d = L.d_z;
  const double inv_s = 1.0 / S;
  double loss = 0.0;
  Vector comp_log(K), gamma(K);
  for (int t = 0; t < S; ++t) {
    const Vector z = targets.row(t).transpose();
    for (int k = 0; k < K; ++k) {
      const auto s = c.s.segment(k * d, d).array();
      const auto diff = (z - c.mu.segment(k * d, d)).array() * (-s).exp();
      comp_log(k) = c.log_weights(k) - 0.5 * d * kLn2Pi - s.sum() -
                    0.5 * diff.square().sum();
    }
    const double lse = log_sum_exp(comp_log);
    loss -= lse * inv_s;
    if (!d_logits) continue;
    gamma = (comp_log.array() - lse).exp();
    *d_logits += inv_s * (c.log_weights.array().exp() - gamma.array()).matrix();
    for (int k = 0; k < K; ++k) {
      const auto s = c.s.segment(k * d, d).array();
      const auto inv_var = (-2.0 * s).exp();
      const auto diff = (z - c.mu.segment(k * d, d)).array();
      d_mu->segment(k * d, d).array() -= inv_s * gamma(k) * diff * inv_var;
      d_s->segment(k * d, d).array() -=
          inv_s * gamma(k) * (diff.square() * inv_var - 1.0);
    }
  }
  return loss;
}

void backprop_example(const Layout& L, const Vector& params,
                      const Vector& input, const ForwardCache& c,
                      const Vector& d_logits, const Vector& d_mu,
                      const Vector& d_s_clamped, double scale_floor,
                      double weight, Vector& grad) {
  // Clamped coordinates carry no gradient.
  const double ln_floor = std::log(scale_floor);
  Vector d_s = d_s_clamped;
  for (int i = 0; i < d_s.size(); ++i)
    if (c.s_raw(i) <= ln_floor) d_s(i) = 0.0;

  const Vector& top = c.hidden.back();
  gmat(grad, L.logits_w, L.K, L.H).noalias() += weight * d_logits * top.transpose();
  gvec(grad, L.logits_b, L.K) += weight * d_logits;
  gmat(grad, L.means_w, L.K * L.d_z, L.H).noalias() +=
      weight * d_mu * top.transpose();
  gvec(grad, L.means_b, L.K * L.d_z) += weight * d_mu;
  gmat(grad, L.scales_w, L.K * L.d_z, L.H).noalias() +=
      weight * d_s * top.transpose();
  gvec(grad, L.scales_b, L.K * L.d_z) += weight * d_s;

  Vector g = wmat(params, L.logits_w, L.K, L.H).transpose() * d_logits +
             wmat(params, L.means_w, L.K * L.d_z, L.H).transpose() * d_mu +
             wmat(params, L.scales_w, L.K * L.d_z, L.H).transpose() * d_s;
  for (int l = L.D - 1; l >= 0; --l) {
    g = (c.hidden[l].array() > 0.0).select(g, 0.0);
    const Vector& prev = l == 0 ? input : c.hidden[l - 1];
    gmat(grad, L.layer_w[l], L.H, L.layer_in(l)).noalias() +=
        weight * g * prev.transpose();
    gvec(grad, L.layer_b[l], L.H) += weight * g;
    if (l > 0) g = wmat(params, L.layer_w[l], L.H, L.layer_in(l)).transpose() * g;
  }
}

}  // namespace

MdnModel::MdnModel(const MdnConfig& cfg) : cfg_(cfg) {
  validate_config(cfg);
  params_ = Vector::Zero(Layout(cfg).total);
}

int mdn_parameter_count(const MdnConfig& cfg) {
  validate_config(cfg);
  return Layout(cfg).total;
}

MdnModel MdnModel::initialized(const MdnConfig& cfg, const Vector& target_mean,
                               const Vector& target_std) {
  if (target_mean.size() != cfg.target_dim ||
      target_std.size() != cfg.target_dim)
    throw std::invalid_argument("initialized: target stats dimension mismatch");
  MdnModel m(cfg);
  const Layout L(cfg);
  Rng rng(cfg.seed);
  auto fill_uniform = [&](int off, int rows, int cols) {
    const double b = std::sqrt(1.0 / cols);
    auto w = gmat(m.params_, off, rows, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r)
        w(r, c) = b * (2.0 * rng.uniform() - 1.0);
  };
  for (int l = 0; l < L.D; ++l) fill_uniform(L.layer_w[l], L.H, L.layer_in(l));
  fill_uniform(L.logits_w, L.K, L.H);
  fill_uniform(L.means_w, L.K * L.d_z, L.H);
  fill_uniform(L.scales_w, L.K * L.d_z, L.H);
  for (int k = 0; k < L.K; ++k) {
    gvec(m.params_, L.means_b, L.K * L.d_z).segment(k * L.d_z, L.d_z) =
        target_mean;
    gvec(m.params_, L.scales_b, L.K * L.d_z).segment(k * L.d_z, L.d_z) =
        target_std.cwiseMax(cfg.scale_floor).array().log();
  }
  return m;
}

GaussianMixture MdnModel::forward(const Vector& h) const {
  if (h.size() != cfg_.input_dim)
    throw std::invalid_argument("forward: input dimension mismatch");
  const Layout L(cfg_);
  return cache_to_mixture(L, run_forward(L, params_, h, cfg_.scale_floor));
}

void MdnModel::set_parameters(const Vector& p) {
  if (p.size() != params_.size())
    throw std::invalid_argument("set_parameters: size mismatch");
  params_ = p;
}

void MdnModel::quantize_to_f32() {
  for (int i = 0; i < params_.size(); ++i)
    params_(i) = static_cast<double>(static_cast<float>(params_(i)));
}

double nll_loss(const MdnModel& model, const Vector& h, const Matrix& targets) {
  if (targets.rows() < 1)
    throw std::invalid_argument("nll_loss: empty target list");
  if (h.size() != model.config().input_dim ||
      targets.cols() != model.config().target_dim)
    throw std::invalid_argument("nll_loss: dimension mismatch");
  const Layout L(model.config());
  const ForwardCache c =
      run_forward(L, model.parameters(), h, model.config().scale_floor);
  return example_loss_and_head_grads(L, c, targets, nullptr, nullptr, nullptr);
}

double nll_gradient(const MdnModel& model,
                    const std::vector<TrainExample>& batch, Vector& grad) {
  if (batch.empty()) throw std::invalid_argument("nll_gradient: empty batch");
  const Layout L(model.config());
  grad = Vector::Zero(L.total);
  const double w = 1.0 / batch.size();
  double loss = 0.0;
  Vector d_logits(L.K), d_mu(L.K * L.d_z), d_s(L.K * L.d_z);
  for (const auto& ex : batch) {
    if (ex.h.size() != L.d_h || ex.targets.cols() != L.d_z ||
        ex.targets.rows() < 1)
      throw std::invalid_argument("nll_gradient: example dimension mismatch");
    const ForwardCache c =
        run_forward(L, model.parameters(), ex.h, model.config().scale_floor);
    d_logits.setZero();
    d_mu.setZero();
    d_s.setZero();
    loss += w * example_loss_and_head_grads(L, c, ex.targets, &d_logits, &d_mu,
                                            &d_s);
    backprop_example(L, model.parameters(), ex.h, c, d_logits, d_mu, d_s,
                     model.config().scale_floor, w, grad);
  }
  return loss;
}

TrainResult train(const std::vector<TrainExample>& dataset,
                  const MdnConfig& mdn_cfg, const TrainConfig& train_cfg) {
  validate_config(mdn_cfg);
  const int n = static_cast<int>(dataset.size());
  if (train_cfg.validation_fraction <= 0.0 ||
      train_cfg.validation_fraction >= 1.0)
    throw std::invalid_argument("train: validation fraction must be in (0,1)");
  if (n < train_cfg.batch_size)
    throw std::invalid_argument("train: dataset smaller than batch size");
  for (int i = 0; i < n; ++i)
    if (dataset[i].targets.rows() < 1 ||
        dataset[i].targets.cols() != mdn_cfg.target_dim ||
        dataset[i].h.size() != mdn_cfg.input_dim)
      throw std::invalid_argument("train: bad example at index " +
                                  std::to_string(i));

  // Target moments for head initialization.
  Vector mean = Vector::Zero(mdn_cfg.target_dim);
  std::int64_t count = 0;
  for (const auto& ex : dataset) {
    mean += ex.targets.colwise().sum().transpose();
    count += ex.targets.rows();
  }
  mean /= static_cast<double>(count);
  Vector var = Vector::Zero(mdn_cfg.target_dim);
  for (const auto& ex : dataset)
    var += (ex.targets.rowwise() - mean.transpose())
               .array().square().colwise().sum().matrix().transpose();
  Vector stddev = (var / static_cast<double>(count)).cwiseSqrt();

  MdnModel model = MdnModel::initialized(mdn_cfg, mean, stddev);

  Rng rng(train_cfg.seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const int n_val = std::max(1, static_cast<int>(
      std::ceil(train_cfg.validation_fraction * n)));
  const int n_train = n - n_val;
  if (n_train < 1) throw std::invalid_argument("train: no training examples left");
  std::vector<int> train_idx(order.begin(), order.begin() + n_train);
  std::vector<int> val_idx(order.begin() + n_train, order.end());

  auto eval_nll = [&](const std::vector<int>& idx) {
    double s = 0.0;
    for (int i : idx)
      s += nll_loss(model, dataset[i].h, dataset[i].targets);
    return s / idx.size();
  };

  Vector params = model.parameters();
  Vector m_t = Vector::Zero(params.size());
  Vector v_t = Vector::Zero(params.size());
  Vector grad;
  int adam_step = 0;

  TrainResult result{model, {}, std::numeric_limits<double>::infinity(), 0};
  Vector best_params = params;
  int since_best = 0;

  std::vector<TrainExample> batch;
  for (int epoch = 0; epoch < train_cfg.max_epochs; ++epoch) {
    rng.shuffle(train_idx);
    double epoch_loss = 0.0;
    int n_batches = 0;
    for (int start = 0; start < n_train; start += train_cfg.batch_size) {
      const int end = std::min(n_train, start + train_cfg.batch_size);
      batch.clear();
      for (int i = start; i < end; ++i) batch.push_back(dataset[train_idx[i]]);
      const double loss = nll_gradient(model, batch, grad);
      if (!std::isfinite(loss))
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch) + " batch " +
                                 std::to_string(n_batches));
      epoch_loss += loss;
      ++n_batches;

      const double gn = grad.norm();
      if (gn > train_cfg.grad_clip_norm)
        grad *= train_cfg.grad_clip_norm / gn;

      ++adam_step;
      m_t = train_cfg.beta1 * m_t + (1.0 - train_cfg.beta1) * grad;
      v_t = train_cfg.beta2 * v_t +
            (1.0 - train_cfg.beta2) * grad.array().square().matrix();
      const double bc1 = 1.0 - std::pow(train_cfg.beta1, adam_step);
      const double bc2 = 1.0 - std::pow(train_cfg.beta2, adam_step);
      params.array() -= train_cfg.learning_rate * (m_t.array() / bc1) /
                        ((v_t.array() / bc2).sqrt() + 1e-8);
      model.set_parameters(params);
    }

    const double val_nll = eval_nll(val_idx);
    result.log.push_back({epoch, epoch_loss / std::max(1, n_batches), val_nll});
    if (val_nll < result.best_val_nll) {
      result.best_val_nll = val_nll;
      result.best_epoch = epoch;
      best_params = params;
      since_best = 0;
    } else if (++since_best >= train_cfg.patience) {
      break;
    }
  }

  result.model.set_parameters(best_params);
  result.model.quantize_to_f32();
  return result;
}

void save_model(const MdnModel& model, const std::string& pca_id,
                double best_val_nll, const std::string& path) {
  const MdnConfig& c = model.config();
  nlohmann::json header = {
      {"kind", "ssd.mdn"},
      {"format_version", 1},
      {"config",
       {{"input_dim", c.input_dim},
        {"target_dim", c.target_dim},
        {"components", c.components},
        {"hidden_width", c.hidden_width},
        {"depth", c.depth},
        {"scale_floor", c.scale_floor},
        {"seed", c.seed}}},
      {"pca_id", pca_id},
      {"best_val_nll", best_val_nll},
      {"param_count", model.parameter_count()}};
  std::vector<float> block;
  block.reserve(model.parameter_count());
  detail::append_f32(block, model.parameters());
  detail::write_header_and_block(path, header, block);
}

Checkpoint load_model(const std::string& path) {
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
    throw std::runtime_error("format error: unsupported checkpoint version");
  MdnConfig cfg;
  const auto& jc = header.at("config");
  cfg.input_dim = jc.at("input_dim").get<int>();
  cfg.target_dim = jc.at("target_dim").get<int>();
  cfg.components = jc.at("components").get<int>();
  cfg.hidden_width = jc.at("hidden_width").get<int>();
  cfg.depth = jc.at("depth").get<int>();
  cfg.scale_floor = jc.at("scale_floor").get<double>();
  cfg.seed = jc.at("seed").get<std::uint64_t>();
  validate_config(cfg);
  const int declared = header.at("param_count").get<int>();
  if (declared != mdn_parameter_count(cfg))
    throw std::runtime_error("format error: param_count disagrees with config");
  auto hb = detail::read_header_and_block(path, "ssd.mdn",
                                          static_cast<std::size_t>(declared));
  Checkpoint ck{MdnModel(cfg), header.value("pca_id", ""),
                header.value("best_val_nll", 0.0)};
  Vector p(declared);
  for (int i = 0; i < declared; ++i) p(i) = hb.block[i];
  ck.model.set_parameters(p);
  return ck;
}

}  // namespace ssd
