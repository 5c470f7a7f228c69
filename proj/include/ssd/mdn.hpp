#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssd/gmm.hpp"

namespace ssd {

struct MdnConfig {
  int input_dim = 0;     // d_h
  int target_dim = 0;    // d_z
  int components = 1;    // K
  int hidden_width = 128;
  int depth = 2;
  double scale_floor = kScaleFloor;
  std::uint64_t seed = 0;
};

// MLP backbone (depth x hidden_width, ReLU) with three affine heads:
// mixture logits, flattened means, flattened log-scales. Parameters live in
// one flat vector; forward clamps log-scales at ln(scale_floor) so the
// gradient respects the floor.
class MdnModel {
 public:
  explicit MdnModel(const MdnConfig& cfg);  // zero parameters

  // Fan-in-scaled uniform backbone; mean-head bias at the target mean,
  // log-scale-head bias at ln of the per-dimension target std.
  static MdnModel initialized(const MdnConfig& cfg, const Vector& target_mean,
                              const Vector& target_std);

  GaussianMixture forward(const Vector& h) const;

  const MdnConfig& config() const { return cfg_; }
  const Vector& parameters() const { return params_; }
  void set_parameters(const Vector& p);
  int parameter_count() const { return static_cast<int>(params_.size()); }

  // Round every parameter through float32, matching checkpoint precision.
  void quantize_to_f32();

 private:
  MdnConfig cfg_;
  Vector params_;

  friend struct MdnAutodiff;
};

int mdn_parameter_count(const MdnConfig& cfg);

struct TrainExample {
  Vector h;        // d_h
  Matrix targets;  // S x d_z
};

double nll_loss(const MdnModel& model, const Vector& h, const Matrix& targets);

// Exact gradient of the mean NLL over the batch w.r.t. the flat parameters.
// Returns the loss; writes the gradient into grad.
double nll_gradient(const MdnModel& model,
                    const std::vector<TrainExample>& batch, Vector& grad);

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 64;
  int max_epochs = 200;
  int patience = 10;
  double validation_fraction = 0.1;
  double grad_clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
};

struct TrainResult {
  MdnModel model;
  std::vector<EpochStats> log;
  double best_val_nll = 0.0;
  int best_epoch = 0;
};

// Adam on minibatches; keeps the parameter snapshot with the best validation
// NLL and rounds it through float32 so the in-memory model equals its
// checkpoint. Deterministic for fixed seeds.
TrainResult train(const std::vector<TrainExample>& dataset,
                  const MdnConfig& mdn_cfg, const TrainConfig& train_cfg);

struct Checkpoint {
  MdnModel model;
  std::string pca_id;
  double best_val_nll = 0.0;
};

// JSON header line + little-endian float32 parameter block.
void save_model(const MdnModel& model, const std::string& pca_id,
                double best_val_nll, const std::string& path);
Checkpoint load_model(const std::string& path);

}  // namespace ssd
