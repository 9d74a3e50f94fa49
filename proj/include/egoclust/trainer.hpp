#pragma once

#include "egoclust/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace egoclust {

struct TrainConfig {
  double alpha = 0.8;   // weight of the MAE loss
  double beta = 0.02;   // scale applied to the contrastive loss
  double tau = 0.5;
  double base_lr = 5e-5;
  double lr_decay = 0.8;
  std::size_t decay_period = 15;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;  // cap
  std::uint64_t seed = 0;
  double weight_decay = 0.05;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Early stop once the epoch-mean joint loss improved by less than
  // `min_improvement` (relative) for `patience` consecutive epochs; 0 disables.
  std::size_t patience = 10;
  double min_improvement = 0.005;
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint

  void validate() const;
};

/// alpha * l_mae + (1 - alpha) * beta * l_con
double joint_loss(double l_mae, double l_con, double alpha, double beta);
template <typename T>
Tensor<T> joint_loss(const Tensor<T>& l_mae, const Tensor<T>& l_con, double alpha, double beta);

/// base_lr * decay^floor(epoch / period)
double lr_at(std::size_t epoch, const TrainConfig& config);

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step = 0;
};

/// Decoupled weight decay followed by the bias-corrected Adam update.
/// Parameters that never received a gradient are left untouched.
template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, OptimizerState<T>& state, double lr, const TrainConfig& config);

class ConvergenceMonitor {
 public:
  ConvergenceMonitor(std::size_t patience, double min_improvement)
      : patience_(patience), min_improvement_(min_improvement) {}

  /// Records an epoch mean; returns true when training should stop.
  bool update(double epoch_mean);

 private:
  std::size_t patience_;
  double min_improvement_;
  std::optional<double> best_;
  std::size_t stalled_ = 0;
};

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::optional<double> l_mae;
  std::optional<double> l_con;
  double joint = 0.0;
  double lr = 0.0;

  std::string to_json() const;
  static LossRecord from_json(const std::string& line);
  bool operator==(const LossRecord&) const = default;
};

struct TrainResult {
  std::vector<LossRecord> log;
  std::vector<double> epoch_means;
  std::size_t epochs_run = 0;
  bool converged = false;
};

struct TrainOutputs {
  std::ostream* loss_log = nullptr;             // JSONL, one line per batch
  std::optional<std::filesystem::path> run_dir;  // checkpoints land here
  std::function<void(std::size_t epoch, double mean)> on_epoch;
};

/// Per-image RNG stream for (seed, epoch, image), so augmentation and masking
/// do not depend on batch composition or thread scheduling.
std::mt19937_64 image_stream(std::uint64_t seed, std::size_t epoch, std::size_t image);

/// Self-supervised training: per batch make_views -> masks -> encode_pair ->
/// branch losses -> joint loss -> backward -> AdamW; per epoch a seeded
/// shuffle and lr_at. Throws NumericError when the joint loss becomes NaN.
template <typename T>
TrainResult train(const std::vector<Image>& images, CmNet<T>& model, const TrainConfig& config,
                  const AugmentPolicy& policy, const TrainOutputs& outputs = {});

}  // namespace egoclust
