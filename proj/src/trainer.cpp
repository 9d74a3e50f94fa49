#include "egoclust/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace egoclust {

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("train config: alpha must lie in [0,1]");
  if (!(beta > 0.0)) throw Error("train config: beta must be positive");
  if (!(tau > 0.0)) throw Error("train config: tau must be positive");
  if (!(base_lr > 0.0)) throw Error("train config: learning rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw Error("train config: lr decay must lie in (0,1]");
  if (decay_period == 0) throw Error("train config: decay period must be positive");
  if (batch_size == 0) throw Error("train config: batch size must be at least 1");
  if (weight_decay < 0.0) throw Error("train config: weight decay must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw Error("train config: AdamW betas must lie in [0,1)");
  }
  if (!(adam_eps > 0.0)) throw Error("train config: AdamW eps must be positive");
}

double joint_loss(double l_mae, double l_con, double alpha, double beta) {
  return alpha * l_mae + (1.0 - alpha) * beta * l_con;
}

template <typename T>
Tensor<T> joint_loss(const Tensor<T>& l_mae, const Tensor<T>& l_con, double alpha, double beta) {
  return add(scale(l_mae, static_cast<T>(alpha)), scale(l_con, static_cast<T>((1.0 - alpha) * beta)));
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  const auto steps = static_cast<double>(epoch / config.decay_period);
  return config.base_lr * std::pow(config.lr_decay, steps);
}

template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, OptimizerState<T>& state, double lr, const TrainConfig& config) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), T(0));
      state.second_moment.emplace_back(p.numel(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) throw Error("optimizer state does not match parameter list");
  ++state.step;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * config.weight_decay;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& param = params[p];
    if (!param.has_grad()) continue;
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    if (m.size() != param.numel()) throw ShapeError("optimizer moment shape does not match parameter");
    auto w = param.mutable_data();
    auto g = param.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      const double updated = w[i] * decay - lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
      w[i] = static_cast<T>(updated);
    }
  }
}

bool ConvergenceMonitor::update(double epoch_mean) {
  if (patience_ == 0) return false;
  if (!best_) {
    best_ = epoch_mean;
    return false;
  }
  const double improvement = (*best_ - epoch_mean) / std::abs(*best_);
  if (improvement >= min_improvement_) {
    stalled_ = 0;
  } else {
    ++stalled_;
  }
  best_ = std::min(*best_, epoch_mean);
  return stalled_ >= patience_;
}

std::string LossRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["batch"] = batch;
  j["l_mae"] = l_mae ? nlohmann::ordered_json(*l_mae) : nlohmann::ordered_json(nullptr);
  j["l_con"] = l_con ? nlohmann::ordered_json(*l_con) : nlohmann::ordered_json(nullptr);
  j["joint"] = joint;
  j["lr"] = lr;
  return j.dump();
}

LossRecord LossRecord::from_json(const std::string& line) {
  LossRecord r;
  try {
    const auto j = nlohmann::json::parse(line);
    r.epoch = j.at("epoch").get<std::size_t>();
    r.batch = j.at("batch").get<std::size_t>();
    if (!j.at("l_mae").is_null()) r.l_mae = j.at("l_mae").get<double>();
    if (!j.at("l_con").is_null()) r.l_con = j.at("l_con").get<double>();
    r.joint = j.at("joint").get<double>();
    r.lr = j.at("lr").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed loss log line: ") + e.what());
  }
  return r;
}

std::mt19937_64 image_stream(std::uint64_t seed, std::size_t epoch, std::size_t image) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(image), 0x5eedu};
  return std::mt19937_64(seq);
}

template <typename T>
TrainResult train(const std::vector<Image>& images, CmNet<T>& model, const TrainConfig& config,
                  const AugmentPolicy& policy, const TrainOutputs& outputs) {
  config.validate();
  policy.validate();
  if (images.empty()) throw Error("train: empty pre-training set");
  const auto& enc = model.config().encoder;
  for (const auto& img : images) {
    if (img.height < 2 || img.width < 2) throw Error("train: images must be at least 2x2");
  }
  if (policy.output_size != enc.image_size) {
    throw Error("train: augmentation output size " + std::to_string(policy.output_size) +
                " does not match encoder image size " + std::to_string(enc.image_size));
  }

  auto params = model.parameters().tensors();
  OptimizerState<T> state;
  ConvergenceMonitor monitor(config.patience, config.min_improvement);
  TrainResult result;
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq shuffle_seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                            0xb47c4u};
  std::mt19937_64 shuffle_rng(shuffle_seq);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = lr_at(epoch, config);
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<ViewPair<T>> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        auto rng = image_stream(config.seed, epoch, order[i]);
        batch.push_back(make_view_pair<T>(images[order[i]], policy, enc, rng));
      }
      model.parameters().zero_grad();
      auto losses = model.losses(batch, config.alpha, config.beta, config.tau);
      const double joint = static_cast<double>(losses.joint.item());
      if (!std::isfinite(joint)) {
        throw NumericError("joint loss diverged (non-finite) at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batches));
      }
      backward(losses.joint);
      adamw_step(params, state, lr, config);

      LossRecord record;
      record.epoch = epoch;
      record.batch = batches;
      if (losses.mae) record.l_mae = static_cast<double>(losses.mae->item());
      if (losses.contrastive) record.l_con = static_cast<double>(losses.contrastive->item());
      record.joint = joint;
      record.lr = lr;
      if (outputs.loss_log) *outputs.loss_log << record.to_json() << '\n';
      result.log.push_back(record);
      epoch_total += joint;
      ++batches;
    }
    const double epoch_mean = epoch_total / static_cast<double>(batches);
    result.epoch_means.push_back(epoch_mean);
    result.epochs_run = epoch + 1;
    if (outputs.on_epoch) outputs.on_epoch(epoch, epoch_mean);
    if (outputs.run_dir && config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      model.save(*outputs.run_dir / ("checkpoint-epoch" + std::to_string(epoch + 1) + ".egoc"));
    }
    if (monitor.update(epoch_mean)) {
      result.converged = true;
      break;
    }
  }
  if (outputs.loss_log) outputs.loss_log->flush();
  if (outputs.run_dir) model.save(*outputs.run_dir / "checkpoint.egoc");
  return result;
}

template Tensor<float> joint_loss<float>(const Tensor<float>&, const Tensor<float>&, double, double);
template Tensor<double> joint_loss<double>(const Tensor<double>&, const Tensor<double>&, double, double);
template void adamw_step<float>(std::vector<Tensor<float>>&, OptimizerState<float>&, double, const TrainConfig&);
template void adamw_step<double>(std::vector<Tensor<double>>&, OptimizerState<double>&, double, const TrainConfig&);
template TrainResult train<float>(const std::vector<Image>&, CmNet<float>&, const TrainConfig&, const AugmentPolicy&,
                                  const TrainOutputs&);
template TrainResult train<double>(const std::vector<Image>&, CmNet<double>&, const TrainConfig&,
                                   const AugmentPolicy&, const TrainOutputs&);

}  // namespace egoclust
