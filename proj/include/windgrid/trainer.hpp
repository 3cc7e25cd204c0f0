#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "windgrid/abed.hpp"
#include "windgrid/autodiff.hpp"
#include "windgrid/featurecube.hpp"
#include "windgrid/tensor.hpp"

namespace windgrid::trainer {

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 0.001;
  int max_epochs = 200;
  int early_stop_patience = 5;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  std::string optimizer = "adam";  // or "sgd"
  double clip_norm = 0;            // 0 = off; for NaN forensics

  void validate() const {
    if (batch_size < 1 || learning_rate <= 0 || max_epochs < 1 || early_stop_patience < 1)
      throw ConfigError("train: batch size, learning rate, epochs and patience must be positive");
    if (validation_fraction <= 0 || validation_fraction > 0.5)
      throw ConfigError("train: validation_fraction must be in (0, 0.5]");
    if (optimizer != "adam" && optimizer != "sgd")
      throw ConfigError("train: optimizer must be 'adam' or 'sgd'");
  }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double seconds = 0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::string stop_reason;  // "early_stop" or "max_epochs"
  int best_epoch = -1;
  double best_val_loss = 0;
  std::int64_t optimizer_steps = 0;
};

struct LossInfo {
  std::vector<int> excluded_samples;  // batch rows with no valid label points
  int used_samples = 0;
};

// Station-masked MSE: per sample, mean over label cells of the per-cell time
// mean of (u_err^2 + v_err^2)/2, counting only mask-valid points against the
// fixed L = D+F denominator; the batch loss is the mean over samples. Samples
// with an all-false mask are excluded (error if none remain).
template <typename T>
ad::NodePtr<T> masked_mse_loss(ad::NodePtr<T> pred, const Tensor<T>& labels,
                               const Tensor<std::uint8_t>& mask, LossInfo* info = nullptr) {
  const auto& s = pred->value.shape();
  if (s.size() != 5 || s[1] != 2)
    throw ShapeError("masked_mse_loss: predictions must be (b, 2, L, h, w), got " +
                     pred->value.shape_str());
  if (labels.shape() != pred->value.shape() || mask.shape() != pred->value.shape())
    throw ShapeError("masked_mse_loss: shape mismatch, pred " + pred->value.shape_str() +
                     " labels " + labels.shape_str() + " mask " + mask.shape_str());
  const int b = s[0], L = s[2], h = s[3], w = s[4];
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t per_sample = 2 * static_cast<std::int64_t>(L) * plane;

  // station count per sample: label cells with at least one valid point
  std::vector<int> stations(static_cast<std::size_t>(b), 0);
  for (int i = 0; i < b; ++i) {
    for (std::int64_t cell = 0; cell < plane; ++cell) {
      bool any = false;
      for (std::int64_t ct = 0; ct < 2 * static_cast<std::int64_t>(L) && !any; ++ct)
        any = mask[static_cast<std::int64_t>(i) * per_sample + ct * plane + cell] != 0;
      if (any) ++stations[static_cast<std::size_t>(i)];
    }
  }
  int used = 0;
  for (int i = 0; i < b; ++i)
    if (stations[static_cast<std::size_t>(i)] > 0) ++used;
  if (info) {
    info->used_samples = used;
    for (int i = 0; i < b; ++i)
      if (stations[static_cast<std::size_t>(i)] == 0) info->excluded_samples.push_back(i);
  }
  if (used == 0) throw TrainingError("masked_mse_loss: every sample has an empty label mask");

  Tensor<T> weights(pred->value.shape());
  for (int i = 0; i < b; ++i) {
    const int n_st = stations[static_cast<std::size_t>(i)];
    if (n_st == 0) continue;
    const double wgt = 0.5 / (static_cast<double>(n_st) * L * used);
    for (std::int64_t k = 0; k < per_sample; ++k) {
      const std::int64_t idx = static_cast<std::int64_t>(i) * per_sample + k;
      if (mask[idx]) weights[idx] = static_cast<T>(wgt);
    }
  }

  auto diff = ad::sub(pred, ad::constant(labels));
  auto sq = ad::mul(diff, diff);
  return ad::sum_all(ad::mul(sq, ad::constant(std::move(weights))));
}

// ---------------------------------------------------------------------------

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(const std::vector<ad::NodePtr<float>>& params) = 0;
};

class SgdOptimizer : public Optimizer {
 public:
  explicit SgdOptimizer(double lr) : lr_(lr) {}
  void step(const std::vector<ad::NodePtr<float>>& params) override {
    for (const auto& p : params)
      for (std::int64_t i = 0; i < p->value.size(); ++i)
        p->value[i] -= static_cast<float>(lr_) * p->grad[i];
  }

 private:
  double lr_;
};

class AdamOptimizer : public Optimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<ad::NodePtr<float>>& params) override {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto& p = *params[pi];
      for (std::int64_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        const double m = beta1_ * m_[pi][i] + (1 - beta1_) * g;
        const double v = beta2_ * v_[pi][i] + (1 - beta2_) * g * g;
        m_[pi][i] = m;
        v_[pi][i] = v;
        p.value[i] -= static_cast<float>(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor<double>> m_, v_;
};

// Stops after `patience` consecutive epochs without a strictly better
// validation loss; remembers which epoch was best.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  // returns true when training should stop after this epoch
  bool update(int epoch, double val_loss) {
    if (best_epoch_ < 0 || val_loss < best_val_) {
      best_val_ = val_loss;
      best_epoch_ = epoch;
      bad_streak_ = 0;
      return false;
    }
    return ++bad_streak_ >= patience_;
  }

  int best_epoch() const { return best_epoch_; }
  double best_val() const { return best_val_; }

 private:
  int patience_;
  int best_epoch_ = -1;
  double best_val_ = 0;
  int bad_streak_ = 0;
};

struct TrainResult {
  TrainLog log;
  std::vector<Tensor<float>> best_state;  // model snapshot at the best epoch
};

TrainResult train(abed::AbedModel<float>& model, const featurecube::FeatureCube& cube,
                  const featurecube::WindowConfig& wcfg,
                  const std::vector<featurecube::SampleRef>& samples, const TrainConfig& cfg,
                  std::vector<std::string>* warnings = nullptr);

void write_trainlog_csv(const TrainLog& log, const std::string& path);

struct Prediction {
  int t0 = 0;
  Tensor<float> values;            // (2, L, h, w)
  std::vector<int> horizon_steps;  // per window index; <= 0 overlaps the observed period
};

// Builds the masked input window for each t0 and runs an infer-mode forward.
std::vector<Prediction> predict(abed::AbedModel<float>& model,
                                const featurecube::FeatureCube& cube,
                                const featurecube::WindowConfig& wcfg, const std::vector<int>& t0s,
                                int batch_size = 16);

}  // namespace windgrid::trainer
