#include "windgrid/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>

#include "windgrid/csvio.hpp"
#include "windgrid/rng.hpp"

namespace windgrid::trainer {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

// mean loss over a sample set without touching parameters or running stats
double evaluate_loss(abed::AbedModel<float>& model, const featurecube::FeatureCube& cube,
                     const featurecube::WindowConfig& wcfg,
                     const std::vector<featurecube::SampleRef>& refs, int batch_size) {
  double total = 0;
  std::int64_t used = 0;
  for (std::size_t at = 0; at < refs.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), refs.size() - at);
    auto batch = featurecube::materialize(cube, wcfg, refs, at, n);
    auto x = ad::constant(std::move(batch.x));
    auto pred = model.forward(x, /*train=*/false);
    LossInfo info;
    auto loss = masked_mse_loss(pred, batch.y, batch.label_mask, &info);
    total += static_cast<double>(loss->value[0]) * info.used_samples;
    used += info.used_samples;
  }
  if (used == 0) throw TrainingError("evaluate_loss: no sample carries valid labels");
  return total / static_cast<double>(used);
}

double grad_global_norm(const std::vector<ad::NodePtr<float>>& params) {
  double acc = 0;
  for (const auto& p : params)
    for (std::int64_t i = 0; i < p->grad.size(); ++i)
      acc += static_cast<double>(p->grad[i]) * p->grad[i];
  return std::sqrt(acc);
}

double param_global_norm(const std::vector<ad::NodePtr<float>>& params) {
  double acc = 0;
  for (const auto& p : params)
    for (std::int64_t i = 0; i < p->value.size(); ++i)
      acc += static_cast<double>(p->value[i]) * p->value[i];
  return std::sqrt(acc);
}

}  // namespace

TrainResult train(abed::AbedModel<float>& model, const featurecube::FeatureCube& cube,
                  const featurecube::WindowConfig& wcfg,
                  const std::vector<featurecube::SampleRef>& samples, const TrainConfig& cfg,
                  std::vector<std::string>* warnings) {
  cfg.validate();
  if (samples.empty()) throw TrainingError("train: empty sample set");
  if (samples.size() < 2)
    throw TrainingError("train: need at least 2 samples to split off validation");

  // deterministic seeded validation split
  std::vector<featurecube::SampleRef> shuffled = samples;
  Rng rng(Rng::mix(cfg.seed, 1));
  rng.shuffle(shuffled);
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(cfg.validation_fraction * static_cast<double>(shuffled.size())));
  n_val = std::min(std::max<std::size_t>(n_val, 1), shuffled.size() - 1);
  std::vector<featurecube::SampleRef> val_set(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<featurecube::SampleRef> train_set(shuffled.begin() + static_cast<std::ptrdiff_t>(n_val), shuffled.end());

  std::unique_ptr<Optimizer> opt;
  if (cfg.optimizer == "adam")
    opt = std::make_unique<AdamOptimizer>(cfg.learning_rate);
  else
    opt = std::make_unique<SgdOptimizer>(cfg.learning_rate);

  EarlyStopper stopper(cfg.early_stop_patience);
  TrainResult result;
  std::vector<Tensor<float>> best_state = model.snapshot();
  Rng epoch_rng(Rng::mix(cfg.seed, 2));

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double t_start = now_seconds();
    epoch_rng.shuffle(train_set);

    double epoch_loss = 0;
    std::int64_t epoch_used = 0;
    for (std::size_t at = 0; at < train_set.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), train_set.size() - at);
      auto batch = featurecube::materialize(cube, wcfg, train_set, at, n);
      auto x = ad::constant(std::move(batch.x));
      ad::NodePtr<float> loss;
      LossInfo info;
      try {
        auto pred = model.forward(x, /*train=*/true);
        loss = masked_mse_loss(pred, batch.y, batch.label_mask, &info);
        if (!std::isfinite(static_cast<double>(loss->value[0])))
          throw NumericError("non-finite loss");
        ad::backward(loss);
      } catch (const NumericError& e) {
        throw NumericError("train: " + std::string(e.what()) + " in epoch " +
                           std::to_string(epoch) + ", batch starting at sample " +
                           std::to_string(at) + " (parameter norm " +
                           csvio::fmt_double(param_global_norm(model.parameters())) + ")");
      }
      if (!info.excluded_samples.empty() && warnings)
        warnings->push_back("train: " + std::to_string(info.excluded_samples.size()) +
                            " samples without valid labels excluded in one batch");
      if (cfg.clip_norm > 0) {
        const double norm = grad_global_norm(model.parameters());
        if (norm > cfg.clip_norm) {
          const float scale = static_cast<float>(cfg.clip_norm / norm);
          for (const auto& p : model.parameters())
            for (std::int64_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= scale;
        }
      }
      opt->step(model.parameters());
      ++result.log.optimizer_steps;
      epoch_loss += static_cast<double>(loss->value[0]) * info.used_samples;
      epoch_used += info.used_samples;
    }
    if (epoch_used == 0) throw TrainingError("train: no usable samples in epoch");

    const double val_loss = evaluate_loss(model, cube, wcfg, val_set, cfg.batch_size);
    EpochLog row;
    row.epoch = epoch;
    row.train_loss = epoch_loss / static_cast<double>(epoch_used);
    row.val_loss = val_loss;
    row.seconds = now_seconds() - t_start;
    result.log.epochs.push_back(row);

    const int prev_best = stopper.best_epoch();
    const bool stop = stopper.update(epoch, val_loss);
    if (stopper.best_epoch() == epoch && prev_best != epoch) best_state = model.snapshot();
    if (stop) {
      result.log.stop_reason = "early_stop";
      break;
    }
  }
  if (result.log.stop_reason.empty()) result.log.stop_reason = "max_epochs";
  result.log.best_epoch = stopper.best_epoch();
  result.log.best_val_loss = stopper.best_val();
  result.best_state = best_state;
  model.restore(best_state);
  return result;
}

void write_trainlog_csv(const TrainLog& log, const std::string& path) {
  csvio::Writer out(path, {"epoch", "train_loss", "val_loss", "seconds"});
  for (const auto& e : log.epochs)
    out.row({std::to_string(e.epoch), csvio::fmt_double(e.train_loss),
             csvio::fmt_double(e.val_loss), csvio::fmt_double(e.seconds)});
  out.close();
}

std::vector<Prediction> predict(abed::AbedModel<float>& model,
                                const featurecube::FeatureCube& cube,
                                const featurecube::WindowConfig& wcfg, const std::vector<int>& t0s,
                                int batch_size) {
  wcfg.validate();
  const int L = wcfg.sample_len();
  std::vector<featurecube::SampleRef> refs;
  refs.reserve(t0s.size());
  for (int t0 : t0s) {
    if (t0 < 0 || t0 + wcfg.span_steps() > cube.n_times)
      throw OutOfDomainError("predict: window starting at tick " + std::to_string(t0) +
                             " falls outside the cube");
    refs.push_back({t0});
  }

  std::vector<Prediction> out;
  out.reserve(refs.size());
  const std::size_t plane = static_cast<std::size_t>(cube.n_lat) * cube.n_lon;
  for (std::size_t at = 0; at < refs.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), refs.size() - at);
    auto batch = featurecube::materialize(cube, wcfg, refs, at, n);
    auto x = ad::constant(std::move(batch.x));
    auto pred = model.forward(x, /*train=*/false);
    for (std::size_t i = 0; i < n; ++i) {
      Prediction p;
      p.t0 = refs[at + i].t0;
      p.values = Tensor<float>({2, L, cube.n_lat, cube.n_lon});
      const float* src = pred->value.data() + static_cast<std::size_t>(i) * 2 * L * plane;
      std::copy(src, src + 2 * static_cast<std::size_t>(L) * plane, p.values.data());
      p.horizon_steps.resize(static_cast<std::size_t>(L));
      for (int j = 0; j < L; ++j)
        p.horizon_steps[static_cast<std::size_t>(j)] = featurecube::horizon_steps(wcfg, j);
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace windgrid::trainer
