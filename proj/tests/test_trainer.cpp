#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "windgrid/featurecube.hpp"
#include "windgrid/rng.hpp"
#include "windgrid/timeutil.hpp"
#include "windgrid/trainer.hpp"

using namespace windgrid;
using namespace windgrid::trainer;
using windgrid::featurecube::FeatureCube;
using windgrid::featurecube::SampleRef;
using windgrid::featurecube::WindowConfig;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// small cube with two label stations and smooth learnable content
FeatureCube toy_cube(int n_times) {
  const std::int64_t start = timeutil::parse_iso8601("2022-01-05T00:00:00Z");
  const geogrid::Grid grid = geogrid::make_grid({0.0, -0.4, 0.0, 0.4, 0.1});
  featurecube::AssembleSources src;
  auto series = [&](double scale) {
    geogrid::TimeSeriesField s;
    for (int i = 0; i < n_times; ++i) {
      s.times.push_back(start + static_cast<std::int64_t>(i) * 900);
      geogrid::GriddedField f = geogrid::GriddedField::zeros(grid.n_lat, grid.n_lon);
      for (std::size_t k = 0; k < f.values.size(); ++k) {
        f.values[k] = scale * std::sin(0.05 * i + 0.3 * static_cast<double>(k));
        f.valid[k] = 1;
      }
      s.frames.push_back(std::move(f));
    }
    return s;
  };
  src.u10f = series(5.0);
  src.v10f = series(-3.0);
  src.msl = series(2.0);
  src.dem = geogrid::GriddedField::zeros(grid.n_lat, grid.n_lon);
  for (auto& m : src.dem.valid) m = 1;
  src.stations = {{"S1", grid.lat_center(1), grid.lon_center(1), true},
                  {"S2", grid.lat_center(2), grid.lon_center(3), true}};
  for (int i = 0; i < n_times; ++i) {
    for (const auto& st : src.stations) {
      ingest::ObservationRecord rec;
      rec.station_id = st.station_id;
      rec.timestamp = start + static_cast<std::int64_t>(i) * 900;
      rec.temp_c = 15.0;
      rec.humidity_pct = 50.0;
      rec.wind3_speed = 8.0;
      rec.wind3_dir = 45.0;
      rec.wind10_speed = 9.0;
      rec.wind10_dir = 45.0;
      src.observations.push_back(rec);
    }
  }
  return featurecube::assemble_cube(src, grid, start,
                                    start + static_cast<std::int64_t>(n_times - 1) * 900, 900);
}

WindowConfig toy_window() {
  WindowConfig cfg;
  cfg.duration_steps = 12;
  cfg.forward_steps = 4;
  cfg.shift_steps = 4;
  cfg.slide_steps = 4;
  return cfg;
}

}  // namespace

TEST_CASE("masked_mse_loss: perfect fit is zero") {
  Rng rng(1);
  Tensor<float> labels = random_tensor<float>({2, 2, 3, 2, 2}, rng);
  Tensor<std::uint8_t> mask({2, 2, 3, 2, 2}, 1);
  auto pred = ad::leaf(labels, true);
  auto loss = masked_mse_loss(pred, labels, mask);
  CHECK(loss->value[0] == 0.0f);
}

TEST_CASE("masked_mse_loss: hand-evaluated two-point case gives 1.5") {
  // one sample, one station cell, L=2; u errors (1,1), v errors (0,2)
  Tensor<float> pred_v({1, 2, 2, 1, 1});
  Tensor<float> labels({1, 2, 2, 1, 1});
  Tensor<std::uint8_t> mask({1, 2, 2, 1, 1}, 1);
  pred_v.at(0, 0, 0, 0, 0) = 1.0f;  // u errors
  pred_v.at(0, 0, 1, 0, 0) = 1.0f;
  pred_v.at(0, 1, 0, 0, 0) = 0.0f;  // v errors
  pred_v.at(0, 1, 1, 0, 0) = 2.0f;
  auto pred = ad::leaf(pred_v, true);
  auto loss = masked_mse_loss(pred, labels, mask);
  CHECK(std::abs(static_cast<double>(loss->value[0]) - 1.5) <= 1e-12);
}

TEST_CASE("masked_mse_loss: quadratic homogeneity, doubling errors quadruples the loss") {
  Rng rng(2);
  Tensor<float> labels({1, 2, 4, 3, 3}, 0.0f);
  Tensor<std::uint8_t> mask({1, 2, 4, 3, 3});
  for (std::int64_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.4 ? 1 : 0;
  mask[0] = 1;
  Tensor<float> p1 = random_tensor<float>({1, 2, 4, 3, 3}, rng);
  Tensor<float> p2 = p1;
  for (std::int64_t i = 0; i < p2.size(); ++i) p2[i] *= 2.0f;
  const auto l1 = masked_mse_loss(ad::leaf(p1, false), labels, mask);
  const auto l2 = masked_mse_loss(ad::leaf(p2, false), labels, mask);
  CHECK(l2->value[0] == doctest::Approx(4.0f * l1->value[0]).epsilon(1e-5));
}

TEST_CASE("masked_mse_loss: fuzzing mask-false labels leaves the loss unchanged") {
  Rng rng(3);
  Tensor<float> pred_v = random_tensor<float>({2, 2, 3, 2, 2}, rng);
  Tensor<float> labels = random_tensor<float>({2, 2, 3, 2, 2}, rng);
  Tensor<std::uint8_t> mask({2, 2, 3, 2, 2});
  for (std::int64_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.5 ? 1 : 0;
  mask[0] = 1;
  mask[mask.size() - 1] = 1;
  const float base = masked_mse_loss(ad::leaf(pred_v, false), labels, mask)->value[0];
  Tensor<float> fuzzed = labels;
  for (std::int64_t i = 0; i < fuzzed.size(); ++i)
    if (!mask[i]) fuzzed[i] = static_cast<float>(rng.uniform(-1e3, 1e3));
  const float after = masked_mse_loss(ad::leaf(pred_v, false), fuzzed, mask)->value[0];
  CHECK(base == after);
}

TEST_CASE("masked_mse_loss: empty-mask samples are excluded, all-empty is an error") {
  Rng rng(4);
  Tensor<float> pred_v = random_tensor<float>({2, 2, 2, 1, 1}, rng);
  Tensor<float> labels({2, 2, 2, 1, 1}, 0.0f);
  Tensor<std::uint8_t> mask({2, 2, 2, 1, 1}, 0);
  for (int j = 0; j < 2; ++j) mask.at(0, 0, j, 0, 0) = 1;  // only sample 0 carries labels
  LossInfo info;
  auto loss = masked_mse_loss(ad::leaf(pred_v, false), labels, mask, &info);
  CHECK(info.used_samples == 1);
  REQUIRE(info.excluded_samples.size() == 1);
  CHECK(info.excluded_samples[0] == 1);
  // equals the loss of sample 0 alone
  double expect = 0;
  for (int j = 0; j < 2; ++j) {
    const double e = pred_v.at(0, 0, j, 0, 0);
    expect += 0.5 * e * e;
  }
  expect /= 2;  // L = 2
  CHECK(loss->value[0] == doctest::Approx(expect).epsilon(1e-6));

  Tensor<std::uint8_t> none({2, 2, 2, 1, 1}, 0);
  CHECK_THROWS_AS(masked_mse_loss(ad::leaf(pred_v, false), labels, none), TrainingError);
}

TEST_CASE("optimizers: closed-form first steps on a single-parameter quadratic") {
  // f(w) = 0.5 w^2, grad = w
  auto make_param = [](float w0) {
    auto p = ad::leaf(Tensor<float>::scalar(w0), true, "w");
    p->grad = Tensor<float>::scalar(w0);  // grad of 0.5 w^2 at w0
    return p;
  };
  SUBCASE("sgd") {
    auto p = make_param(2.0f);
    SgdOptimizer opt(0.1);
    opt.step({p});
    CHECK(p->value[0] == doctest::Approx(2.0f - 0.1f * 2.0f).epsilon(1e-6));
  }
  SUBCASE("adam first step moves by ~lr in the gradient direction") {
    auto p = make_param(2.0f);
    AdamOptimizer opt(0.1);
    opt.step({p});
    // m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
    const double expect = 2.0 - 0.1 * (2.0 / (std::sqrt(4.0) + 1e-8));
    CHECK(p->value[0] == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("early stopper: plateau at epoch k stops at k+5 with best checkpoint k") {
  EarlyStopper stopper(5);
  // improving until epoch 3, flat afterwards
  const double curve[] = {1.0, 0.8, 0.6, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  int stopped_at = -1;
  for (int e = 0; e < 10; ++e)
    if (stopper.update(e, curve[e])) {
      stopped_at = e;
      break;
    }
  CHECK(stopped_at == 8);  // plateau starts at epoch 3; 5 bad epochs: 4,5,6,7,8
  CHECK(stopper.best_epoch() == 3);
  CHECK(stopper.best_val() == 0.5);
}

TEST_CASE("train: determinism, early-stop bookkeeping and best-epoch restore") {
  const FeatureCube cube = toy_cube(160);
  const WindowConfig wcfg = toy_window();
  const auto samples = featurecube::make_samples(cube, wcfg, featurecube::Subset::Train);
  REQUIRE(samples.size() >= 8);

  TrainConfig tcfg;
  tcfg.batch_size = 4;
  tcfg.max_epochs = 4;
  tcfg.learning_rate = 0.01;
  tcfg.validation_fraction = 0.25;
  tcfg.seed = 99;

  abed::AbedConfig mcfg;
  mcfg.encoder_channels = {4, 8};
  mcfg.n_rssab = 1;

  abed::AbedModel<float> m1(mcfg, 123);
  const TrainResult r1 = train(m1, cube, wcfg, samples, tcfg);
  abed::AbedModel<float> m2(mcfg, 123);
  const TrainResult r2 = train(m2, cube, wcfg, samples, tcfg);

  REQUIRE(r1.log.epochs.size() == r2.log.epochs.size());
  for (std::size_t e = 0; e < r1.log.epochs.size(); ++e) {
    CHECK(r1.log.epochs[e].train_loss == r2.log.epochs[e].train_loss);
    CHECK(r1.log.epochs[e].val_loss == r2.log.epochs[e].val_loss);
  }
  for (std::size_t i = 0; i < m1.parameters().size(); ++i)
    for (std::int64_t k = 0; k < m1.parameters()[i]->value.size(); ++k)
      CHECK(m1.parameters()[i]->value[k] == m2.parameters()[i]->value[k]);

  // the returned best epoch carries the minimum validation loss seen
  double best = r1.log.epochs[0].val_loss;
  for (const auto& e : r1.log.epochs) best = std::min(best, e.val_loss);
  CHECK(r1.log.best_val_loss == best);
  CHECK((r1.log.stop_reason == "max_epochs" || r1.log.stop_reason == "early_stop"));

  // training moved the loss down on this easy fixture
  CHECK(r1.log.epochs.back().train_loss < r1.log.epochs.front().train_loss);
}

TEST_CASE("train: NaN forensics name the epoch and batch") {
  const FeatureCube cube = toy_cube(120);
  const WindowConfig wcfg = toy_window();
  const auto samples = featurecube::make_samples(cube, wcfg, featurecube::Subset::Train);
  abed::AbedConfig mcfg;
  mcfg.encoder_channels = {4, 8};
  mcfg.n_rssab = 1;
  abed::AbedModel<float> model(mcfg, 1);
  model.find("encoder.stem.weight")->value.fill(1e30f);  // overflow on the first forward
  TrainConfig tcfg;
  tcfg.batch_size = 4;
  tcfg.max_epochs = 1;
  tcfg.seed = 1;
  CHECK_THROWS_WITH_AS(train(model, cube, wcfg, samples, tcfg), doctest::Contains("epoch"),
                       NumericError);
}

TEST_CASE("predict: horizons, determinism and future-observation invariance") {
  FeatureCube cube = toy_cube(120);
  const WindowConfig wcfg = toy_window();
  abed::AbedConfig mcfg;
  mcfg.encoder_channels = {4, 8};
  mcfg.n_rssab = 1;
  abed::AbedModel<float> model(mcfg, 77);

  const auto preds = predict(model, cube, wcfg, {10, 20});
  REQUIRE(preds.size() == 2);
  CHECK(preds[0].t0 == 10);
  CHECK(preds[0].values.shape() ==
        std::vector<int>{2, wcfg.sample_len(), cube.n_lat, cube.n_lon});
  CHECK(preds[0].horizon_steps.back() == wcfg.forward_steps + wcfg.shift_steps);

  const auto again = predict(model, cube, wcfg, {10, 20});
  for (std::int64_t i = 0; i < preds[0].values.size(); ++i)
    CHECK(preds[0].values[i] == again[0].values[i]);

  // fuzz observation channels in the masked region of the source cube
  FeatureCube fuzzed = cube;
  Rng rng(5);
  for (int f = 0; f < 4; ++f)
    for (int j = wcfg.duration_steps; j < wcfg.sample_len(); ++j)
      for (int r = 0; r < cube.n_lat; ++r)
        for (int c = 0; c < cube.n_lon; ++c)
          fuzzed.at(f, 10 + j, r, c) = static_cast<float>(rng.uniform(-100, 100));
  const auto fuzzed_pred = predict(model, fuzzed, wcfg, {10});
  for (std::int64_t i = 0; i < preds[0].values.size(); ++i)
    CHECK(fuzzed_pred[0].values[i] == preds[0].values[i]);

  CHECK_THROWS_AS(predict(model, cube, wcfg, {119}), OutOfDomainError);
}
