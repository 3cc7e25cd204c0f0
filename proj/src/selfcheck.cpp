#include "windgrid/selfcheck.hpp"

#include <functional>

#include "windgrid/abed.hpp"
#include "windgrid/autodiff.hpp"
#include "windgrid/rng.hpp"
#include "windgrid/trainer.hpp"

namespace windgrid::selfcheck {

namespace {

using ad::NodePtr;

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

void run_item(Result& result, const std::string& name,
              const std::function<NodePtr<double>()>& f,
              const std::vector<NodePtr<double>>& params, int samples = 200) {
  Item item;
  item.name = name;
  item.max_rel_err = ad::grad_check(f, params, 1e-5, samples).max_rel_err;
  item.pass = item.max_rel_err <= 1e-4;
  result.worst = std::max(result.worst, item.max_rel_err);
  result.ok = result.ok && item.pass;
  result.items.push_back(std::move(item));
}

}  // namespace

Result run_selfcheck() {
  Result result;
  Rng rng(2718281828);

  {
    auto a = ad::leaf(random_tensor({2, 3, 2, 2, 2}, rng), true, "a");
    auto b = ad::leaf(random_tensor({2, 3, 2, 1, 1}, rng), true, "b");
    run_item(result, "add/sub/mul broadcast",
             [&] { return ad::sum_all(ad::mul(ad::sub(ad::add(a, b), ad::mul(a, b)), ad::add(a, b))); },
             {a, b});
  }
  {
    Tensor<double> v({5, 5});
    for (std::int64_t i = 0; i < v.size(); ++i) {
      const double u = rng.uniform(-1, 1);
      v[i] = u + (u >= 0 ? 0.05 : -0.05);
    }
    auto x = ad::leaf(std::move(v), true, "x");
    run_item(result, "relu", [&] { return ad::sum_all(ad::mul(ad::relu(x), ad::relu(x))); }, {x});
  }
  {
    auto x = ad::leaf(random_tensor({4, 6}, rng, -3, 3), true, "x");
    run_item(result, "sigmoid", [&] { return ad::sum_all(ad::sigmoid(x)); }, {x});
  }
  {
    auto x = ad::leaf(random_tensor({1, 2, 2, 3, 5}, rng), true, "x");
    run_item(result, "spatial_mean/upsample/pad_crop",
             [&] {
               auto h = ad::upsample2x_spatial(x);
               h = ad::pad_crop_spatial(h, 5, 7);
               return ad::sum_all(ad::mul(h, ad::sigmoid(ad::spatial_mean(h))));
             },
             {x});
  }
  {
    auto x = ad::leaf(random_tensor({1, 2, 3, 4, 4}, rng), true, "x");
    auto w = ad::leaf(random_tensor({2, 2, 3, 3, 3}, rng), true, "w");
    auto b = ad::leaf(random_tensor({2}, rng), true, "b");
    ad::Conv3dGeom g;
    g.pt = g.ph = g.pw = 1;
    run_item(result, "conv3d im2col",
             [&] {
               auto y = ad::conv3d(x, w, b, g);
               return ad::sum_all(ad::mul(y, y));
             },
             {x, w, b});
    run_item(result, "conv3d naive",
             [&] {
               auto y = ad::conv3d(x, w, b, g, ad::ConvImpl::Naive);
               return ad::sum_all(ad::mul(y, y));
             },
             {x, w, b});
  }
  {
    auto x = ad::leaf(random_tensor({1, 2, 3, 6, 6}, rng), true, "x");
    auto w = ad::leaf(random_tensor({3, 2, 3, 3, 3}, rng), true, "w");
    auto b = ad::leaf(random_tensor({3}, rng), true, "b");
    ad::Conv3dGeom g;
    g.pt = g.ph = g.pw = 1;
    g.sh = g.sw = 2;
    run_item(result, "conv3d spatial stride 2",
             [&] {
               auto y = ad::conv3d(x, w, b, g);
               return ad::sum_all(ad::mul(y, y));
             },
             {x, w, b});
  }
  {
    auto x = ad::leaf(random_tensor({2, 2, 2, 3, 3}, rng, -2, 5), true, "x");
    auto gamma = ad::leaf(random_tensor({2}, rng, 0.5, 1.5), true, "gamma");
    auto beta = ad::leaf(random_tensor({2}, rng), true, "beta");
    ad::BatchNormState<double> state(2);
    run_item(result, "batchnorm train",
             [&] {
               auto y = ad::batchnorm(x, gamma, beta, state, true);
               return ad::sum_all(ad::mul(y, ad::sigmoid(y)));
             },
             {x, gamma, beta});
  }
  {
    auto pred_leaf = ad::leaf(random_tensor({1, 2, 3, 2, 2}, rng), true, "pred");
    Tensor<double> labels = random_tensor({1, 2, 3, 2, 2}, rng);
    Tensor<std::uint8_t> mask({1, 2, 3, 2, 2});
    for (std::int64_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.5 ? 1 : 0;
    mask[0] = 1;
    run_item(result, "masked mse loss",
             [&] { return trainer::masked_mse_loss(pred_leaf, labels, mask); }, {pred_leaf});
  }
  {
    // full tiny model: b=1, t=6, 8x8 grid, channels [4,8], one attention block
    abed::AbedConfig cfg;
    cfg.encoder_channels = {4, 8};
    cfg.n_rssab = 1;
    abed::AbedModel<double> model(cfg, 424242);
    const Tensor<double> x_data = random_tensor({1, 14, 6, 8, 8}, rng);
    Tensor<double> labels({1, 2, 6, 8, 8});
    Tensor<std::uint8_t> mask({1, 2, 6, 8, 8});
    for (std::int64_t i = 0; i < labels.size(); ++i) {
      labels[i] = rng.uniform(-2, 2);
      mask[i] = rng.uniform() < 0.1 ? 1 : 0;
    }
    mask[0] = 1;
    run_item(result, "full tiny model + loss",
             [&] {
               auto x = ad::leaf(x_data, false);
               auto pred = model.forward(x, /*train=*/true);
               return trainer::masked_mse_loss(pred, labels, mask);
             },
             model.parameters(), 20);
  }
  return result;
}

}  // namespace windgrid::selfcheck
