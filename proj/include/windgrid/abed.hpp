#pragma once

#include <array>
#include <cassert>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "windgrid/autodiff.hpp"
#include "windgrid/binio.hpp"
#include "windgrid/rng.hpp"
#include "windgrid/tensor.hpp"

// The attention-based encoder-decoder: batch norm and a stem convolution to a
// small channel budget, spatial downsampling levels, N residual
// sequence-and-spatial attention blocks, upsampling levels and a 2-channel
// head. Time is never strided; spatial dims halve per level (ceil) and are
// restored by a centre pad/crop before the head.
namespace windgrid::abed {

struct AbedConfig {
  int in_features = 14;
  int stem_channels = 4;
  std::vector<int> encoder_channels{8, 16};
  int n_rssab = 2;
  std::array<int, 3> rssab_kernel{3, 3, 3};
  int attention_reduction = 4;
  int final_out_channels = 2;

  void validate() const {
    if (in_features < 1 || stem_channels < 1 || final_out_channels < 1)
      throw ConfigError("abed: channel counts must be positive");
    if (encoder_channels.empty()) throw ConfigError("abed: encoder_channels must be non-empty");
    int prev = 0;
    for (int c : encoder_channels) {
      if (c < prev || c < 1) throw ConfigError("abed: encoder_channels must be ascending");
      prev = c;
    }
    if (n_rssab < 1) throw ConfigError("abed: n_rssab must be >= 1");
    for (int k : rssab_kernel)
      if (k < 1 || k % 2 == 0) throw ConfigError("abed: kernel dims must be odd for same padding");
    const int width = encoder_channels.back();
    if (attention_reduction < 1 || width % attention_reduction != 0)
      throw ConfigError("abed: attention_reduction must divide the decoder width");
  }

  bool operator==(const AbedConfig&) const = default;
};

inline nlohmann::json config_to_json(const AbedConfig& c) {
  return nlohmann::json{{"in_features", c.in_features},
                        {"stem_channels", c.stem_channels},
                        {"encoder_channels", c.encoder_channels},
                        {"n_rssab", c.n_rssab},
                        {"rssab_kernel", c.rssab_kernel},
                        {"attention_reduction", c.attention_reduction},
                        {"final_out_channels", c.final_out_channels}};
}

inline AbedConfig config_from_json(const nlohmann::json& j) {
  AbedConfig c;
  c.in_features = j.at("in_features").get<int>();
  c.stem_channels = j.at("stem_channels").get<int>();
  c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  c.n_rssab = j.at("n_rssab").get<int>();
  const auto k = j.at("rssab_kernel").get<std::vector<int>>();
  if (k.size() != 3) throw CheckpointError("rssab_kernel must have 3 entries");
  c.rssab_kernel = {k[0], k[1], k[2]};
  c.attention_reduction = j.at("attention_reduction").get<int>();
  c.final_out_channels = j.at("final_out_channels").get<int>();
  return c;
}

// min/max of the attention maps seen during one forward pass
struct ForwardProbe {
  double temporal_min = 1, temporal_max = 0;
  double spatial_min = 1, spatial_max = 0;
  bool any = false;

  template <typename T>
  void record(const Tensor<T>& temporal, const Tensor<T>& spatial) {
    for (std::int64_t i = 0; i < temporal.size(); ++i) {
      temporal_min = std::min(temporal_min, static_cast<double>(temporal[i]));
      temporal_max = std::max(temporal_max, static_cast<double>(temporal[i]));
    }
    for (std::int64_t i = 0; i < spatial.size(); ++i) {
      spatial_min = std::min(spatial_min, static_cast<double>(spatial[i]));
      spatial_max = std::max(spatial_max, static_cast<double>(spatial[i]));
    }
    any = true;
  }
};

template <typename T>
class AbedModel {
 public:
  AbedModel(AbedConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), bn_state_(0) {
    cfg_.validate();
    Rng rng(seed);
    build(rng);
  }

  const AbedConfig& config() const { return cfg_; }

  const std::vector<ad::NodePtr<T>>& parameters() const { return params_; }
  ad::BatchNormState<T>& bn_state() { return bn_state_; }
  const ad::BatchNormState<T>& bn_state() const { return bn_state_; }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  ad::NodePtr<T> find(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p;
    throw UsageError("no parameter named '" + name + "'");
  }

  // x is (b, in_features, t, h, w); returns (b, final_out_channels, t, h, w).
  // Train mode updates the batch-norm running statistics.
  ad::NodePtr<T> forward(ad::NodePtr<T> x, bool train, ForwardProbe* probe = nullptr) {
    if (x->value.rank() != 5 || x->value.dim(1) != cfg_.in_features)
      throw ShapeError("abed: input " + x->value.shape_str() + " does not carry " +
                       std::to_string(cfg_.in_features) + " feature channels");
    const int in_h = x->value.dim(3);
    const int in_w = x->value.dim(4);

    auto h = ad::batchnorm(x, find("encoder.bn.gamma"), find("encoder.bn.beta"), bn_state_, train);
    h = ad::conv3d(h, find("encoder.stem.weight"), find("encoder.stem.bias"), same_geom());
    for (std::size_t level = 0; level < cfg_.encoder_channels.size(); ++level) {
      const std::string base = "encoder.down" + std::to_string(level);
      h = ad::relu(
          ad::conv3d(h, find(base + ".weight"), find(base + ".bias"), down_geom()));
    }
    for (int i = 0; i < cfg_.n_rssab; ++i) h = rssab_forward(i, h, probe);
    for (std::size_t level = 0; level < cfg_.encoder_channels.size(); ++level) {
      const std::string base = "decoder.up" + std::to_string(level);
      h = ad::relu(ad::conv3d(ad::upsample2x_spatial(h), find(base + ".weight"),
                              find(base + ".bias"), same_geom()));
    }
    h = ad::pad_crop_spatial(h, in_h, in_w);
    return ad::conv3d(h, find("decoder.head.weight"), find("decoder.head.bias"), same_geom());
  }

  // One residual sequence-and-spatial attention block: two convolutions, a
  // channel-per-instant gate from spatial averages, a one-channel spatial
  // gate, then the residual addition.
  ad::NodePtr<T> rssab_forward(int index, ad::NodePtr<T> f_in, ForwardProbe* probe = nullptr) const {
    const int width = cfg_.encoder_channels.back();
    if (f_in->value.rank() != 5 || f_in->value.dim(1) != width)
      throw ShapeError("rssab: input " + f_in->value.shape_str() + " does not carry " +
                       std::to_string(width) + " channels");
    const std::string base = "decoder.rssab" + std::to_string(index);
    auto g = ad::conv3d(f_in, find(base + ".conv1.weight"), find(base + ".conv1.bias"),
                        same_geom());
    g = ad::relu(g);
    g = ad::conv3d(g, find(base + ".conv2.weight"), find(base + ".conv2.bias"), same_geom());

    auto a = ad::spatial_mean(g);
    a = ad::conv3d(a, find(base + ".tatt1.weight"), find(base + ".tatt1.bias"), point_geom());
    a = ad::relu(a);
    a = ad::conv3d(a, find(base + ".tatt2.weight"), find(base + ".tatt2.bias"), point_geom());
    a = ad::sigmoid(a);
    auto g_t = ad::mul(g, a);

    auto m = ad::sigmoid(ad::conv3d(g_t, find(base + ".satt.weight"), find(base + ".satt.bias"),
                                    same_geom()));
    auto g_s = ad::mul(g_t, m);
    if (probe) probe->record(a->value, m->value);
#ifndef NDEBUG
    for (std::int64_t i = 0; i < a->value.size(); ++i)
      assert(a->value[i] > T(0) && a->value[i] < T(1));
    for (std::int64_t i = 0; i < m->value.size(); ++i)
      assert(m->value[i] > T(0) && m->value[i] < T(1));
#endif
    return ad::add(f_in, g_s);
  }

  void save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw InputError("cannot open '" + tmp + "' for writing");
      binio::put_magic(out, "WABD");
      binio::put_u32(out, 1);
      nlohmann::json manifest = nlohmann::json::array();
      for (const auto& p : params_)
        manifest.push_back({{"name", p->name}, {"shape", p->value.shape()}});
      const nlohmann::json header{
          {"config", config_to_json(cfg_)},
          {"scalar", sizeof(T) == 8 ? "f64" : "f32"},
          {"params", manifest},
          {"bn_channels", cfg_.in_features}};
      binio::put_blob(out, header.dump());
      for (const auto& p : params_)
        for (std::int64_t i = 0; i < p->value.size(); ++i)
          binio::put_f32(out, static_cast<float>(p->value[i]));
      for (std::int64_t i = 0; i < bn_state_.running_mean.size(); ++i)
        binio::put_f32(out, static_cast<float>(bn_state_.running_mean[i]));
      for (std::int64_t i = 0; i < bn_state_.running_var.size(); ++i)
        binio::put_f32(out, static_cast<float>(bn_state_.running_var[i]));
      out.flush();
      if (!out) throw InputError("write failed for '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
      throw InputError("cannot rename '" + tmp + "' to '" + path + "'");
  }

  static AbedModel load(const std::string& path, const AbedConfig* expect = nullptr,
                        std::ostream* warnings = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    binio::check_magic(in, "WABD", path);
    const std::uint32_t version = binio::get_u32(in);
    if (version != 1)
      throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(binio::get_blob(in, path));
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(path + ": bad header: " + e.what());
    }
    const AbedConfig cfg = config_from_json(header.at("config"));
    if (expect && !(cfg == *expect))
      throw CheckpointError(path + ": checkpoint config does not match the expected config");
    const std::string scalar = header.at("scalar").get<std::string>();
    if (warnings && scalar == "f64" && sizeof(T) == 4)
      *warnings << "note: checkpoint '" << path
                << "' was written in 64-bit mode; values were rounded to 32-bit floats\n";

    AbedModel model(cfg, 0);
    const auto manifest = header.at("params");
    if (manifest.size() != model.params_.size())
      throw CheckpointError(path + ": parameter manifest size mismatch");
    try {
      for (std::size_t i = 0; i < model.params_.size(); ++i) {
        const auto& entry = manifest[i];
        if (entry.at("name").get<std::string>() != model.params_[i]->name)
          throw CheckpointError(path + ": parameter name mismatch at index " + std::to_string(i) +
                                " ('" + entry.at("name").get<std::string>() + "' vs '" +
                                model.params_[i]->name + "')");
        if (entry.at("shape").get<std::vector<int>>() != model.params_[i]->value.shape())
          throw CheckpointError(path + ": parameter shape mismatch for '" +
                                model.params_[i]->name + "'");
        auto& v = model.params_[i]->value;
        for (std::int64_t k = 0; k < v.size(); ++k) v[k] = static_cast<T>(binio::get_f32(in));
      }
      for (std::int64_t k = 0; k < model.bn_state_.running_mean.size(); ++k)
        model.bn_state_.running_mean[k] = static_cast<T>(binio::get_f32(in));
      for (std::int64_t k = 0; k < model.bn_state_.running_var.size(); ++k)
        model.bn_state_.running_var[k] = static_cast<T>(binio::get_f32(in));
    } catch (const FormatError&) {
      throw CheckpointError(path + ": truncated parameter blobs");
    }
    if (!in) throw CheckpointError(path + ": truncated parameter blobs");
    return model;
  }

  // deep copy of the trainable state, for best-epoch snapshots
  std::vector<Tensor<T>> snapshot() const {
    std::vector<Tensor<T>> out;
    out.reserve(params_.size() + 2);
    for (const auto& p : params_) out.push_back(p->value);
    out.push_back(bn_state_.running_mean);
    out.push_back(bn_state_.running_var);
    return out;
  }

  void restore(const std::vector<Tensor<T>>& snap) {
    if (snap.size() != params_.size() + 2) throw UsageError("restore: snapshot size mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value = snap[i];
    bn_state_.running_mean = snap[params_.size()];
    bn_state_.running_var = snap[params_.size() + 1];
  }

 private:
  ad::Conv3dGeom same_geom() const {
    ad::Conv3dGeom g;
    g.pt = cfg_.rssab_kernel[0] / 2;
    g.ph = cfg_.rssab_kernel[1] / 2;
    g.pw = cfg_.rssab_kernel[2] / 2;
    return g;
  }
  ad::Conv3dGeom down_geom() const {
    ad::Conv3dGeom g = same_geom();
    g.sh = 2;
    g.sw = 2;  // time is never strided
    return g;
  }
  static ad::Conv3dGeom point_geom() { return ad::Conv3dGeom{}; }

  void add_conv(Rng& rng, const std::string& name, int out_ch, int in_ch, int kt, int kh, int kw) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch) * kt * kh * kw);
    Tensor<T> w({out_ch, in_ch, kt, kh, kw});
    for (std::int64_t i = 0; i < w.size(); ++i)
      w[i] = static_cast<T>(rng.uniform(-bound, bound));
    params_.push_back(ad::leaf(std::move(w), true, name + ".weight"));
    params_.push_back(ad::leaf(Tensor<T>({out_ch}, T(0)), true, name + ".bias"));
  }

  void build(Rng& rng) {
    params_.clear();
    params_.push_back(ad::leaf(Tensor<T>({cfg_.in_features}, T(1)), true, "encoder.bn.gamma"));
    params_.push_back(ad::leaf(Tensor<T>({cfg_.in_features}, T(0)), true, "encoder.bn.beta"));
    bn_state_ = ad::BatchNormState<T>(cfg_.in_features);

    const int kt = cfg_.rssab_kernel[0], kh = cfg_.rssab_kernel[1], kw = cfg_.rssab_kernel[2];
    add_conv(rng, "encoder.stem", cfg_.stem_channels, cfg_.in_features, kt, kh, kw);
    int prev = cfg_.stem_channels;
    for (std::size_t level = 0; level < cfg_.encoder_channels.size(); ++level) {
      add_conv(rng, "encoder.down" + std::to_string(level), cfg_.encoder_channels[level], prev, kt,
               kh, kw);
      prev = cfg_.encoder_channels[level];
    }
    const int width = cfg_.encoder_channels.back();
    const int reduced = width / cfg_.attention_reduction;
    for (int i = 0; i < cfg_.n_rssab; ++i) {
      const std::string base = "decoder.rssab" + std::to_string(i);
      add_conv(rng, base + ".conv1", width, width, kt, kh, kw);
      add_conv(rng, base + ".conv2", width, width, kt, kh, kw);
      add_conv(rng, base + ".tatt1", reduced, width, 1, 1, 1);
      add_conv(rng, base + ".tatt2", width, reduced, 1, 1, 1);
      add_conv(rng, base + ".satt", 1, width, kt, kh, kw);
    }
    // decoder channel ladder mirrors the encoder: width -> ... -> stem
    std::vector<int> up_in, up_out;
    int cur = width;
    for (int level = static_cast<int>(cfg_.encoder_channels.size()) - 1; level >= 0; --level) {
      const int target = level == 0 ? cfg_.stem_channels : cfg_.encoder_channels[static_cast<std::size_t>(level - 1)];
      up_in.push_back(cur);
      up_out.push_back(target);
      cur = target;
    }
    for (std::size_t i = 0; i < up_in.size(); ++i)
      add_conv(rng, "decoder.up" + std::to_string(i), up_out[i], up_in[i], kt, kh, kw);
    add_conv(rng, "decoder.head", cfg_.final_out_channels, cfg_.stem_channels, kt, kh, kw);
  }

  AbedConfig cfg_;
  std::vector<ad::NodePtr<T>> params_;
  ad::BatchNormState<T> bn_state_;
};

}  // namespace windgrid::abed
