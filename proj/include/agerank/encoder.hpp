#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "agerank/checkpoint.hpp"
#include "agerank/ops.hpp"
#include "agerank/phantom.hpp"
#include "agerank/rng.hpp"
#include "agerank/tape.hpp"
#include "agerank/volume.hpp"

namespace agerank {

enum class Mode { train, eval };

/// Residual 3-D CNN: stem conv (stride 2) + BN + ReLU, then one stage per
/// width of conv-BN-ReLU-conv-BN residual blocks, global average pooling,
/// a linear projection to the embedding and optional L2 normalisation.
struct EncoderConfig {
  std::array<std::size_t, 3> input_dims{32, 32, 32};
  std::vector<std::size_t> widths{8, 16, 32};
  std::vector<std::size_t> strides{2, 1, 2};  // first block of each stage
  std::size_t blocks_per_stage = 1;
  std::size_t embedding_dim = 64;
  bool normalize_embedding = true;
  std::string target_layer = "stage3";
  std::uint64_t seed = 11;

  void validate() const {
    if (widths.empty()) throw ConfigError("encoder config: at least one stage is required");
    if (strides.size() != widths.size()) throw ConfigError("encoder config: one stride per stage is required");
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (widths[i] == 0) throw ConfigError("encoder config: widths must be positive");
      if (i && widths[i] < widths[i - 1]) throw ConfigError("encoder config: widths must be nondecreasing");
      if (strides[i] == 0) throw ConfigError("encoder config: strides must be positive");
    }
    if (blocks_per_stage == 0) throw ConfigError("encoder config: blocks_per_stage must be >= 1");
    if (embedding_dim < 2) throw ConfigError("encoder config: embedding dimension must be >= 2");
    for (auto d : input_dims)
      if (d < 8) throw ConfigError("encoder config: input dims must be >= 8");
    if (!has_layer(target_layer)) throw ConfigError("encoder config: unknown target layer '" + target_layer + "'");
  }

  std::vector<std::string> layer_names() const {
    std::vector<std::string> n{"stem.conv", "stem"};
    for (std::size_t s = 0; s < widths.size(); ++s) n.push_back("stage" + std::to_string(s + 1));
    return n;
  }

  bool has_layer(const std::string& name) const {
    for (const auto& n : layer_names())
      if (n == name) return true;
    return false;
  }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"input_dims", c.input_dims},       {"widths", c.widths},
       {"strides", c.strides},             {"blocks_per_stage", c.blocks_per_stage},
       {"embedding_dim", c.embedding_dim}, {"normalize_embedding", c.normalize_embedding},
       {"target_layer", c.target_layer},   {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.input_dims = j.value("input_dims", d.input_dims);
  c.widths = j.value("widths", d.widths);
  c.strides = j.value("strides", d.strides);
  c.blocks_per_stage = j.value("blocks_per_stage", d.blocks_per_stage);
  c.embedding_dim = j.value("embedding_dim", d.embedding_dim);
  c.normalize_embedding = j.value("normalize_embedding", d.normalize_embedding);
  c.target_layer = j.value("target_layer", d.target_layer);
  c.seed = j.value("seed", d.seed);
}

/// Ordered named tensors.
template <typename T>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor<T>> values;

  std::size_t add(std::string name, Tensor<T> t) {
    names.push_back(std::move(name));
    values.push_back(std::move(t));
    return values.size() - 1;
  }

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw std::out_of_range("parameter '" + name + "' not found");
  }

  Tensor<T>& operator[](const std::string& name) { return values[index(name)]; }
  const Tensor<T>& operator[](const std::string& name) const { return values[index(name)]; }

  std::size_t size() const noexcept { return values.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values) n += v.size();
    return n;
  }
};

/// FNV-1a over the raw bytes of a sequence of tensors.
template <typename T>
std::uint64_t checksum(const std::vector<Tensor<T>>& tensors, std::uint64_t h = 14695981039346656037ULL) {
  for (const auto& t : tensors) {
    const auto* p = reinterpret_cast<const unsigned char*>(t.raw());
    for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

template <typename T>
class Encoder {
 public:
  struct Forward {
    Var input;
    Var embedding;  // [N, d]
    Var target;     // activation of the designated layer
    std::vector<Var> params;  // aligned with params().values
  };

  Encoder() : Encoder(EncoderConfig{}) {}

  explicit Encoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng = make_rng(cfg_.seed, {0xe11cULL});
    auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
      const double sd = std::sqrt(2.0 / static_cast<double>(in * k * k * k));
      std::normal_distribution<double> nd(0.0, sd);
      Tensor<T> w({out, in, k, k, k});
      for (auto& v : w.data()) v = static_cast<T>(nd(rng));
      params_.add(name, std::move(w));
    };
    auto bn = [&](const std::string& name, std::size_t c) {
      params_.add(name + ".gamma", Tensor<T>({c}, T{1}));
      params_.add(name + ".beta", Tensor<T>({c}, T{0}));
      bn_.emplace(name, ops::BatchNormStats<T>(c));
    };
    conv("stem.conv", cfg_.widths[0], 1, 3);
    bn("stem.bn", cfg_.widths[0]);
    std::size_t in = cfg_.widths[0];
    for (std::size_t s = 0; s < cfg_.widths.size(); ++s) {
      for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
        const std::string p = block_name(s, b);
        const std::size_t out = cfg_.widths[s];
        const std::size_t stride = b == 0 ? cfg_.strides[s] : 1;
        conv(p + ".conv1", out, in, 3);
        bn(p + ".bn1", out);
        conv(p + ".conv2", out, out, 3);
        bn(p + ".bn2", out);
        if (stride != 1 || in != out) {
          conv(p + ".proj", out, in, 1);
          bn(p + ".proj_bn", out);
        }
        in = out;
      }
    }
    {
      const double sd = std::sqrt(1.0 / static_cast<double>(in));
      std::normal_distribution<double> nd(0.0, sd);
      Tensor<T> w({cfg_.embedding_dim, in});
      for (auto& v : w.data()) v = static_cast<T>(nd(rng));
      params_.add("embed.weight", std::move(w));
      params_.add("embed.bias", Tensor<T>({cfg_.embedding_dim}, T{0}));
    }
  }

  const EncoderConfig& config() const noexcept { return cfg_; }
  ParamStore<T>& params() noexcept { return params_; }
  const ParamStore<T>& params() const noexcept { return params_; }
  std::map<std::string, ops::BatchNormStats<T>>& bn_stats() noexcept { return bn_; }
  const std::map<std::string, ops::BatchNormStats<T>>& bn_stats() const noexcept { return bn_; }

  std::size_t parameter_count() const { return params_.scalar_count(); }

  /// Checksum over parameters and running statistics.
  std::uint64_t checksum() const {
    std::vector<Tensor<T>> all = params_.values;
    for (const auto& [n, s] : bn_) {
      all.push_back(s.mean);
      all.push_back(s.var);
    }
    return agerank::checksum(all);
  }

  /// Records the encoder on `tape` for an input batch [N,1,D,H,W].
  /// `target_layer` empty means the configured one.
  Forward forward(Tape<T>& tape, Var input, Mode mode, bool param_grads, const std::string& target_layer = "") {
    const std::string target = target_layer.empty() ? cfg_.target_layer : target_layer;
    if (!cfg_.has_layer(target)) throw ConfigError("encoder: unknown target layer '" + target + "'");
    const auto& x = tape.value(input);
    if (x.rank() != 5 || x.dim(1) != 1 || x.dim(2) != cfg_.input_dims[2] || x.dim(3) != cfg_.input_dims[1] ||
        x.dim(4) != cfg_.input_dims[0]) {
      throw ShapeError("encoder: input " + to_string(x.shape()) + " does not match configured dims [N,1," +
                       std::to_string(cfg_.input_dims[2]) + "," + std::to_string(cfg_.input_dims[1]) + "," +
                       std::to_string(cfg_.input_dims[0]) + "]");
    }
    Forward f;
    f.input = input;
    for (const auto& v : params_.values) f.params.push_back(tape.leaf(v, param_grads));
    auto P = [&](const std::string& name) { return f.params[params_.index(name)]; };
    ops::BatchNormOptions bno;
    bno.training = mode == Mode::train;
    auto bn = [&](Var h, const std::string& name) {
      return ops::batch_norm(tape, h, P(name + ".gamma"), P(name + ".beta"), bn_.at(name), bno);
    };

    Var h = ops::conv3d(tape, input, P("stem.conv"), Var{}, {2, 1});
    if (target == "stem.conv") f.target = h;
    h = ops::relu(tape, bn(h, "stem.bn"));
    if (target == "stem") f.target = h;
    for (std::size_t s = 0; s < cfg_.widths.size(); ++s) {
      for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
        const std::string p = block_name(s, b);
        const std::size_t stride = b == 0 ? cfg_.strides[s] : 1;
        Var y = ops::conv3d(tape, h, P(p + ".conv1"), Var{}, {stride, 1});
        y = ops::relu(tape, bn(y, p + ".bn1"));
        y = ops::conv3d(tape, y, P(p + ".conv2"), Var{}, {1, 1});
        y = bn(y, p + ".bn2");
        Var skip = h;
        if (bn_.count(p + ".proj_bn")) {
          skip = ops::conv3d(tape, h, P(p + ".proj"), Var{}, {stride, 0});
          skip = bn(skip, p + ".proj_bn");
        }
        h = ops::relu(tape, ops::add(tape, y, skip));
      }
      if (target == "stage" + std::to_string(s + 1)) f.target = h;
    }
    Var pooled = ops::global_avg_pool(tape, h);
    Var e = ops::dense(tape, pooled, P("embed.weight"), P("embed.bias"));
    if (cfg_.normalize_embedding) e = ops::l2_normalize(tape, e);
    f.embedding = e;
    return f;
  }

  /// Eval-mode embeddings for a list of volumes, processed in chunks.
  std::vector<std::vector<double>> embed(const std::vector<const Volume*>& volumes, std::size_t chunk = 16) {
    std::vector<std::vector<double>> out;
    for (std::size_t start = 0; start < volumes.size(); start += chunk) {
      const std::size_t n = std::min(chunk, volumes.size() - start);
      Tape<T> tape;
      Var x = tape.leaf(batch_tensor(volumes, start, n));
      auto f = forward(tape, x, Mode::eval, false);
      const auto& e = tape.value(f.embedding);
      const std::size_t d = e.dim(1);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row(d);
        for (std::size_t c = 0; c < d; ++c) row[c] = e[i * d + c];
        out.push_back(std::move(row));
      }
    }
    return out;
  }

  std::vector<double> embed(const Volume& v) { return embed(std::vector<const Volume*>{&v}).front(); }

  Tensor<T> batch_tensor(const std::vector<const Volume*>& volumes, std::size_t start, std::size_t n) const {
    const auto& d = cfg_.input_dims;
    const std::size_t count = d[0] * d[1] * d[2];
    Tensor<T> x({n, 1, d[2], d[1], d[0]});
    for (std::size_t i = 0; i < n; ++i) {
      const Volume& v = *volumes[start + i];
      if (v.dims != d) {
        throw ShapeError("encoder: volume dims " + to_string(Shape{v.dims[0], v.dims[1], v.dims[2]}) +
                         " do not match configured input dims " + to_string(Shape{d[0], d[1], d[2]}));
      }
      std::copy(v.voxels.begin(), v.voxels.end(), x.raw() + i * count);
    }
    return x;
  }

  void save_to(Checkpoint& c, const std::string& prefix = "encoder/") const {
    for (std::size_t i = 0; i < params_.size(); ++i) c.put(prefix + params_.names[i], params_.values[i].template cast<float>());
    for (const auto& [n, s] : bn_) {
      c.put(prefix + n + ".running_mean", s.mean.template cast<float>());
      c.put(prefix + n + ".running_var", s.var.template cast<float>());
    }
    c.header["encoder_config"] = cfg_;
  }

  void load_from(const Checkpoint& c, const std::string& prefix = "encoder/") {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& t = c.get(prefix + params_.names[i]);
      if (t.shape() != params_.values[i].shape()) {
        throw ShapeError("checkpoint: parameter " + params_.names[i] + " has shape " + to_string(t.shape()) +
                         ", expected " + to_string(params_.values[i].shape()));
      }
      params_.values[i] = t.template cast<T>();
    }
    for (auto& [n, s] : bn_) {
      s.mean = c.get(prefix + n + ".running_mean").template cast<T>();
      s.var = c.get(prefix + n + ".running_var").template cast<T>();
    }
  }

 private:
  static std::string block_name(std::size_t stage, std::size_t block) {
    return "stage" + std::to_string(stage + 1) + ".block" + std::to_string(block + 1);
  }

  EncoderConfig cfg_;
  ParamStore<T> params_;
  std::map<std::string, ops::BatchNormStats<T>> bn_;
};

/// Linear age head: prediction = weight . embedding + bias.
template <typename T>
struct RegressionHead {
  Tensor<T> weight;  // [1, d]
  Tensor<T> bias;    // [1]

  RegressionHead() = default;
  RegressionHead(std::size_t d, T bias_value = T{0}) : weight({1, d}, T{0}), bias({1}, bias_value) {}

  static RegressionHead initialized(std::size_t d, T bias_value, std::uint64_t seed) {
    RegressionHead h(d, bias_value);
    Rng rng = make_rng(seed, {0x4eadULL});
    std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    for (auto& v : h.weight.data()) v = static_cast<T>(nd(rng));
    return h;
  }

  std::size_t dim() const { return weight.dim(1); }

  double predict(const std::vector<double>& embedding) const {
    if (embedding.size() != dim()) {
      throw ShapeError("head: embedding length " + std::to_string(embedding.size()) + " vs head dim " +
                       std::to_string(dim()));
    }
    double y = static_cast<double>(bias[0]);
    for (std::size_t c = 0; c < embedding.size(); ++c) y += static_cast<double>(weight[c]) * embedding[c];
    return y;
  }

  void save_to(Checkpoint& c, const std::string& prefix = "head/") const {
    c.put(prefix + "weight", weight.template cast<float>());
    c.put(prefix + "bias", bias.template cast<float>());
  }

  void load_from(const Checkpoint& c, const std::string& prefix = "head/") {
    weight = c.get(prefix + "weight").template cast<T>();
    bias = c.get(prefix + "bias").template cast<T>();
  }
};

/// Encoder plus regression head.
template <typename T>
struct AgeModel {
  Encoder<T> encoder;
  RegressionHead<T> head;
  bool has_head = false;

  AgeModel() = default;
  explicit AgeModel(EncoderConfig cfg) : encoder(std::move(cfg)), head(encoder.config().embedding_dim) {}

  double predict_age(const Volume& v) {
    if (!has_head) throw std::logic_error("predict_age: model has no trained regression head");
    return head.predict(encoder.embed(v));
  }

  std::vector<double> predict_ages(const std::vector<const Volume*>& vs) {
    if (!has_head) throw std::logic_error("predict_age: model has no trained regression head");
    std::vector<double> out;
    for (const auto& e : encoder.embed(vs)) out.push_back(head.predict(e));
    return out;
  }

  /// Records encoder + head on a tape; returns the [N,1] prediction node.
  Var forward_prediction(Tape<T>& tape, typename Encoder<T>::Forward& f, bool head_grads, Var* head_w = nullptr,
                         Var* head_b = nullptr) {
    Var w = tape.leaf(head.weight, head_grads);
    Var b = tape.leaf(head.bias, head_grads);
    if (head_w) *head_w = w;
    if (head_b) *head_b = b;
    return ops::dense(tape, f.embedding, w, b);
  }
};

/// Prediction, target-layer activation and its gradient for one volume.
template <typename T>
struct ActivationGradient {
  double prediction = 0.0;
  std::string layer;
  Tensor<T> activation;  // [C, d, h, w]
  Tensor<T> gradient;    // d prediction / d activation, same shape
};

/// Eval-mode forward of a single volume that keeps the target activation A
/// and backpropagates the prediction to it.
template <typename T>
ActivationGradient<T> forward_with_activations(AgeModel<T>& model, const Volume& v, const std::string& layer = "") {
  if (!model.has_head) throw std::logic_error("forward_with_activations: model has no trained regression head");
  const std::string target = layer.empty() ? model.encoder.config().target_layer : layer;
  if (!model.encoder.config().has_layer(target)) throw ConfigError("unknown layer '" + target + "'");
  Tape<T> tape;
  Var x = tape.leaf(model.encoder.batch_tensor({&v}, 0, 1), true);
  auto f = model.encoder.forward(tape, x, Mode::eval, false, target);
  Var y = model.forward_prediction(tape, f, false);
  tape.backward(y);
  ActivationGradient<T> out;
  out.prediction = tape.value(y)[0];
  out.layer = target;
  const auto& a = tape.value(f.target);
  Shape s(a.shape().begin() + 1, a.shape().end());
  out.activation = a.reshaped(s);
  out.gradient = tape.grad(f.target).reshaped(s);
  return out;
}

}  // namespace agerank
