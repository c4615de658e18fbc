#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "agerank/ops.hpp"
#include "agerank/phantom.hpp"
#include "agerank/tape.hpp"

namespace agerank {

enum class Similarity { negative_l2, cosine };
enum class BatchMode { distinct_samples, two_views };

inline std::string to_string(Similarity s) { return s == Similarity::cosine ? "cosine" : "negative-l2"; }
inline std::string to_string(BatchMode m) { return m == BatchMode::two_views ? "two-views" : "distinct-samples"; }

inline Similarity parse_similarity(const std::string& s) {
  if (s == "negative-l2") return Similarity::negative_l2;
  if (s == "cosine") return Similarity::cosine;
  throw ConfigError("rnc config: unknown similarity '" + s + "' (expected negative-l2 or cosine)");
}

inline BatchMode parse_batch_mode(const std::string& s) {
  if (s == "distinct-samples") return BatchMode::distinct_samples;
  if (s == "two-views") return BatchMode::two_views;
  throw ConfigError("rnc config: unknown batch mode '" + s + "' (expected distinct-samples or two-views)");
}

struct RncConfig {
  double temperature = 2.0;
  Similarity similarity = Similarity::negative_l2;
  BatchMode batch_mode = BatchMode::distinct_samples;

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("rnc config: temperature must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const RncConfig& c) {
  j = {{"temperature", c.temperature}, {"similarity", to_string(c.similarity)}, {"batch_mode", to_string(c.batch_mode)}};
}

inline void from_json(const nlohmann::json& j, RncConfig& c) {
  RncConfig d;
  c.temperature = j.value("temperature", d.temperature);
  c.similarity = parse_similarity(j.value("similarity", to_string(d.similarity)));
  c.batch_mode = parse_batch_mode(j.value("batch_mode", to_string(d.batch_mode)));
}

/// M embeddings [M,d] with their labels.
struct EmbeddingBatch {
  Tensor<double> embeddings;
  std::vector<double> labels;

  std::size_t size() const { return labels.size(); }

  void validate() const {
    if (embeddings.rank() != 2) throw ShapeError("rnc: embeddings must be [M,d], got " + to_string(embeddings.shape()));
    if (embeddings.dim(0) != labels.size()) {
      throw ShapeError("rnc: " + std::to_string(embeddings.dim(0)) + " embeddings but " +
                       std::to_string(labels.size()) + " labels");
    }
    if (labels.size() < 2) throw std::invalid_argument("rnc: batch needs at least 2 samples");
    if (!embeddings.all_finite()) throw NonFiniteError("rnc: non-finite embedding");
    for (double y : labels)
      if (!std::isfinite(y)) throw NonFiniteError("rnc: non-finite label");
  }
};

/// S_ij = { k != i : |y_i - y_k| >= |y_i - y_j| }, ties included.
inline std::vector<std::size_t> ranked_set(const std::vector<double>& labels, std::size_t i, std::size_t j) {
  if (i >= labels.size() || j >= labels.size()) throw std::out_of_range("ranked_set: index out of range");
  if (i == j) throw std::invalid_argument("ranked_set: anchor and partner must differ");
  const double ref = std::abs(labels[i] - labels[j]);
  std::vector<std::size_t> s;
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (k != i && std::abs(labels[i] - labels[k]) >= ref) s.push_back(k);
  return s;
}

inline ops::SubsetTable ranked_sets(const std::vector<double>& labels) {
  const std::size_t M = labels.size();
  ops::SubsetTable t(M * M);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < M; ++j)
      if (i != j) t[i * M + j] = ranked_set(labels, i, j);
  return t;
}

/// Records the RNC objective on a tape. With `anchor` set, only that row is
/// averaged (per-sample loss); otherwise the mean over all anchors.
template <typename T>
Var rnc_loss_node(Tape<T>& tape, Var embeddings, const std::vector<double>& labels, const RncConfig& cfg,
                  std::optional<std::size_t> anchor = std::nullopt) {
  cfg.validate();
  const std::size_t M = labels.size();
  if (M < 2) throw std::invalid_argument("rnc: batch needs at least 2 samples");
  if (anchor && *anchor >= M) throw std::out_of_range("rnc: anchor index out of range");
  const T inv_tau = static_cast<T>(1.0 / cfg.temperature);
  Var z;
  if (cfg.similarity == Similarity::negative_l2) {
    z = ops::scale(tape, ops::pairwise_distance(tape, embeddings), -inv_tau);
  } else {
    Var n = ops::l2_normalize(tape, embeddings);
    z = ops::scale(tape, ops::matmul(tape, n, ops::transpose(tape, n)), inv_tau);
  }
  Var lse = ops::subset_logsumexp(tape, z, ranked_sets(labels));
  Var nll = ops::sub(tape, lse, z);
  Tensor<T> w({M, M}, T{0});
  for (std::size_t i = 0; i < M; ++i) {
    if (anchor && i != *anchor) continue;
    for (std::size_t j = 0; j < M; ++j)
      if (i != j) w[i * M + j] = static_cast<T>(anchor ? 1.0 / (M - 1) : 1.0 / (M * (M - 1.0)));
  }
  return ops::weighted_sum(tape, nll, std::move(w));
}

inline double rnc_per_sample_loss(const EmbeddingBatch& b, std::size_t anchor, const RncConfig& cfg) {
  b.validate();
  Tape<double> tape;
  Var v = tape.leaf(b.embeddings, false);
  return tape.value(rnc_loss_node(tape, v, b.labels, cfg, anchor)).item();
}

inline double rnc_batch_loss(const EmbeddingBatch& b, const RncConfig& cfg) {
  b.validate();
  Tape<double> tape;
  Var v = tape.leaf(b.embeddings, false);
  return tape.value(rnc_loss_node(tape, v, b.labels, cfg)).item();
}

struct LossAndGradient {
  double loss = 0.0;
  Tensor<double> gradient;  // same shape as the input
};

/// Loss and dL/dv for every embedding, by reverse-mode through the loss expression.
inline LossAndGradient rnc_batch_gradient(const EmbeddingBatch& b, const RncConfig& cfg) {
  b.validate();
  Tape<double> tape;
  Var v = tape.leaf(b.embeddings, true);
  Var l = rnc_loss_node(tape, v, b.labels, cfg);
  tape.backward(l);
  return {tape.value(l).item(), tape.grad(v)};
}

struct L1Result {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// mean |p - y| and its gradient sign(p - y)/n (0 at ties).
inline L1Result l1_loss(const std::vector<double>& predictions, const std::vector<double>& targets) {
  if (predictions.empty()) throw std::invalid_argument("l1_loss: empty input");
  if (predictions.size() != targets.size()) {
    throw std::invalid_argument("l1_loss: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(targets.size()) + " targets");
  }
  const double n = static_cast<double>(predictions.size());
  L1Result r;
  r.gradient.resize(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - targets[i];
    r.loss += std::abs(e);
    r.gradient[i] = (e > 0 ? 1.0 : e < 0 ? -1.0 : 0.0) / n;
  }
  r.loss /= n;
  return r;
}

}  // namespace agerank
