#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "agerank/augment.hpp"
#include "agerank/checkpoint.hpp"
#include "agerank/encoder.hpp"
#include "agerank/optim.hpp"
#include "agerank/phantom.hpp"
#include "agerank/rnc.hpp"

namespace agerank {

enum class Pipeline { rnc_two_stage, end_to_end };

inline std::string to_string(Pipeline p) { return p == Pipeline::end_to_end ? "end-to-end" : "rnc-two-stage"; }

inline Pipeline parse_pipeline(const std::string& s) {
  if (s == "rnc-two-stage") return Pipeline::rnc_two_stage;
  if (s == "end-to-end") return Pipeline::end_to_end;
  throw ConfigError("unknown pipeline '" + s + "' (expected rnc-two-stage or end-to-end)");
}

struct TrainingConfig {
  Pipeline pipeline = Pipeline::rnc_two_stage;
  std::size_t batch_size = 16;
  std::size_t stage1_epochs = 200;
  double stage1_lr = 0.5;
  double stage1_decay = 0.1;
  double stage1_momentum = 0.9;
  std::size_t stage2_epochs = 50;
  double stage2_lr = 0.05;
  double stage2_decay = 0.2;
  double stage2_momentum = 0.9;
  double baseline_lr = 1e-3;
  std::size_t baseline_max_epochs = 200;
  std::size_t patience = 30;
  std::vector<double> milestones{0.6, 0.8};
  std::size_t checkpoint_every = 10;  // epochs; 0 disables periodic checkpoints
  std::uint64_t seed = 1;

  void validate() const {
    for (double lr : {stage1_lr, stage2_lr, baseline_lr})
      if (!(lr > 0.0)) throw ConfigError("training config: learning rates must be > 0");
    for (double m : {stage1_momentum, stage2_momentum})
      if (!(m >= 0.0 && m < 1.0)) throw ConfigError("training config: momentum must lie in [0,1)");
    for (double d : {stage1_decay, stage2_decay})
      if (!(d > 0.0)) throw ConfigError("training config: decay factors must be > 0");
    if (patience < 1) throw ConfigError("training config: patience must be >= 1");
    if (batch_size < 2) throw ConfigError("training config: batch size must be >= 2");
    if (stage1_epochs < 1 || stage2_epochs < 1 || baseline_max_epochs < 1)
      throw ConfigError("training config: epoch counts must be >= 1");
    for (double f : milestones)
      if (!(f > 0.0 && f < 1.0)) throw ConfigError("training config: milestone fractions must lie in (0,1)");
  }
};

inline void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = {{"pipeline", to_string(c.pipeline)},
       {"batch_size", c.batch_size},
       {"stage1_epochs", c.stage1_epochs},
       {"stage1_lr", c.stage1_lr},
       {"stage1_decay", c.stage1_decay},
       {"stage1_momentum", c.stage1_momentum},
       {"stage2_epochs", c.stage2_epochs},
       {"stage2_lr", c.stage2_lr},
       {"stage2_decay", c.stage2_decay},
       {"stage2_momentum", c.stage2_momentum},
       {"baseline_lr", c.baseline_lr},
       {"baseline_max_epochs", c.baseline_max_epochs},
       {"patience", c.patience},
       {"milestones", c.milestones},
       {"checkpoint_every", c.checkpoint_every},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
  TrainingConfig d;
  c.pipeline = parse_pipeline(j.value("pipeline", to_string(d.pipeline)));
  c.batch_size = j.value("batch_size", d.batch_size);
  c.stage1_epochs = j.value("stage1_epochs", d.stage1_epochs);
  c.stage1_lr = j.value("stage1_lr", d.stage1_lr);
  c.stage1_decay = j.value("stage1_decay", d.stage1_decay);
  c.stage1_momentum = j.value("stage1_momentum", d.stage1_momentum);
  c.stage2_epochs = j.value("stage2_epochs", d.stage2_epochs);
  c.stage2_lr = j.value("stage2_lr", d.stage2_lr);
  c.stage2_decay = j.value("stage2_decay", d.stage2_decay);
  c.stage2_momentum = j.value("stage2_momentum", d.stage2_momentum);
  c.baseline_lr = j.value("baseline_lr", d.baseline_lr);
  c.baseline_max_epochs = j.value("baseline_max_epochs", d.baseline_max_epochs);
  c.patience = j.value("patience", d.patience);
  c.milestones = j.value("milestones", d.milestones);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.seed = j.value("seed", d.seed);
}

struct HistoryRow {
  std::size_t epoch = 0;  // 1-based within its stage
  int stage = 1;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

inline std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  os << "epoch,stage,train_loss,val_metric,lr\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%.17g,%.17g,%.17g\n", r.epoch, r.stage, r.train_loss, r.val_metric, r.lr);
    os << buf;
  }
  return os.str();
}

inline void to_json(nlohmann::json& j, const HistoryRow& r) {
  j = {{"epoch", r.epoch}, {"stage", r.stage}, {"train_loss", r.train_loss}, {"val_metric", r.val_metric}, {"lr", r.lr}};
}

inline void from_json(const nlohmann::json& j, HistoryRow& r) {
  r.epoch = j.at("epoch");
  r.stage = j.at("stage");
  r.train_loss = j.at("train_loss");
  r.val_metric = j.at("val_metric");
  r.lr = j.at("lr");
}

/// Runtime knobs that do not change the result.
struct TrainOptions {
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  bool resume = false;
  std::optional<std::size_t> halt_after_epochs;  // simulated interruption (counts epochs run in this call)
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  AgeModel<float> model;
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;     // end-to-end: epoch whose weights were restored
  std::size_t stopped_epoch = 0;  // end-to-end: last epoch run
  bool completed = false;         // false when halted early
};

namespace train_detail {

inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& pool, std::size_t batch,
                                                          std::uint64_t seed, std::size_t epoch, std::uint64_t tag) {
  std::vector<std::size_t> order = pool;
  Rng rng = make_rng(seed, {tag, epoch});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < order.size(); s += batch)
    out.emplace_back(order.begin() + s, order.begin() + std::min(order.size(), s + batch));
  // A trailing singleton cannot form a contrastive pair or a batch-norm batch.
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

/// Augmented views for a batch; the stream depends only on (seed, epoch, sample, view).
inline std::vector<Volume> augmented_batch(const Dataset& data, const std::vector<std::size_t>& batch,
                                           const AugmentConfig& aug, std::uint64_t seed, std::size_t epoch,
                                           std::size_t views) {
  std::vector<Volume> out;
  for (std::size_t view = 0; view < views; ++view)
    for (auto i : batch) {
      Rng rng = make_rng(seed ^ aug.seed, {0xa06ULL, epoch, i, view});
      out.push_back(augment(data.volumes[i], aug, rng));
    }
  return out;
}

inline std::vector<const Volume*> pointers(const std::vector<Volume>& vs) {
  std::vector<const Volume*> p;
  for (const auto& v : vs) p.push_back(&v);
  return p;
}

inline std::vector<const Volume*> pointers(const Dataset& d, const std::vector<std::size_t>& idx) {
  std::vector<const Volume*> p;
  for (auto i : idx) p.push_back(&d.volumes[i]);
  return p;
}

inline std::vector<double> ages(const Dataset& d, const std::vector<std::size_t>& idx) {
  std::vector<double> a;
  for (auto i : idx) a.push_back(d.samples[i].age);
  return a;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename T>
std::vector<Tensor<T>*> param_ptrs(ParamStore<T>& p) {
  std::vector<Tensor<T>*> out;
  for (auto& v : p.values) out.push_back(&v);
  return out;
}

inline double rnc_eval_loss(Encoder<float>& enc, const Dataset& d, const std::vector<std::size_t>& idx,
                            const RncConfig& rnc) {
  if (idx.size() < 2) return 0.0;
  const auto emb = enc.embed(pointers(d, idx));
  EmbeddingBatch b;
  b.embeddings = Tensor<double>({emb.size(), emb[0].size()});
  for (std::size_t i = 0; i < emb.size(); ++i)
    for (std::size_t c = 0; c < emb[i].size(); ++c) b.embeddings[i * emb[i].size() + c] = emb[i][c];
  b.labels = ages(d, idx);
  return rnc_batch_loss(b, rnc);
}

inline double mae(const std::vector<double>& p, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - y[i]);
  return p.empty() ? 0.0 : s / static_cast<double>(p.size());
}

inline void say(const TrainOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

inline void check_splits(const Dataset& d) {
  if (d.indices("train").size() < 2) throw ConfigError("training: train split needs at least 2 samples");
  if (d.indices("val").empty()) throw ConfigError("training: val split is empty");
}

inline nlohmann::json history_json(const std::vector<HistoryRow>& h) { return h; }

}  // namespace train_detail


/// Early stopping on a validation metric (lower is better).
struct EarlyStopping {
  std::size_t patience = 30;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t since_best = 0;

  /// Records epoch `epoch` (1-based); returns true when it is the new best.
  bool update(std::size_t epoch, double value) {
    if (value < best) {
      best = value;
      best_epoch = epoch;
      since_best = 0;
      return true;
    }
    ++since_best;
    return false;
  }

  bool should_stop() const { return since_best >= patience; }
};

/// One stage-2 epoch: linear head on fixed embeddings, SGD + momentum under L1.
inline HistoryRow fit_head_epoch(RegressionHead<float>& head, const std::vector<std::vector<double>>& train_emb,
                                 const std::vector<double>& train_age, const std::vector<std::vector<double>>& val_emb,
                                 const std::vector<double>& val_age, const TrainingConfig& cfg, Sgd<float>& opt,
                                 std::size_t epoch) {
  std::vector<std::size_t> pool(train_emb.size());
  std::iota(pool.begin(), pool.end(), 0);
  const std::size_t d = head.dim();
  opt.lr = scheduled_lr(cfg.stage2_lr, cfg.stage2_decay, cfg.milestones, epoch, cfg.stage2_epochs);
  double loss_sum = 0.0;
  std::size_t seen = 0;
  for (const auto& batch : train_detail::make_batches(pool, cfg.batch_size, cfg.seed, epoch, 0x57a2ULL)) {
    std::vector<double> pred, y;
    for (auto i : batch) {
      pred.push_back(head.predict(train_emb[i]));
      y.push_back(train_age[i]);
    }
    const auto l1 = l1_loss(pred, y);
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      for (std::size_t c = 0; c < d; ++c) gw[c] += l1.gradient[k] * train_emb[batch[k]][c];
      gb += l1.gradient[k];
    }
    Tensor<float> tw({1, d}), tb({1}, static_cast<float>(gb));
    for (std::size_t c = 0; c < d; ++c) tw[c] = static_cast<float>(gw[c]);
    opt.step({&head.weight, &head.bias}, {&tw, &tb});
    loss_sum += l1.loss * static_cast<double>(batch.size());
    seen += batch.size();
  }
  std::vector<double> vp;
  for (const auto& e : val_emb) vp.push_back(head.predict(e));
  return {epoch + 1, 2, loss_sum / static_cast<double>(seen), train_detail::mae(vp, val_age), opt.lr};
}

/// Stage 1: encoder under the RNC loss with augmentation (SGD + momentum).
/// Stage 2: frozen encoder, linear head under L1 on cached embeddings.
inline TrainResult train_rnc_two_stage(const Dataset& data, const EncoderConfig& enc_cfg, const RncConfig& rnc,
                                       const AugmentConfig& aug, const TrainingConfig& cfg,
                                       const TrainOptions& opts = {}) {
  enc_cfg.validate();
  rnc.validate();
  aug.validate();
  cfg.validate();
  train_detail::check_splits(data);
  const auto train_idx = data.indices("train");
  const auto val_idx = data.indices("val");
  const std::size_t views = rnc.batch_mode == BatchMode::two_views ? 2 : 1;

  TrainResult res{AgeModel<float>(enc_cfg), {}, 0, 0, false};
  auto& enc = res.model.encoder;
  Sgd<float> opt1(cfg.stage1_lr, cfg.stage1_momentum);
  Sgd<float> opt2(cfg.stage2_lr, cfg.stage2_momentum);
  int stage = 1;
  std::size_t next_epoch = 0;

  auto save = [&](int st, std::size_t done) {
    if (opts.checkpoint_path.empty()) return;
    Checkpoint c;
    c.header["pipeline"] = to_string(Pipeline::rnc_two_stage);
    c.header["stage"] = st;
    c.header["epoch"] = done;
    c.header["training_config"] = cfg;
    c.header["rnc_config"] = rnc;
    c.header["history"] = res.history;
    c.header["has_head"] = res.model.has_head;
    enc.save_to(c);
    res.model.head.save_to(c);
    opt1.save_to(c, "opt1");
    opt2.save_to(c, "opt2");
    c.save(opts.checkpoint_path);
  };

  if (opts.resume && !opts.checkpoint_path.empty() && std::filesystem::exists(opts.checkpoint_path)) {
    const auto c = Checkpoint::load(opts.checkpoint_path);
    if (c.header.at("pipeline") != to_string(Pipeline::rnc_two_stage))
      throw ConfigError("resume: checkpoint belongs to pipeline " + c.header.at("pipeline").get<std::string>());
    enc.load_from(c);
    res.model.head.load_from(c);
    res.model.has_head = c.header.at("has_head");
    opt1.load_from(c, "opt1");
    opt2.load_from(c, "opt2");
    res.history = c.header.at("history").get<std::vector<HistoryRow>>();
    stage = c.header.at("stage");
    next_epoch = c.header.at("epoch");
    train_detail::say(opts, "resumed at stage " + std::to_string(stage) + " epoch " + std::to_string(next_epoch));
  }

  std::size_t run = 0;
  auto halted = [&] { return opts.halt_after_epochs && run >= *opts.halt_after_epochs; };

  if (stage == 1) {
    auto params = train_detail::param_ptrs(enc.params());
    for (std::size_t epoch = next_epoch; epoch < cfg.stage1_epochs; ++epoch) {
      if (halted()) {
        save(1, epoch);
        return res;
      }
      opt1.lr = scheduled_lr(cfg.stage1_lr, cfg.stage1_decay, cfg.milestones, epoch, cfg.stage1_epochs);
      double loss_sum = 0.0;
      std::size_t nb = 0;
      for (const auto& batch : train_detail::make_batches(train_idx, cfg.batch_size, cfg.seed, epoch, 0xba7cULL)) {
        const auto views_v = train_detail::augmented_batch(data, batch, aug, cfg.seed, epoch, views);
        const auto ptrs = train_detail::pointers(views_v);
        Tape<float> tape;
        Var x = tape.leaf(enc.batch_tensor(ptrs, 0, ptrs.size()));
        auto f = enc.forward(tape, x, Mode::train, true);
        EmbeddingBatch eb;
        eb.embeddings = tape.value(f.embedding).cast<double>();
        for (std::size_t v = 0; v < views; ++v)
          for (auto i : batch) eb.labels.push_back(data.samples[i].age);
        const auto lg = rnc_batch_gradient(eb, rnc);
        tape.backward(f.embedding, lg.gradient.cast<float>());
        std::vector<const Tensor<float>*> grads;
        for (auto p : f.params) grads.push_back(&tape.grad(p));
        opt1.step(params, grads);
        loss_sum += lg.loss;
        ++nb;
      }
      const double val = train_detail::rnc_eval_loss(enc, data, val_idx, rnc);
      res.history.push_back({epoch + 1, 1, loss_sum / static_cast<double>(nb), val, opt1.lr});
      ++run;
      train_detail::say(opts, "stage 1 epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.stage1_epochs) +
                                  " train_rnc " + std::to_string(res.history.back().train_loss) + " val_rnc " +
                                  std::to_string(val));
      if (cfg.checkpoint_every && (epoch + 1) % cfg.checkpoint_every == 0) save(1, epoch + 1);
    }
    stage = 2;
    next_epoch = 0;
    const auto train_age = train_detail::ages(data, train_idx);
    res.model.head = RegressionHead<float>::initialized(enc_cfg.embedding_dim,
                                                        static_cast<float>(train_detail::median(train_age)), cfg.seed);
    res.model.has_head = true;
    save(2, 0);
  }

  const auto train_emb = enc.embed(train_detail::pointers(data, train_idx));
  const auto val_emb = enc.embed(train_detail::pointers(data, val_idx));
  const auto train_age = train_detail::ages(data, train_idx);
  const auto val_age = train_detail::ages(data, val_idx);
  for (std::size_t epoch = next_epoch; epoch < cfg.stage2_epochs; ++epoch) {
    if (halted()) {
      save(2, epoch);
      return res;
    }
    res.history.push_back(fit_head_epoch(res.model.head, train_emb, train_age, val_emb, val_age, cfg, opt2, epoch));
    ++run;
    if (cfg.checkpoint_every && (epoch + 1) % cfg.checkpoint_every == 0) save(2, epoch + 1);
  }
  train_detail::say(opts, "stage 2 done: val MAE " + std::to_string(res.history.back().val_metric));
  res.completed = true;
  save(2, cfg.stage2_epochs);
  return res;
}

/// Encoder and head trained jointly under L1 with Adam, early stopping on
/// val MAE, best-val weights restored.
inline TrainResult train_end_to_end(const Dataset& data, const EncoderConfig& enc_cfg, const AugmentConfig& aug,
                                    const TrainingConfig& cfg, const TrainOptions& opts = {}) {
  enc_cfg.validate();
  aug.validate();
  cfg.validate();
  train_detail::check_splits(data);
  const auto train_idx = data.indices("train");
  const auto val_idx = data.indices("val");
  const auto val_age = train_detail::ages(data, val_idx);

  TrainResult res{AgeModel<float>(enc_cfg), {}, 0, 0, false};
  auto& model = res.model;
  model.head = RegressionHead<float>::initialized(
      enc_cfg.embedding_dim, static_cast<float>(train_detail::median(train_detail::ages(data, train_idx))), cfg.seed);
  model.has_head = true;
  AgeModel<float> best = model;
  Adam<float> opt(cfg.baseline_lr);
  EarlyStopping stopper{cfg.patience};
  std::size_t next_epoch = 0;

  auto save = [&](std::size_t done) {
    if (opts.checkpoint_path.empty()) return;
    Checkpoint c;
    c.header["pipeline"] = to_string(Pipeline::end_to_end);
    c.header["epoch"] = done;
    c.header["training_config"] = cfg;
    c.header["history"] = res.history;
    c.header["early_stopping"] = {{"best", stopper.best}, {"best_epoch", stopper.best_epoch},
                                  {"since_best", stopper.since_best}};
    model.encoder.save_to(c);
    model.head.save_to(c);
    best.encoder.save_to(c, "best/encoder/");
    best.head.save_to(c, "best/head/");
    opt.save_to(c, "adam");
    c.save(opts.checkpoint_path);
  };

  if (opts.resume && !opts.checkpoint_path.empty() && std::filesystem::exists(opts.checkpoint_path)) {
    const auto c = Checkpoint::load(opts.checkpoint_path);
    if (c.header.at("pipeline") != to_string(Pipeline::end_to_end))
      throw ConfigError("resume: checkpoint belongs to pipeline " + c.header.at("pipeline").get<std::string>());
    model.encoder.load_from(c);
    model.head.load_from(c);
    best.encoder.load_from(c, "best/encoder/");
    best.head.load_from(c, "best/head/");
    opt.load_from(c, "adam");
    res.history = c.header.at("history").get<std::vector<HistoryRow>>();
    const auto& es = c.header.at("early_stopping");
    stopper.best = es.at("best").is_null() ? std::numeric_limits<double>::infinity() : es.at("best").get<double>();
    stopper.best_epoch = es.at("best_epoch");
    stopper.since_best = es.at("since_best");
    next_epoch = c.header.at("epoch");
    train_detail::say(opts, "resumed at epoch " + std::to_string(next_epoch));
  }

  std::size_t run = 0;
  auto params = train_detail::param_ptrs(model.encoder.params());
  params.push_back(&model.head.weight);
  params.push_back(&model.head.bias);
  for (std::size_t epoch = next_epoch; epoch < cfg.baseline_max_epochs && !stopper.should_stop(); ++epoch) {
    if (opts.halt_after_epochs && run >= *opts.halt_after_epochs) {
      save(epoch);
      return res;
    }
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : train_detail::make_batches(train_idx, cfg.batch_size, cfg.seed, epoch, 0xba7cULL)) {
      const auto views_v = train_detail::augmented_batch(data, batch, aug, cfg.seed, epoch, 1);
      const auto ptrs = train_detail::pointers(views_v);
      Tape<float> tape;
      Var x = tape.leaf(model.encoder.batch_tensor(ptrs, 0, ptrs.size()));
      auto f = model.encoder.forward(tape, x, Mode::train, true);
      Var hw, hb;
      Var y = model.forward_prediction(tape, f, true, &hw, &hb);
      std::vector<double> pred, target;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        pred.push_back(tape.value(y)[k]);
        target.push_back(data.samples[batch[k]].age);
      }
      const auto l1 = l1_loss(pred, target);
      Tensor<float> seed({batch.size(), 1});
      for (std::size_t k = 0; k < batch.size(); ++k) seed[k] = static_cast<float>(l1.gradient[k]);
      tape.backward(y, seed);
      std::vector<const Tensor<float>*> grads;
      for (auto p : f.params) grads.push_back(&tape.grad(p));
      grads.push_back(&tape.grad(hw));
      grads.push_back(&tape.grad(hb));
      opt.step(params, grads);
      loss_sum += l1.loss * static_cast<double>(batch.size());
      seen += batch.size();
    }
    const double val = train_detail::mae(model.predict_ages(train_detail::pointers(data, val_idx)), val_age);
    res.history.push_back({epoch + 1, 1, loss_sum / static_cast<double>(seen), val, opt.lr});
    if (stopper.update(epoch + 1, val)) best = model;
    ++run;
    train_detail::say(opts, "end-to-end epoch " + std::to_string(epoch + 1) + " train_l1 " +
                                std::to_string(res.history.back().train_loss) + " val_mae " + std::to_string(val));
    if (cfg.checkpoint_every && (epoch + 1) % cfg.checkpoint_every == 0) save(epoch + 1);
  }
  res.stopped_epoch = res.history.empty() ? 0 : res.history.back().epoch;
  res.best_epoch = stopper.best_epoch;
  model = best;
  res.completed = true;
  train_detail::say(opts, "end-to-end stopped at epoch " + std::to_string(res.stopped_epoch) + ", best epoch " +
                              std::to_string(res.best_epoch));
  return res;
}

inline TrainResult train_pipeline(const Dataset& data, const EncoderConfig& enc, const RncConfig& rnc,
                                  const AugmentConfig& aug, const TrainingConfig& cfg, const TrainOptions& opts = {}) {
  return cfg.pipeline == Pipeline::end_to_end ? train_end_to_end(data, enc, aug, cfg, opts)
                                              : train_rnc_two_stage(data, enc, rnc, aug, cfg, opts);
}

inline Checkpoint model_checkpoint(const AgeModel<float>& m, const nlohmann::json& header = nlohmann::json::object()) {
  Checkpoint c;
  c.header = header;
  c.header["has_head"] = m.has_head;
  m.encoder.save_to(c);
  m.head.save_to(c);
  return c;
}

inline AgeModel<float> load_model(const Checkpoint& c) {
  AgeModel<float> m(c.header.at("encoder_config").get<EncoderConfig>());
  m.encoder.load_from(c);
  m.head.load_from(c);
  m.has_head = c.header.value("has_head", false);
  return m;
}

}  // namespace agerank
