#pragma once

#include "agerank/cli.hpp"

namespace testing_support {

/// 16^3 phantom with the default geometry scaled down.
inline agerank::PhantomConfig tiny_phantom() {
  auto p = agerank::cli::rescaled_phantom(agerank::PhantomConfig{}, 16);
  p.distractor_count = 4;
  return p;
}

inline agerank::EncoderConfig tiny_encoder() {
  agerank::EncoderConfig e;
  e.input_dims = {16, 16, 16};
  e.widths = {4, 8};
  e.strides = {1, 2};
  e.embedding_dim = 8;
  e.target_layer = "stage2";
  return e;
}

inline agerank::TrainingConfig tiny_training() {
  agerank::TrainingConfig t;
  t.batch_size = 8;
  t.stage1_epochs = 4;
  t.stage2_epochs = 5;
  t.baseline_max_epochs = 5;
  t.patience = 3;
  t.checkpoint_every = 0;
  return t;
}

/// Full experiment config at tiny scale, suitable for CLI runs in tests.
inline agerank::ExperimentConfig tiny_experiment() {
  agerank::ExperimentConfig c;
  c.phantom = tiny_phantom();
  c.encoder = tiny_encoder();
  c.training = tiny_training();
  c.data.n = 20;
  c.gradram.layer = "stage2";
  c.eval.cohort_size = 4;
  return c;
}

}  // namespace testing_support
