// Copyright 2026 The dpmix Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dpmix/augment.hpp"
#include "dpmix/data.hpp"
#include "dpmix/model.hpp"
#include "dpmix/privacy.hpp"
#include "dpmix/tensor.hpp"

namespace dpmix {

/// Clipping regimes. Per-example and the three augmentation regimes bound an
/// example's influence on the pre-noise sum by C; microbatch clipping bounds
/// it by 2C.
enum class Regime : std::uint8_t {
  kPerExample = 0,
  kMicrobatch = 1,
  kSelfAug = 2,
  kSelfMix = 3,
  kDpMixDiff = 4,
};

const char* regime_name(Regime regime);
Regime regime_from_name(const std::string& name);

/// Batch kernels come in a serial reference flavor and an OpenMP flavor that
/// buffers per-example results and reduces them in index order, so both are
/// bitwise identical for any thread count.
enum class Execution : std::uint8_t { kSerial = 0, kParallel = 1 };

struct TrainingConfig {
  double clip_bound = 1.0;        // C > 0
  double noise_multiplier = 0.0;  // sigma >= 0; 0 disables noise and accounting
  double sampling_rate = 0.1;     // q in (0, 1]
  std::size_t steps = 0;          // exactly one of steps/epochs must be > 0
  std::size_t epochs = 0;         // steps = epochs * ceil(1/q)
  double learning_rate = 0.5;
  Regime regime = Regime::kPerExample;
  std::size_t microbatch_size = 2;
  bool microbatch_mixup = false;
  bool microbatch_mixup_append = false;  // mix into the microbatch instead of replacing it
  AugmentationConfig augmentation;
  TransformPipeline pipeline;
  MixupConfig mixup;
  double delta = 1e-5;
  std::vector<double> rdp_orders = default_rdp_orders();
  std::uint64_t master_seed = 0;
  Execution execution = Execution::kParallel;
};

/// Checks regime/augmentation consistency; throws ConfigError naming the
/// offending field.
void validate_training(const TrainingConfig& config, const SyntheticPool* pool);

std::size_t steps_per_epoch(double sampling_rate);
std::size_t total_steps(const TrainingConfig& config);

/// L2 sensitivity of the regime's pre-noise clipped sum to one example.
double regime_sensitivity(Regime regime, double clip_bound);

/// The equations' sigma is relative to C; the accountant's multiplier is
/// noise-stddev / sensitivity. They coincide except for microbatch clipping,
/// where the 2C sensitivity halves the effective multiplier.
double effective_noise_multiplier(const TrainingConfig& config);

/// g * min(1, C / ||g||_2). Returns g bitwise-unchanged when ||g||_2 <= C.
Tensor clip(const Tensor& g, double clip_bound);

/// Poisson subsampling: each index kept independently with probability q.
std::vector<std::size_t> poisson_sample(std::size_t n, double q, Rng& rng);

/// A batch member together with its dataset index. Augmentation substreams
/// are keyed by (step, dataset index), so adding or removing a neighbor never
/// perturbs another example's draws.
struct IndexedExample {
  std::size_t index;
  LabeledExample example;
};
using Batch = std::vector<IndexedExample>;

Batch gather_batch(const Dataset& dataset, std::span<const std::size_t> indices);

/// Pre-noise clipped sum plus the bookkeeping train() reports.
struct BatchGradient {
  Tensor prenoise_sum;            // sum of clipped contributions
  std::size_t used_examples = 0;  // realized n after any microbatch remainder drop
  std::size_t contributions = 0;  // clipped terms in the sum
  std::size_t clipped_count = 0;  // contributions whose norm exceeded C
  double mean_loss = 0.0;         // mean loss over gradient-bearing forwards
};

BatchGradient clipped_sum_per_example(const Model& model, const Batch& batch, double clip_bound,
                                      Execution exec);

/// In-order size-b microbatches; the remainder is dropped. With mixup_within
/// (b == 2 only) each microbatch contributes the clipped gradient of the
/// mixed example, or of all three when `append` is set.
BatchGradient clipped_sum_microbatch(const Model& model, const Batch& batch, std::size_t b,
                                     double clip_bound, bool mixup_within, bool append,
                                     const MixupConfig& mix, std::uint64_t master_seed,
                                     std::size_t step, Execution exec);

/// Selects between the dedicated Self-Aug path and the general
/// augmentation-set path; both agree bitwise when km = kd = 0.
enum class AugmultPath : std::uint8_t { kDedicatedSelfAug = 0, kGeneric = 1 };

/// Gradients of all K augmentations of an example are averaged, then clipped
/// once, so each example's influence stays bounded by C.
BatchGradient clipped_sum_augmult(const Model& model, const Batch& batch,
                                  const SyntheticPool* pool, const AugmentationConfig& config,
                                  const TransformPipeline& pipeline, const MixupConfig& mix,
                                  double clip_bound, std::uint64_t master_seed, std::size_t step,
                                  AugmultPath path, Execution exec);

/// Dispatches on config.regime.
BatchGradient clipped_sum(const Model& model, const Batch& batch, const TrainingConfig& config,
                          const SyntheticPool* pool, std::size_t step,
                          AugmultPath path = AugmultPath::kDedicatedSelfAug);

/// (scale_numerator / n) * [prenoise_sum + N(0, C^2 sigma^2 I)], one Gaussian
/// draw per step from the noise substream. sigma == 0 adds nothing.
Tensor noisy_from_clipped(const BatchGradient& acc, double clip_bound, double sigma,
                          double scale_numerator, std::uint64_t master_seed, std::size_t step);

Tensor noisy_grad_per_example(const Model& model, const Batch& batch, double clip_bound,
                              double sigma, std::uint64_t master_seed, std::size_t step,
                              Execution exec = Execution::kParallel);

Tensor noisy_grad_microbatch(const Model& model, const Batch& batch, std::size_t b,
                             double clip_bound, double sigma, bool mixup_within, bool append,
                             const MixupConfig& mix, std::uint64_t master_seed, std::size_t step,
                             Execution exec = Execution::kParallel);

Tensor noisy_grad_augmult(const Model& model, const Batch& batch, const SyntheticPool* pool,
                          const AugmentationConfig& config, const TransformPipeline& pipeline,
                          const MixupConfig& mix, double clip_bound, double sigma,
                          std::uint64_t master_seed, std::size_t step,
                          AugmultPath path = AugmultPath::kGeneric,
                          Execution exec = Execution::kParallel);

struct StepRecord {
  std::size_t step = 0;
  std::size_t batch_size = 0;
  double train_loss = 0.0;
  double clip_fraction = 0.0;
  double eps_so_far = 0.0;  // +inf when sigma == 0
  std::optional<double> test_accuracy;
};

struct TrainResult {
  Model model;
  std::vector<StepRecord> metrics;
  RdpCurve final_curve;
  double final_epsilon = 0.0;  // +inf when sigma == 0
  double final_order = 0.0;
  std::optional<double> final_test_accuracy;
};

struct TrainHooks {
  std::function<void(std::size_t step, const Model& model)> after_step;
  /// Force the generic augmentation-set path for self-aug configs (used by
  /// the special-case equivalence checks).
  AugmultPath augmult_path = AugmultPath::kDedicatedSelfAug;
};

/// Algorithm: T steps of theta <- theta - eta * g_hat with the regime's noisy
/// gradient over a Poisson-sampled batch. Deterministic given master_seed.
TrainResult train(const TrainingConfig& config, const Dataset& train_data,
                  const Dataset* test_data, const SyntheticPool* pool, Model model,
                  const TrainHooks& hooks = {});

double evaluate_accuracy(const Model& model, const Dataset& dataset);

/// Pre-clip, pre-noise gradient diagnostics with the regime's augmentation
/// averaging applied. Two per-parameter views of the sampled gradients:
/// `magnitudes` is |mean over samples| (zero exactly at a stationary point of
/// the subsample), `mean_abs` is the mean of |g| over samples (the
/// concentration statistic). Histogram and std summaries cover both.
struct GradientSnapshot {
  std::size_t epoch = 0;
  std::vector<double> magnitudes;  // |sample mean|, one entry per parameter
  std::vector<double> mean_abs;    // sample mean of |g|, one entry per parameter
  double mean = 0.0;
  double std_dev = 0.0;          // across parameters, of magnitudes
  double mean_abs_std = 0.0;     // across parameters, of mean_abs
  struct Bin {
    double left;
    double right;
    std::size_t count;
  };
  std::vector<Bin> histogram;  // over magnitudes
};

struct GradientStats {
  std::vector<GradientSnapshot> snapshots;
};

GradientSnapshot gradient_snapshot(const Model& model, const Dataset& dataset,
                                   const TrainingConfig& config, const SyntheticPool* pool,
                                   std::size_t sample_size, std::size_t epoch_tag,
                                   std::size_t histogram_bins = 40, double loss_scale = 1.0);

}  // namespace dpmix
