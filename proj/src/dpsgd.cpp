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

#include "dpmix/dpsgd.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <string>

namespace dpmix {
namespace {

// One clipped contribution to the pre-noise sum.
struct UnitResult {
  Tensor clipped;
  bool was_clipped = false;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
};

Tensor clip_move(Tensor&& g, double clip_bound, bool* flag) {
  const double norm = g.l2_norm();
  if (norm <= clip_bound) {
    if (flag) *flag = false;
    return std::move(g);
  }
  const double scale = clip_bound / norm;
  for (double& v : g.data) v *= scale;
  if (flag) *flag = true;
  return std::move(g);
}

// Map over units and reduce. The serial flavor is the reference; the OpenMP
// flavor buffers per-unit results and sums them in index order afterwards, so
// both produce bitwise-identical output for any thread count.
template <typename UnitFn>
BatchGradient reduce_units(std::size_t unit_count, std::size_t params, const UnitFn& unit_fn,
                           Execution exec) {
  BatchGradient out;
  out.prenoise_sum = Tensor({params});
  out.contributions = unit_count;

  auto fold = [&out](const UnitResult& r) {
    for (std::size_t i = 0; i < out.prenoise_sum.size(); ++i) {
      out.prenoise_sum[i] += r.clipped[i];
    }
    if (r.was_clipped) ++out.clipped_count;
    out.mean_loss += r.loss_sum;
    out.used_examples += r.loss_count;  // forward count until finish_stats runs
  };

  bool parallel = exec == Execution::kParallel;
#ifndef _OPENMP
  parallel = false;
#endif
  if (!parallel) {
    for (std::size_t u = 0; u < unit_count; ++u) fold(unit_fn(u));
    return out;
  }

  std::vector<UnitResult> results(unit_count);
  std::exception_ptr error = nullptr;
#pragma omp parallel for schedule(dynamic)
  for (long long u = 0; u < static_cast<long long>(unit_count); ++u) {
    try {
      results[static_cast<std::size_t>(u)] = unit_fn(static_cast<std::size_t>(u));
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  for (const UnitResult& r : results) fold(r);
  return out;
}

// Converts the accumulated loss sum into a mean and records the realized n.
void finish_stats(BatchGradient& acc, std::size_t used_examples) {
  const std::size_t forwards = acc.used_examples;
  acc.mean_loss = forwards > 0 ? acc.mean_loss / static_cast<double>(forwards) : 0.0;
  acc.used_examples = used_examples;
}

Rng example_stream(std::uint64_t master_seed, std::size_t step, std::size_t dataset_index) {
  return substream(master_seed, Stream::kAugment, step, dataset_index);
}

UnitResult augmult_unit(const Model& model, const IndexedExample& item, const SyntheticPool* pool,
                        const AugmentationConfig& config, const TransformPipeline& pipeline,
                        const MixupConfig& mix, double clip_bound, std::uint64_t master_seed,
                        std::size_t step, AugmultPath path) {
  Rng rng = example_stream(master_seed, step, item.index);
  Tensor sum({model.params.size()});
  UnitResult unit;

  if (path == AugmultPath::kDedicatedSelfAug) {
    if (config.ka == 0) throw ConfigError("self-aug path requires ka >= 1");
    // Straight-line Self-Aug: transform, accumulate, average.
    for (std::size_t k = 0; k < config.ka; ++k) {
      LabeledExample aug{apply_pipeline(pipeline, item.example.features, rng),
                         item.example.label};
      double l = 0.0;
      Tensor g = per_example_gradient(model, aug, &l);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
      unit.loss_sum += l;
      ++unit.loss_count;
    }
  } else {
    const auto set = build_augmentation_set(item.example, pool, config, pipeline, mix, rng);
    for (const LabeledExample& aug : set) {
      double l = 0.0;
      Tensor g = per_example_gradient(model, aug, &l);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
      unit.loss_sum += l;
      ++unit.loss_count;
    }
  }

  const double inv_k = 1.0 / static_cast<double>(unit.loss_count);
  for (double& v : sum.data) v *= inv_k;
  unit.clipped = clip_move(std::move(sum), clip_bound, &unit.was_clipped);
  return unit;
}

}  // namespace

const char* regime_name(Regime regime) {
  switch (regime) {
    case Regime::kPerExample: return "per-example";
    case Regime::kMicrobatch: return "microbatch";
    case Regime::kSelfAug: return "self-aug";
    case Regime::kSelfMix: return "self-mix";
    case Regime::kDpMixDiff: return "dp-mix-diff";
  }
  return "unknown";
}

Regime regime_from_name(const std::string& name) {
  if (name == "per-example") return Regime::kPerExample;
  if (name == "microbatch") return Regime::kMicrobatch;
  if (name == "self-aug") return Regime::kSelfAug;
  if (name == "self-mix") return Regime::kSelfMix;
  if (name == "dp-mix-diff") return Regime::kDpMixDiff;
  throw ConfigError("training.regime: unknown regime '" + name + "'");
}

void validate_training(const TrainingConfig& config, const SyntheticPool* pool) {
  if (!(config.clip_bound > 0.0)) throw ConfigError("training.clip_bound must be positive");
  if (!(config.noise_multiplier >= 0.0)) {
    throw ConfigError("training.noise_multiplier must be nonnegative");
  }
  if (!(config.sampling_rate > 0.0 && config.sampling_rate <= 1.0)) {
    throw ConfigError("training.sampling_rate must be in (0, 1]");
  }
  if ((config.steps == 0) == (config.epochs == 0)) {
    throw ConfigError("training: exactly one of steps/epochs must be positive");
  }
  if (!(config.learning_rate > 0.0)) throw ConfigError("training.learning_rate must be positive");

  const auto& aug = config.augmentation;
  switch (config.regime) {
    case Regime::kPerExample:
      break;
    case Regime::kMicrobatch:
      if (config.microbatch_size < 1) {
        throw ConfigError("training.microbatch_size must be at least 1");
      }
      if (config.microbatch_mixup && config.microbatch_size != 2) {
        throw ConfigError("training.microbatch_mixup requires microbatch_size == 2");
      }
      break;
    case Regime::kSelfAug:
      if (aug.ka < 1 || aug.km != 0 || aug.kd != 0) {
        throw ConfigError("training.regime self-aug requires ka >= 1, km == 0, kd == 0");
      }
      break;
    case Regime::kSelfMix:
      if (aug.ka < 1 || aug.km == 0 || aug.kd != 0) {
        throw ConfigError("training.regime self-mix requires ka >= 1, km > 0, kd == 0");
      }
      break;
    case Regime::kDpMixDiff:
      if (aug.kd == 0) {
        throw ConfigError("training.regime dp-mix-diff requires kd > 0");
      }
      validate_augmentation(aug, pool);
      break;
  }
}

std::size_t steps_per_epoch(double sampling_rate) {
  return static_cast<std::size_t>(std::ceil(1.0 / sampling_rate));
}

std::size_t total_steps(const TrainingConfig& config) {
  return config.steps > 0 ? config.steps
                          : config.epochs * steps_per_epoch(config.sampling_rate);
}

double regime_sensitivity(Regime regime, double clip_bound) {
  return regime == Regime::kMicrobatch ? 2.0 * clip_bound : clip_bound;
}

double effective_noise_multiplier(const TrainingConfig& config) {
  const double sens = regime_sensitivity(config.regime, config.clip_bound);
  return config.noise_multiplier * config.clip_bound / sens;
}

Tensor clip(const Tensor& g, double clip_bound) {
  if (!(clip_bound > 0.0)) throw DomainError("clip: bound must be positive");
  Tensor out = g;
  return clip_move(std::move(out), clip_bound, nullptr);
}

std::vector<std::size_t> poisson_sample(std::size_t n, double q, Rng& rng) {
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("poisson_sample: q must be in [0, 1]");
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.uniform() < q) indices.push_back(i);
  }
  return indices;
}

Batch gather_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  Batch batch;
  batch.reserve(indices.size());
  for (std::size_t i : indices) batch.push_back({i, dataset.example(i)});
  return batch;
}

BatchGradient clipped_sum_per_example(const Model& model, const Batch& batch, double clip_bound,
                                      Execution exec) {
  BatchGradient acc = reduce_units(
      batch.size(), model.params.size(),
      [&](std::size_t u) {
        UnitResult unit;
        double l = 0.0;
        Tensor g = per_example_gradient(model, batch[u].example, &l);
        unit.clipped = clip_move(std::move(g), clip_bound, &unit.was_clipped);
        unit.loss_sum = l;
        unit.loss_count = 1;
        return unit;
      },
      exec);
  finish_stats(acc, batch.size());
  return acc;
}

BatchGradient clipped_sum_microbatch(const Model& model, const Batch& batch, std::size_t b,
                                     double clip_bound, bool mixup_within, bool append,
                                     const MixupConfig& mix, std::uint64_t master_seed,
                                     std::size_t step, Execution exec) {
  if (b < 1) throw ConfigError("microbatch: size must be at least 1");
  if (b > batch.size()) throw ConfigError("microbatch: size exceeds the batch");
  if (mixup_within && b != 2) throw ConfigError("microbatch mixup requires size 2");

  const std::size_t groups = batch.size() / b;  // remainder dropped
  BatchGradient acc = reduce_units(
      groups, model.params.size(),
      [&](std::size_t u) {
        UnitResult unit;
        Tensor sum({model.params.size()});
        const std::size_t first = u * b;
        if (mixup_within) {
          // The mixing coefficient rides on the first member's substream so a
          // neighbor swap of the second member keeps lambda fixed.
          Rng rng = example_stream(master_seed, step, batch[first].index);
          const double lambda = sample_lambda(rng, mix);
          const LabeledExample mixed =
              mixup(batch[first].example, batch[first + 1].example, lambda);
          if (append) {
            for (const LabeledExample* ex :
                 {&batch[first].example, &batch[first + 1].example, &mixed}) {
              double l = 0.0;
              Tensor g = per_example_gradient(model, *ex, &l);
              for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
              unit.loss_sum += l;
              ++unit.loss_count;
            }
            for (double& v : sum.data) v /= 3.0;
          } else {
            double l = 0.0;
            sum = per_example_gradient(model, mixed, &l);
            unit.loss_sum = l;
            unit.loss_count = 1;
          }
        } else {
          for (std::size_t j = 0; j < b; ++j) {
            double l = 0.0;
            Tensor g = per_example_gradient(model, batch[first + j].example, &l);
            for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
            unit.loss_sum += l;
            ++unit.loss_count;
          }
          const double inv_b = 1.0 / static_cast<double>(b);
          for (double& v : sum.data) v *= inv_b;
        }
        unit.clipped = clip_move(std::move(sum), clip_bound, &unit.was_clipped);
        return unit;
      },
      exec);
  finish_stats(acc, groups * b);
  return acc;
}

BatchGradient clipped_sum_augmult(const Model& model, const Batch& batch,
                                  const SyntheticPool* pool, const AugmentationConfig& config,
                                  const TransformPipeline& pipeline, const MixupConfig& mix,
                                  double clip_bound, std::uint64_t master_seed, std::size_t step,
                                  AugmultPath path, Execution exec) {
  validate_augmentation(config, pool);
  BatchGradient acc = reduce_units(
      batch.size(), model.params.size(),
      [&](std::size_t u) {
        return augmult_unit(model, batch[u], pool, config, pipeline, mix, clip_bound,
                            master_seed, step, path);
      },
      exec);
  finish_stats(acc, batch.size());
  return acc;
}

BatchGradient clipped_sum(const Model& model, const Batch& batch, const TrainingConfig& config,
                          const SyntheticPool* pool, std::size_t step, AugmultPath path) {
  switch (config.regime) {
    case Regime::kPerExample:
      return clipped_sum_per_example(model, batch, config.clip_bound, config.execution);
    case Regime::kMicrobatch:
      return clipped_sum_microbatch(model, batch, config.microbatch_size, config.clip_bound,
                                    config.microbatch_mixup, config.microbatch_mixup_append,
                                    config.mixup, config.master_seed, step, config.execution);
    case Regime::kSelfAug:
      return clipped_sum_augmult(model, batch, nullptr, config.augmentation, config.pipeline,
                                 config.mixup, config.clip_bound, config.master_seed, step, path,
                                 config.execution);
    case Regime::kSelfMix:
    case Regime::kDpMixDiff:
      return clipped_sum_augmult(model, batch, pool, config.augmentation, config.pipeline,
                                 config.mixup, config.clip_bound, config.master_seed, step,
                                 AugmultPath::kGeneric, config.execution);
  }
  throw ConfigError("clipped_sum: unknown regime");
}

Tensor noisy_from_clipped(const BatchGradient& acc, double clip_bound, double sigma,
                          double scale_numerator, std::uint64_t master_seed, std::size_t step) {
  if (acc.used_examples == 0) throw DomainError("noisy gradient: batch is empty");
  Tensor out = acc.prenoise_sum;
  if (sigma > 0.0) {
    Rng noise = substream(master_seed, Stream::kNoise, step);
    const double stddev = clip_bound * sigma;
    for (double& v : out.data) v += stddev * noise.normal();
  }
  const double scale = scale_numerator / static_cast<double>(acc.used_examples);
  for (double& v : out.data) v *= scale;
  check_finite(out.data, "noisy gradient");
  return out;
}

Tensor noisy_grad_per_example(const Model& model, const Batch& batch, double clip_bound,
                              double sigma, std::uint64_t master_seed, std::size_t step,
                              Execution exec) {
  const BatchGradient acc = clipped_sum_per_example(model, batch, clip_bound, exec);
  return noisy_from_clipped(acc, clip_bound, sigma, 1.0, master_seed, step);
}

Tensor noisy_grad_microbatch(const Model& model, const Batch& batch, std::size_t b,
                             double clip_bound, double sigma, bool mixup_within, bool append,
                             const MixupConfig& mix, std::uint64_t master_seed, std::size_t step,
                             Execution exec) {
  const BatchGradient acc = clipped_sum_microbatch(model, batch, b, clip_bound, mixup_within,
                                                   append, mix, master_seed, step, exec);
  return noisy_from_clipped(acc, clip_bound, sigma, static_cast<double>(b), master_seed, step);
}

Tensor noisy_grad_augmult(const Model& model, const Batch& batch, const SyntheticPool* pool,
                          const AugmentationConfig& config, const TransformPipeline& pipeline,
                          const MixupConfig& mix, double clip_bound, double sigma,
                          std::uint64_t master_seed, std::size_t step, AugmultPath path,
                          Execution exec) {
  const BatchGradient acc = clipped_sum_augmult(model, batch, pool, config, pipeline, mix,
                                                clip_bound, master_seed, step, path, exec);
  return noisy_from_clipped(acc, clip_bound, sigma, 1.0, master_seed, step);
}

double evaluate_accuracy(const Model& model, const Dataset& dataset) {
  if (dataset.size() == 0) throw DataError("evaluate: dataset is empty");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Tensor logits = forward(model, dataset.image(i));
    const std::size_t pred = static_cast<std::size_t>(
        std::max_element(logits.data.begin(), logits.data.end()) - logits.data.begin());
    if (pred == dataset.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

TrainResult train(const TrainingConfig& config, const Dataset& train_data,
                  const Dataset* test_data, const SyntheticPool* pool, Model model,
                  const TrainHooks& hooks) {
  validate_training(config, pool);
  if (model.config.input_shape != train_data.image_shape) {
    throw ConfigError("train: model input shape does not match the dataset");
  }
  if (model.config.num_classes != train_data.num_classes) {
    throw ConfigError("train: model num_classes does not match the dataset");
  }

  const std::size_t steps = total_steps(config);
  const std::size_t epoch_steps = steps_per_epoch(config.sampling_rate);
  const double sigma = config.noise_multiplier;
  const bool accounted = sigma > 0.0;
  const double inf = std::numeric_limits<double>::infinity();

  RdpCurve step_curve;
  if (accounted) {
    step_curve =
        rdp_curve(config.sampling_rate, effective_noise_multiplier(config), config.rdp_orders);
    const DpPoint final_point = rdp_to_dp(compose(step_curve, steps), config.delta);
    if (!std::isfinite(final_point.eps)) {
      throw ConfigError("train: accounted epsilon is not finite; raise noise_multiplier");
    }
  }

  const AugmultPath path = config.regime == Regime::kSelfAug
                               ? hooks.augmult_path
                               : AugmultPath::kGeneric;
  const double scale_numerator =
      config.regime == Regime::kMicrobatch ? static_cast<double>(config.microbatch_size) : 1.0;

  TrainResult result;
  result.metrics.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Rng sampler = substream(config.master_seed, Stream::kSampling, t);
    const auto indices = poisson_sample(train_data.size(), config.sampling_rate, sampler);

    StepRecord record;
    record.step = t;
    record.batch_size = indices.size();
    record.eps_so_far =
        accounted ? rdp_to_dp(compose(step_curve, t + 1), config.delta).eps : inf;

    const std::size_t needed =
        config.regime == Regime::kMicrobatch ? config.microbatch_size : 1;
    if (indices.size() >= needed) {
      const Batch batch = gather_batch(train_data, indices);
      const BatchGradient acc = clipped_sum(model, batch, config, pool, t, path);
      const Tensor grad = noisy_from_clipped(acc, config.clip_bound, sigma, scale_numerator,
                                             config.master_seed, t);
      for (std::size_t i = 0; i < model.params.size(); ++i) {
        model.params[i] -= config.learning_rate * grad[i];
      }
      record.train_loss = acc.mean_loss;
      record.clip_fraction = acc.contributions > 0
                                 ? static_cast<double>(acc.clipped_count) /
                                       static_cast<double>(acc.contributions)
                                 : 0.0;
    }

    if (test_data && ((t + 1) % epoch_steps == 0 || t + 1 == steps)) {
      record.test_accuracy = evaluate_accuracy(model, *test_data);
    }
    result.metrics.push_back(record);
    if (hooks.after_step) hooks.after_step(t, model);
  }

  if (accounted) {
    result.final_curve = compose(step_curve, steps);
    const DpPoint point = rdp_to_dp(result.final_curve, config.delta);
    result.final_epsilon = point.eps;
    result.final_order = point.order;
  } else {
    result.final_epsilon = inf;
  }
  if (!result.metrics.empty() && result.metrics.back().test_accuracy) {
    result.final_test_accuracy = result.metrics.back().test_accuracy;
  }
  result.model = std::move(model);
  return result;
}

GradientSnapshot gradient_snapshot(const Model& model, const Dataset& dataset,
                                   const TrainingConfig& config, const SyntheticPool* pool,
                                   std::size_t sample_size, std::size_t epoch_tag,
                                   std::size_t histogram_bins, double loss_scale) {
  if (sample_size == 0 || sample_size > dataset.size()) {
    throw DomainError("gradient_snapshot: sample_size must be in [1, N]");
  }
  const std::size_t params = model.params.size();

  // Sample without replacement from a dedicated stream so diagnostics never
  // perturb training draws.
  Rng pick = substream(config.master_seed, Stream::kGradStats, epoch_tag,
                       std::numeric_limits<std::uint64_t>::max());
  std::vector<std::size_t> indices(dataset.size());
  std::iota(indices.begin(), indices.end(), 0);
  for (std::size_t i = 0; i < sample_size; ++i) {
    const std::size_t j = i + pick.below(indices.size() - i);
    std::swap(indices[i], indices[j]);
  }
  indices.resize(sample_size);

  auto contribution = [&](std::size_t ds_index) -> Tensor {
    const LabeledExample ex = dataset.example(ds_index);
    if (config.regime == Regime::kPerExample || config.regime == Regime::kMicrobatch) {
      return per_example_gradient(model, ex);
    }
    Rng rng = substream(config.master_seed, Stream::kGradStats, epoch_tag, ds_index);
    const SyntheticPool* use_pool = config.regime == Regime::kDpMixDiff ? pool : nullptr;
    const auto set = build_augmentation_set(ex, use_pool, config.augmentation, config.pipeline,
                                            config.mixup, rng);
    Tensor sum({params});
    for (const LabeledExample& aug : set) {
      const Tensor g = per_example_gradient(model, aug);
      for (std::size_t i = 0; i < params; ++i) sum[i] += g[i];
    }
    for (double& v : sum.data) v /= static_cast<double>(set.size());
    return sum;
  };

  GradientSnapshot snap;
  snap.epoch = epoch_tag;
  snap.magnitudes.assign(params, 0.0);
  snap.mean_abs.assign(params, 0.0);

  std::size_t units = sample_size;
  if (config.regime == Regime::kMicrobatch) {
    units = sample_size / config.microbatch_size;
    if (units == 0) throw DomainError("gradient_snapshot: sample smaller than a microbatch");
  }
  for (std::size_t u = 0; u < units; ++u) {
    Tensor g({params});
    if (config.regime == Regime::kMicrobatch) {
      const std::size_t b = config.microbatch_size;
      for (std::size_t j = 0; j < b; ++j) {
        const Tensor gi = contribution(indices[u * b + j]);
        for (std::size_t i = 0; i < params; ++i) g[i] += gi[i];
      }
      for (double& v : g.data) v /= static_cast<double>(b);
    } else {
      g = contribution(indices[u]);
    }
    for (std::size_t i = 0; i < params; ++i) {
      snap.magnitudes[i] += g[i];
      snap.mean_abs[i] += std::abs(g[i]);
    }
  }
  for (double& v : snap.magnitudes) {
    v = std::abs(v) * loss_scale / static_cast<double>(units);
  }
  for (double& v : snap.mean_abs) v *= loss_scale / static_cast<double>(units);

  auto spread = [params](const std::vector<double>& values, double* mean_out) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(params);
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    if (mean_out) *mean_out = mean;
    return std::sqrt(var / static_cast<double>(params));
  };
  snap.std_dev = spread(snap.magnitudes, &snap.mean);
  snap.mean_abs_std = spread(snap.mean_abs, nullptr);

  const double max_val = *std::max_element(snap.magnitudes.begin(), snap.magnitudes.end());
  if (max_val <= 0.0) {
    snap.histogram.push_back({0.0, 0.0, params});
  } else {
    const std::size_t bins = std::max<std::size_t>(histogram_bins, 1);
    snap.histogram.resize(bins);
    const double width = max_val / static_cast<double>(bins);
    for (std::size_t i = 0; i < bins; ++i) {
      snap.histogram[i] = {width * static_cast<double>(i), width * static_cast<double>(i + 1), 0};
    }
    for (double v : snap.magnitudes) {
      std::size_t bin = static_cast<std::size_t>(v / width);
      if (bin >= bins) bin = bins - 1;  // v == max lands in the last bin
      ++snap.histogram[bin].count;
    }
  }
  return snap;
}

}  // namespace dpmix
