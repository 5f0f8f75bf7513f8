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

#include "dpmix/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "dpmix/data.hpp"
#include "dpmix/dpsgd.hpp"
#include "dpmix/error.hpp"
#include "dpmix/model.hpp"
#include "dpmix/privacy.hpp"

namespace dpmix {
namespace {

using json = nlohmann::ordered_json;

// The schema doubles as the default document: every known key appears here
// with its default value, and unknown keys in user configs are rejected.
json default_config() {
  json cfg;
  cfg["training"] = {
      {"clip_bound", 1.0},
      {"noise_multiplier", 0.0},
      {"target_epsilon", 0.0},
      {"sampling_rate", 0.1},
      {"steps", 0},
      {"epochs", 0},
      {"learning_rate", 0.5},
      {"regime", "per-example"},
      {"microbatch_size", 2},
      {"microbatch_mixup", false},
      {"microbatch_mixup_append", false},
      {"delta", 1e-5},
      {"master_seed", 0},
      {"execution", "parallel"},
      {"threads", 0},
  };
  cfg["augmentation"] = {
      {"ka", 16},
      {"km", 0},
      {"kd", 0},
      {"flip_probability", 0.5},
      {"crop_padding", 4},
      {"flip_enabled", true},
      {"crop_enabled", true},
      {"mixup_alpha", 0.2},
  };
  cfg["model"] = {
      {"architecture", "logistic-regression"},
      {"hidden", json::array({32})},
      {"conv_channels", 8},
      {"kernel", 3},
      {"pool", 2},
  };
  cfg["accountant"] = {
      {"q", 0.1},
      {"sigma", 1.0},
      {"steps", 1000},
      {"delta", 1e-5},
      {"target_epsilon", 8.0},
      {"orders", json(default_rdp_orders())},
  };
  cfg["data"] = {
      {"train", ""},
      {"test", ""},
      {"pool", ""},
      {"format", "container"},
      {"normalize", false},
  };
  cfg["gradstats"] = {
      {"sample_size", 128},
      {"epochs", ""},
      {"bins", 40},
  };
  cfg["eval"] = {
      {"model", ""},
      {"dataset", ""},
  };
  cfg["toy"] = {
      {"classes", 10},
      {"per_class_train", 200},
      {"per_class_test", 50},
      {"per_class_pool", 0},
      {"image_size", 8},
      {"channels", 1},
      {"separation", 6.0},
      {"pool_shift", 0.0},
      {"seed", 0},
  };
  cfg["out"] = {
      {"dir", ""},
  };
  return cfg;
}

void reject_unknown_keys(const json& user, const json& schema, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError("config: expected an object at '" + (prefix.empty() ? "/" : prefix) + "'");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (schema.at(key).is_object()) {
      reject_unknown_keys(value, schema.at(key), path);
    }
  }
}

void merge_into(json& base, const json& user) {
  for (const auto& [key, value] : user.items()) {
    if (base.at(key).is_object()) {
      merge_into(base.at(key), value);
    } else {
      base.at(key) = value;
    }
  }
}

std::vector<std::string> leaf_paths(const json& node, const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& [key, value] : node.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      const auto inner = leaf_paths(value, path);
      out.insert(out.end(), inner.begin(), inner.end());
    } else {
      out.push_back(path);
    }
  }
  return out;
}

json& at_path(json& cfg, const std::string& dotted) {
  json* node = &cfg;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot - start);
    node = &node->at(key);
    if (dot == std::string::npos) return *node;
    start = dot + 1;
  }
}

double parse_double(const std::string& path, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + path + "' expects a number, got '" + text + "'");
  }
}

std::uint64_t parse_unsigned(const std::string& path, const std::string& text) {
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + path + "' expects an unsigned integer, got '" + text + "'");
  }
}

bool parse_bool(const std::string& path, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: '" + path + "' expects true/false, got '" + text + "'");
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

// Override one leaf by dotted path, coercing from the schema value's type.
void apply_override(json& cfg, const std::string& dotted, const std::string& text) {
  json& slot = at_path(cfg, dotted);
  if (slot.is_number_float()) {
    slot = parse_double(dotted, text);
  } else if (slot.is_number_integer() || slot.is_number_unsigned()) {
    slot = parse_unsigned(dotted, text);
  } else if (slot.is_boolean()) {
    slot = parse_bool(dotted, text);
  } else if (slot.is_string()) {
    slot = text;
  } else if (slot.is_array()) {
    json arr = json::array();
    const bool floats = !slot.empty() && slot.front().is_number_float();
    for (const auto& part : split_commas(text)) {
      if (floats) {
        arr.push_back(parse_double(dotted, part));
      } else {
        arr.push_back(parse_unsigned(dotted, part));
      }
    }
    slot = arr;
  } else {
    throw ConfigError("config: cannot override '" + dotted + "' from a flag");
  }
}

json resolve_config(const std::string& config_path,
                    const std::vector<std::pair<std::string, std::string>>& overrides) {
  json cfg = default_config();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("config: cannot open " + config_path);
    json user;
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config: " + config_path + ": " + e.what());
    }
    reject_unknown_keys(user, cfg, "");
    merge_into(cfg, user);
  }
  for (const auto& [path, value] : overrides) apply_override(cfg, path, value);
  if (cfg["out"]["dir"].get<std::string>().empty()) {
    if (const char* env = std::getenv("DPMIX_OUT_DIR")) cfg["out"]["dir"] = std::string(env);
  }
  return cfg;
}

TrainingConfig training_from(const json& cfg) {
  const json& t = cfg.at("training");
  const json& a = cfg.at("augmentation");
  TrainingConfig out;
  out.clip_bound = t.at("clip_bound").get<double>();
  out.noise_multiplier = t.at("noise_multiplier").get<double>();
  out.sampling_rate = t.at("sampling_rate").get<double>();
  out.steps = t.at("steps").get<std::size_t>();
  out.epochs = t.at("epochs").get<std::size_t>();
  out.learning_rate = t.at("learning_rate").get<double>();
  out.regime = regime_from_name(t.at("regime").get<std::string>());
  out.microbatch_size = t.at("microbatch_size").get<std::size_t>();
  out.microbatch_mixup = t.at("microbatch_mixup").get<bool>();
  out.microbatch_mixup_append = t.at("microbatch_mixup_append").get<bool>();
  out.delta = t.at("delta").get<double>();
  out.master_seed = t.at("master_seed").get<std::uint64_t>();
  const std::string exec = t.at("execution").get<std::string>();
  if (exec == "serial") {
    out.execution = Execution::kSerial;
  } else if (exec == "parallel") {
    out.execution = Execution::kParallel;
  } else {
    throw ConfigError("training.execution must be 'serial' or 'parallel'");
  }
  out.augmentation.ka = a.at("ka").get<std::size_t>();
  out.augmentation.km = a.at("km").get<std::size_t>();
  out.augmentation.kd = a.at("kd").get<std::size_t>();
  out.pipeline.flip_probability = a.at("flip_probability").get<double>();
  out.pipeline.crop_padding = a.at("crop_padding").get<std::size_t>();
  out.pipeline.flip_enabled = a.at("flip_enabled").get<bool>();
  out.pipeline.crop_enabled = a.at("crop_enabled").get<bool>();
  out.mixup.alpha = a.at("mixup_alpha").get<double>();
  return out;
}

ModelConfig model_from(const json& cfg, const Dataset& dataset) {
  const json& m = cfg.at("model");
  ModelConfig out;
  const std::string arch = m.at("architecture").get<std::string>();
  if (arch == "logistic-regression") {
    out.kind = ArchKind::kLogisticRegression;
  } else if (arch == "mlp") {
    out.kind = ArchKind::kMlp;
  } else if (arch == "small-cnn") {
    out.kind = ArchKind::kSmallCnn;
  } else {
    throw ConfigError("model.architecture: unknown architecture '" + arch + "'");
  }
  out.input_shape = dataset.image_shape;
  out.num_classes = dataset.num_classes;
  out.hidden = m.at("hidden").get<std::vector<std::size_t>>();
  out.conv_channels = m.at("conv_channels").get<std::size_t>();
  out.kernel = m.at("kernel").get<std::size_t>();
  out.pool = m.at("pool").get<std::size_t>();
  return out;
}

Dataset load_dataset(const std::string& paths, const std::string& format) {
  if (format == "cifar10") {
    std::vector<std::filesystem::path> files;
    for (const auto& p : split_commas(paths)) files.emplace_back(p);
    return load_cifar10_binary(files);
  }
  if (format == "container") return load_container(paths);
  throw ConfigError("data.format must be 'container' or 'cifar10'");
}

void set_threads(const json& cfg) {
  const auto threads = cfg.at("training").at("threads").get<int>();
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

std::filesystem::path require_out_dir(const json& cfg) {
  const std::string dir = cfg.at("out").at("dir").get<std::string>();
  if (dir.empty()) throw ConfigError("out.dir is required (flag or DPMIX_OUT_DIR)");
  std::filesystem::create_directories(dir);
  return dir;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

void write_effective_config(const json& cfg, const std::filesystem::path& out_dir) {
  write_text(out_dir / "effective_config.json", cfg.dump(2) + "\n");
}

json number_or_null(double v) {
  return std::isfinite(v) ? json(v) : json(nullptr);
}

// Calibrates sigma from training.target_epsilon when requested; returns the
// training config ready to run and mirrors the resolved value back into cfg.
TrainingConfig prepare_training(json& cfg) {
  TrainingConfig config = training_from(cfg);
  const double target = cfg.at("training").at("target_epsilon").get<double>();
  if (target > 0.0) {
    if (config.noise_multiplier > 0.0) {
      throw ConfigError("training: set either noise_multiplier or target_epsilon, not both");
    }
    AccountantParams params;
    params.q = config.sampling_rate;
    params.steps = total_steps(config);
    params.delta = config.delta;
    params.orders = config.rdp_orders;
    const double sigma_eff = calibrate_sigma(target, params);
    // The equations' sigma is relative to C; scale up for 2C-sensitive regimes.
    config.noise_multiplier =
        sigma_eff * regime_sensitivity(config.regime, config.clip_bound) / config.clip_bound;
    cfg["training"]["noise_multiplier"] = config.noise_multiplier;
    cfg["training"]["target_epsilon"] = 0.0;
  }
  return config;
}

struct LoadedData {
  Dataset train;
  std::optional<Dataset> test;
  std::optional<SyntheticPool> pool;
};

LoadedData load_training_data(const json& cfg) {
  const json& d = cfg.at("data");
  const std::string train_path = d.at("train").get<std::string>();
  if (train_path.empty()) throw ConfigError("data.train is required");
  const std::string format = d.at("format").get<std::string>();

  LoadedData out;
  out.train = load_dataset(train_path, format);
  const std::string test_path = d.at("test").get<std::string>();
  if (!test_path.empty()) out.test = load_dataset(test_path, format);

  std::optional<Dataset> pool_data;
  const std::string pool_path = d.at("pool").get<std::string>();
  if (!pool_path.empty()) {
    pool_data = load_container(pool_path);
    if (pool_data->num_classes != out.train.num_classes) {
      throw DataError("data.pool: class count differs from the training set");
    }
  }

  if (d.at("normalize").get<bool>()) {
    // Pool images pass through the same train-derived transform so they live
    // in the model's input space.
    const Normalization stats = compute_normalization(out.train);
    out.train = normalize(out.train, stats);
    if (out.test) out.test = normalize(*out.test, stats);
    if (pool_data) pool_data = normalize(*pool_data, stats);
  }
  if (pool_data) {
    out.pool = pool_from_dataset(*pool_data, pool_data->num_classes,
                                 d.at("pool").get<std::string>());
  }
  return out;
}

json step_to_json(const StepRecord& r) {
  json j;
  j["step"] = r.step;
  j["batch_size"] = r.batch_size;
  j["train_loss"] = r.train_loss;
  j["clip_fraction"] = r.clip_fraction;
  j["eps_so_far"] = number_or_null(r.eps_so_far);
  if (r.test_accuracy) j["test_accuracy"] = *r.test_accuracy;
  return j;
}

int cmd_train(json cfg) {
  set_threads(cfg);
  const LoadedData data = load_training_data(cfg);
  TrainingConfig config = prepare_training(cfg);
  const SyntheticPool* pool = data.pool ? &*data.pool : nullptr;
  validate_training(config, pool);

  const ModelConfig mc = model_from(cfg, data.train);
  Model model = make_model(mc, config.master_seed);

  const auto out_dir = require_out_dir(cfg);
  write_effective_config(cfg, out_dir);

  const TrainResult result =
      train(config, data.train, data.test ? &*data.test : nullptr, pool, std::move(model));

  std::string metrics;
  for (const StepRecord& r : result.metrics) {
    metrics += step_to_json(r).dump();
    metrics += '\n';
  }
  write_text(out_dir / "metrics.jsonl", metrics);

  save_model(result.model, out_dir / "final_model.bin");

  json summary;
  summary["final_test_accuracy"] =
      result.final_test_accuracy ? json(*result.final_test_accuracy) : json(nullptr);
  summary["final_epsilon"] = number_or_null(result.final_epsilon);
  summary["delta"] = config.delta;
  summary["sigma"] = config.noise_multiplier;
  summary["seed"] = config.master_seed;
  summary["regime"] = regime_name(config.regime);
  summary["steps"] = total_steps(config);
  summary["sampling_rate"] = config.sampling_rate;
  summary["clip_bound"] = config.clip_bound;
  summary["ka"] = config.augmentation.ka;
  summary["km"] = config.augmentation.km;
  summary["kd"] = config.augmentation.kd;
  summary["final_train_loss"] =
      result.metrics.empty() ? json(nullptr) : json(result.metrics.back().train_loss);
  summary["best_order"] = result.final_order > 0 ? json(result.final_order) : json(nullptr);
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  return 0;
}

int cmd_calibrate(const json& cfg) {
  const json& a = cfg.at("accountant");
  AccountantParams params;
  params.q = a.at("q").get<double>();
  params.steps = a.at("steps").get<std::size_t>();
  params.delta = a.at("delta").get<double>();
  params.orders = a.at("orders").get<std::vector<double>>();
  const double target = a.at("target_epsilon").get<double>();
  params.sigma = calibrate_sigma(target, params);
  const DpPoint verified = accountant_epsilon(params);
  json out;
  out["sigma"] = params.sigma;
  out["epsilon"] = verified.eps;
  out["order"] = verified.order;
  out["target_epsilon"] = target;
  out["delta"] = params.delta;
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_gradstats(json cfg) {
  set_threads(cfg);
  const LoadedData data = load_training_data(cfg);
  TrainingConfig config = prepare_training(cfg);
  const SyntheticPool* pool = data.pool ? &*data.pool : nullptr;
  validate_training(config, pool);

  const json& g = cfg.at("gradstats");
  const std::size_t sample_size =
      std::min<std::size_t>(g.at("sample_size").get<std::size_t>(), data.train.size());
  const std::size_t bins = g.at("bins").get<std::size_t>();
  const std::size_t epoch_len = steps_per_epoch(config.sampling_rate);
  const std::size_t steps = total_steps(config);
  const std::size_t last_epoch = steps / epoch_len;

  std::vector<std::size_t> record_epochs;
  const std::string epochs_text = g.at("epochs").get<std::string>();
  if (epochs_text.empty()) {
    for (std::size_t e = 1; e <= std::max<std::size_t>(last_epoch, 1); ++e) {
      record_epochs.push_back(e);
    }
  } else {
    for (const auto& part : split_commas(epochs_text)) {
      record_epochs.push_back(parse_unsigned("gradstats.epochs", part));
    }
  }

  const ModelConfig mc = model_from(cfg, data.train);
  Model model = make_model(mc, config.master_seed);

  const auto out_dir = require_out_dir(cfg);
  write_effective_config(cfg, out_dir);

  GradientStats stats;
  auto record = [&](std::size_t epoch, const Model& m) {
    stats.snapshots.push_back(
        gradient_snapshot(m, data.train, config, pool, sample_size, epoch, bins));
  };
  for (std::size_t e : record_epochs) {
    if (e == 0) record(0, model);
  }
  TrainHooks hooks;
  hooks.after_step = [&](std::size_t step, const Model& m) {
    if ((step + 1) % epoch_len != 0) return;
    const std::size_t epoch = (step + 1) / epoch_len;
    for (std::size_t e : record_epochs) {
      if (e == epoch) record(epoch, m);
    }
  };
  train(config, data.train, data.test ? &*data.test : nullptr, pool, std::move(model), hooks);

  std::string csv = "bin_left,bin_right,count,epoch\n";
  for (const GradientSnapshot& snap : stats.snapshots) {
    for (const auto& bin : snap.histogram) {
      csv += json(bin.left).dump() + "," + json(bin.right).dump() + "," +
             std::to_string(bin.count) + "," + std::to_string(snap.epoch) + "\n";
    }
  }
  write_text(out_dir / "histogram.csv", csv);

  json summary = json::array();
  for (const GradientSnapshot& snap : stats.snapshots) {
    summary.push_back({{"epoch", snap.epoch},
                       {"mean", snap.mean},
                       {"std", snap.std_dev},
                       {"mean_abs_std", snap.mean_abs_std}});
  }
  write_text(out_dir / "gradstats.json", summary.dump(2) + "\n");
  return 0;
}

int cmd_eval(const json& cfg) {
  const json& e = cfg.at("eval");
  const std::string model_path = e.at("model").get<std::string>();
  const std::string data_path = e.at("dataset").get<std::string>();
  if (model_path.empty() || data_path.empty()) {
    throw ConfigError("eval.model and eval.dataset are required");
  }
  const Model model = load_model(model_path);
  const Dataset dataset = load_dataset(data_path, cfg.at("data").at("format").get<std::string>());
  if (model.config.input_shape != dataset.image_shape ||
      model.config.num_classes != dataset.num_classes) {
    throw DataError("eval: model and dataset shapes do not match");
  }
  json out;
  out["accuracy"] = evaluate_accuracy(model, dataset);
  out["examples"] = dataset.size();
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_gen_toy_data(const json& cfg) {
  const json& t = cfg.at("toy");
  ToyBundleSpec spec;
  spec.base.classes = t.at("classes").get<std::size_t>();
  spec.base.per_class = t.at("per_class_train").get<std::size_t>();
  spec.base.image_size = t.at("image_size").get<std::size_t>();
  spec.base.channels = t.at("channels").get<std::size_t>();
  spec.base.separation = t.at("separation").get<double>();
  spec.base.seed = t.at("seed").get<std::uint64_t>();
  spec.per_class_test = t.at("per_class_test").get<std::size_t>();
  spec.per_class_pool = t.at("per_class_pool").get<std::size_t>();
  spec.pool_shift = t.at("pool_shift").get<double>();

  const auto out_dir = require_out_dir(cfg);
  write_effective_config(cfg, out_dir);

  const ToyBundle bundle = make_toy_bundle(spec);
  save_container(bundle.train, out_dir / "train.ds", PixelType::kF32);
  save_container(bundle.test, out_dir / "test.ds", PixelType::kF32);
  if (bundle.pool.size() > 0) {
    save_container(bundle.pool, out_dir / "pool.ds", PixelType::kF32);
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Differentially private training engine"};
  app.require_subcommand(1);

  struct CommandState {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
  };
  CommandState state;

  const json schema = default_config();
  const auto paths = leaf_paths(schema, "");

  std::vector<CLI::App*> commands;
  for (const char* name :
       {"train", "calibrate", "gradstats", "eval", "gen-toy-data"}) {
    CLI::App* cmd = app.add_subcommand(name);
    cmd->add_option("--config", state.config_path, "JSON configuration file");
    for (const std::string& path : paths) {
      cmd->add_option_function<std::string>(
          "--" + path,
          [&state, path](const std::string& value) { state.overrides.emplace_back(path, value); },
          "Override config key " + path);
    }
    commands.push_back(cmd);
  }

  std::vector<const char*> argv;
  argv.push_back("dpmix");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const json cfg = resolve_config(state.config_path, state.overrides);
    if (commands[0]->parsed()) return cmd_train(cfg);
    if (commands[1]->parsed()) return cmd_calibrate(cfg);
    if (commands[2]->parsed()) return cmd_gradstats(cfg);
    if (commands[3]->parsed()) return cmd_eval(cfg);
    if (commands[4]->parsed()) return cmd_gen_toy_data(cfg);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CalibrationError& e) {
    std::cerr << "calibration error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace dpmix
