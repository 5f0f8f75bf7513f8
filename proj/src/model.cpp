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

// Flat parameter layouts:
//   logistic-regression / mlp: per affine layer, W row-major [out][in] then
//     bias [out]; layers in input-to-output order. Hidden activations tanh,
//     output layer linear.
//   small-cnn: conv weights [F][C][k][k], conv bias [F], then the output
//     layer W [num_classes][F*ph*pw] and bias. Valid padding, stride 1, tanh
//     after the conv, non-overlapping pool x pool average pooling (floor).

#include "dpmix/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dpmix/rng.hpp"

namespace dpmix {
namespace {

std::vector<std::size_t> affine_dims(const ModelConfig& config) {
  std::vector<std::size_t> dims;
  dims.push_back(input_size(config));
  if (config.kind == ArchKind::kMlp) {
    for (std::size_t h : config.hidden) dims.push_back(h);
  }
  dims.push_back(config.num_classes);
  return dims;
}

struct CnnDims {
  std::size_t channels, height, width;     // input
  std::size_t filters, kernel, pool;
  std::size_t conv_h, conv_w;              // after valid conv
  std::size_t pool_h, pool_w;              // after average pooling
  std::size_t pooled_size;                 // filters * pool_h * pool_w
  std::size_t conv_w_off = 0, conv_b_off, fc_w_off, fc_b_off, total;
};

CnnDims cnn_dims(const ModelConfig& config) {
  CnnDims d{};
  d.channels = config.input_shape.at(0);
  d.height = config.input_shape.at(1);
  d.width = config.input_shape.at(2);
  d.filters = config.conv_channels;
  d.kernel = config.kernel;
  d.pool = config.pool;
  if (d.kernel == 0 || d.kernel > d.height || d.kernel > d.width) {
    throw ConfigError("small-cnn: kernel does not fit the input");
  }
  d.conv_h = d.height - d.kernel + 1;
  d.conv_w = d.width - d.kernel + 1;
  if (d.pool == 0 || d.pool > d.conv_h || d.pool > d.conv_w) {
    throw ConfigError("small-cnn: pool window does not fit the conv output");
  }
  d.pool_h = d.conv_h / d.pool;
  d.pool_w = d.conv_w / d.pool;
  d.pooled_size = d.filters * d.pool_h * d.pool_w;
  d.conv_b_off = d.filters * d.channels * d.kernel * d.kernel;
  d.fc_w_off = d.conv_b_off + d.filters;
  d.fc_b_off = d.fc_w_off + config.num_classes * d.pooled_size;
  d.total = d.fc_b_off + config.num_classes;
  return d;
}

void validate_config(const ModelConfig& config) {
  if (config.input_shape.size() != 3) {
    throw ConfigError("model: input_shape must be {C, H, W}");
  }
  if (config.num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  if (config.kind == ArchKind::kMlp) {
    for (std::size_t h : config.hidden) {
      if (h == 0) throw ConfigError("mlp: hidden sizes must be positive");
    }
  }
  if (config.kind == ArchKind::kSmallCnn) cnn_dims(config);  // validates fit
}

void check_input(const Model& model, const Tensor& x) {
  if (x.shape != model.config.input_shape) {
    throw ShapeError("forward: input shape does not match the model's input shape");
  }
  check_finite(x.data, "forward input");
}

// z = W a + b for one affine layer stored at `w` / `b`.
void affine(std::span<const double> w, std::span<const double> b, std::span<const double> a,
            std::span<double> z) {
  const std::size_t out = z.size();
  const std::size_t in = a.size();
  for (std::size_t i = 0; i < out; ++i) {
    double acc = b[i];
    const double* row = w.data() + i * in;
    for (std::size_t j = 0; j < in; ++j) acc += row[j] * a[j];
    z[i] = acc;
  }
}

// Forward pass through the affine chain, keeping post-tanh activations.
std::vector<std::vector<double>> affine_forward(const Model& model, const Tensor& x) {
  const auto dims = affine_dims(model.config);
  std::vector<std::vector<double>> acts;
  acts.reserve(dims.size());
  acts.emplace_back(x.data);
  const double* p = model.params.data.data();
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    std::vector<double> z(out);
    affine({p + off, out * in}, {p + off + out * in, out}, acts.back(), z);
    off += out * in + out;
    const bool last = (l + 2 == dims.size());
    if (!last) {
      for (double& v : z) v = std::tanh(v);
    }
    acts.push_back(std::move(z));
  }
  return acts;
}

Tensor cnn_forward_cached(const Model& model, const Tensor& x, std::vector<double>* tanh_out,
                          std::vector<double>* pooled_out) {
  const CnnDims d = cnn_dims(model.config);
  const double* p = model.params.data.data();
  const double* in = x.data.data();

  std::vector<double> act(d.filters * d.conv_h * d.conv_w);
  for (std::size_t f = 0; f < d.filters; ++f) {
    const double bias = p[d.conv_b_off + f];
    for (std::size_t y = 0; y < d.conv_h; ++y) {
      for (std::size_t xw = 0; xw < d.conv_w; ++xw) {
        double acc = bias;
        for (std::size_t c = 0; c < d.channels; ++c) {
          const double* plane = in + c * d.height * d.width;
          const double* kern = p + ((f * d.channels + c) * d.kernel) * d.kernel;
          for (std::size_t i = 0; i < d.kernel; ++i) {
            const double* row = plane + (y + i) * d.width + xw;
            const double* krow = kern + i * d.kernel;
            for (std::size_t j = 0; j < d.kernel; ++j) acc += krow[j] * row[j];
          }
        }
        act[(f * d.conv_h + y) * d.conv_w + xw] = std::tanh(acc);
      }
    }
  }

  std::vector<double> pooled(d.pooled_size);
  const double inv_win = 1.0 / static_cast<double>(d.pool * d.pool);
  for (std::size_t f = 0; f < d.filters; ++f) {
    for (std::size_t y = 0; y < d.pool_h; ++y) {
      for (std::size_t xw = 0; xw < d.pool_w; ++xw) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d.pool; ++i) {
          for (std::size_t j = 0; j < d.pool; ++j) {
            acc += act[(f * d.conv_h + y * d.pool + i) * d.conv_w + xw * d.pool + j];
          }
        }
        pooled[(f * d.pool_h + y) * d.pool_w + xw] = acc * inv_win;
      }
    }
  }

  Tensor logits({model.config.num_classes});
  affine({p + d.fc_w_off, model.config.num_classes * d.pooled_size},
         {p + d.fc_b_off, model.config.num_classes}, pooled, logits.data);
  if (tanh_out) *tanh_out = std::move(act);
  if (pooled_out) *pooled_out = std::move(pooled);
  return logits;
}

double logsumexp(std::span<const double> v) {
  double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void le_write(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void le_write64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t le_read32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t le_read64(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

constexpr char kModelMagic[8] = {'D', 'P', 'M', 'I', 'X', 'M', 'D', '1'};

}  // namespace

std::size_t input_size(const ModelConfig& config) {
  return shape_size(config.input_shape);
}

std::size_t param_count(const ModelConfig& config) {
  validate_config(config);
  if (config.kind == ArchKind::kSmallCnn) return cnn_dims(config).total;
  const auto dims = affine_dims(config);
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l + 1] * dims[l] + dims[l + 1];
  return n;
}

Model make_zero_model(const ModelConfig& config) {
  Model model{config, Tensor({param_count(config)})};
  return model;
}

Model make_model(const ModelConfig& config, std::uint64_t master_seed) {
  Model model = make_zero_model(config);
  Rng rng = substream(master_seed, Stream::kInit);
  double* p = model.params.data.data();
  auto fill_layer = [&](std::size_t count, std::size_t fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i) p[i] = (2.0 * rng.uniform() - 1.0) * s;
    p += count;
  };
  if (config.kind == ArchKind::kSmallCnn) {
    const CnnDims d = cnn_dims(config);
    fill_layer(d.conv_b_off + d.filters, d.channels * d.kernel * d.kernel);
    fill_layer(config.num_classes * d.pooled_size + config.num_classes, d.pooled_size);
  } else {
    const auto dims = affine_dims(config);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      fill_layer(dims[l + 1] * dims[l] + dims[l + 1], dims[l]);
    }
  }
  return model;
}

Tensor forward(const Model& model, const Tensor& x) {
  check_input(model, x);
  Tensor logits({model.config.num_classes});
  if (model.config.kind == ArchKind::kSmallCnn) {
    logits = cnn_forward_cached(model, x, nullptr, nullptr);
  } else {
    auto acts = affine_forward(model, x);
    logits.data = std::move(acts.back());
  }
  check_finite(logits.data, "forward output");
  return logits;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double lse = logsumexp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

double loss(const Tensor& logits, std::span<const double> label) {
  if (logits.size() != label.size()) {
    throw ShapeError("loss: logits and label lengths differ");
  }
  check_finite(logits.data, "loss input");
  check_probability_vector(label, "loss");
  double dot = 0.0;
  for (std::size_t i = 0; i < label.size(); ++i) dot += label[i] * logits[i];
  return logsumexp(logits.data) - dot;
}

double entropy(std::span<const double> label) {
  double h = 0.0;
  for (double v : label) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

Tensor per_example_gradient(const Model& model, const LabeledExample& example, double* loss_out) {
  check_input(model, example.features);
  if (example.label.size() != model.config.num_classes) {
    throw ShapeError("gradient: label length does not match num_classes");
  }
  check_probability_vector(example.label, "gradient");

  Tensor grad({model.params.size()});
  double* g = grad.data.data();
  const double* p = model.params.data.data();
  const std::size_t classes = model.config.num_classes;

  if (model.config.kind == ArchKind::kSmallCnn) {
    const CnnDims d = cnn_dims(model.config);
    std::vector<double> act, pooled;
    Tensor logits = cnn_forward_cached(model, example.features, &act, &pooled);
    if (loss_out) *loss_out = loss(logits, example.label);
    std::vector<double> dz = softmax(logits.data);
    for (std::size_t i = 0; i < classes; ++i) dz[i] -= example.label[i];

    // Output layer.
    for (std::size_t i = 0; i < classes; ++i) {
      double* row = g + d.fc_w_off + i * d.pooled_size;
      for (std::size_t j = 0; j < d.pooled_size; ++j) row[j] = dz[i] * pooled[j];
      g[d.fc_b_off + i] = dz[i];
    }
    std::vector<double> dpooled(d.pooled_size, 0.0);
    for (std::size_t i = 0; i < classes; ++i) {
      const double* row = p + d.fc_w_off + i * d.pooled_size;
      for (std::size_t j = 0; j < d.pooled_size; ++j) dpooled[j] += row[j] * dz[i];
    }

    // Pool backward spreads evenly; tanh backward uses the cached activation.
    std::vector<double> dact(act.size(), 0.0);
    const double inv_win = 1.0 / static_cast<double>(d.pool * d.pool);
    for (std::size_t f = 0; f < d.filters; ++f) {
      for (std::size_t y = 0; y < d.pool_h; ++y) {
        for (std::size_t xw = 0; xw < d.pool_w; ++xw) {
          const double dp = dpooled[(f * d.pool_h + y) * d.pool_w + xw] * inv_win;
          for (std::size_t i = 0; i < d.pool; ++i) {
            for (std::size_t j = 0; j < d.pool; ++j) {
              const std::size_t idx =
                  (f * d.conv_h + y * d.pool + i) * d.conv_w + xw * d.pool + j;
              dact[idx] = dp * (1.0 - act[idx] * act[idx]);
            }
          }
        }
      }
    }

    const double* in = example.features.data.data();
    for (std::size_t f = 0; f < d.filters; ++f) {
      double dbias = 0.0;
      for (std::size_t y = 0; y < d.conv_h; ++y) {
        for (std::size_t xw = 0; xw < d.conv_w; ++xw) {
          dbias += dact[(f * d.conv_h + y) * d.conv_w + xw];
        }
      }
      g[d.conv_b_off + f] = dbias;
      for (std::size_t c = 0; c < d.channels; ++c) {
        const double* plane = in + c * d.height * d.width;
        double* kern = g + ((f * d.channels + c) * d.kernel) * d.kernel;
        for (std::size_t i = 0; i < d.kernel; ++i) {
          for (std::size_t j = 0; j < d.kernel; ++j) {
            double acc = 0.0;
            for (std::size_t y = 0; y < d.conv_h; ++y) {
              const double* arow = &dact[(f * d.conv_h + y) * d.conv_w];
              const double* irow = plane + (y + i) * d.width + j;
              for (std::size_t xw = 0; xw < d.conv_w; ++xw) acc += arow[xw] * irow[xw];
            }
            kern[i * d.kernel + j] = acc;
          }
        }
      }
    }
  } else {
    const auto dims = affine_dims(model.config);
    auto acts = affine_forward(model, example.features);
    Tensor logits({classes});
    logits.data = acts.back();
    if (loss_out) *loss_out = loss(logits, example.label);

    std::vector<double> dz = softmax(logits.data);
    for (std::size_t i = 0; i < classes; ++i) dz[i] -= example.label[i];

    // Layer offsets, then walk backwards.
    std::vector<std::size_t> offsets(dims.size() - 1);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      offsets[l] = off;
      off += dims[l + 1] * dims[l] + dims[l + 1];
    }
    for (std::size_t l = dims.size() - 1; l-- > 0;) {
      const std::size_t in = dims[l];
      const std::size_t out = dims[l + 1];
      const auto& a_prev = acts[l];
      double* gw = g + offsets[l];
      double* gb = gw + out * in;
      for (std::size_t i = 0; i < out; ++i) {
        for (std::size_t j = 0; j < in; ++j) gw[i * in + j] = dz[i] * a_prev[j];
        gb[i] = dz[i];
      }
      if (l > 0) {
        const double* w = p + offsets[l];
        std::vector<double> da(in, 0.0);
        for (std::size_t i = 0; i < out; ++i) {
          for (std::size_t j = 0; j < in; ++j) da[j] += w[i * in + j] * dz[i];
        }
        for (std::size_t j = 0; j < in; ++j) da[j] *= 1.0 - a_prev[j] * a_prev[j];
        dz = std::move(da);
      }
    }
  }

  check_finite(grad.data, "per-example gradient");
  return grad;
}

Tensor finite_difference_gradient(const Model& model, const LabeledExample& example, double h) {
  if (!(h > 0.0)) throw DomainError("finite_difference_gradient: h must be positive");
  Model probe = model;
  Tensor grad({model.params.size()});
  for (std::size_t i = 0; i < probe.params.size(); ++i) {
    const double saved = probe.params[i];
    probe.params[i] = saved + h;
    const double up = loss(forward(probe, example.features), example.label);
    probe.params[i] = saved - h;
    const double down = loss(forward(probe, example.features), example.label);
    probe.params[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_model: cannot open " + path.string());
  out.write(kModelMagic, 8);
  le_write(out, 1);  // version
  out.put(static_cast<char>(model.config.kind));
  le_write(out, static_cast<std::uint32_t>(model.config.num_classes));
  for (std::size_t d : model.config.input_shape) le_write(out, static_cast<std::uint32_t>(d));
  le_write(out, static_cast<std::uint32_t>(model.config.hidden.size()));
  for (std::size_t hdim : model.config.hidden) le_write(out, static_cast<std::uint32_t>(hdim));
  le_write(out, static_cast<std::uint32_t>(model.config.conv_channels));
  le_write(out, static_cast<std::uint32_t>(model.config.kernel));
  le_write(out, static_cast<std::uint32_t>(model.config.pool));
  le_write64(out, model.params.size());
  for (double v : model.params.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    le_write64(out, bits);
  }
  if (!out) throw DataError("save_model: write failed for " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_model: cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kModelMagic, 8) != 0) {
    throw DataError("load_model: bad magic in " + path.string());
  }
  if (le_read32(in) != 1) throw DataError("load_model: unsupported version");
  ModelConfig config;
  const int kind_byte = in.get();
  if (kind_byte < 0 || kind_byte > static_cast<int>(ArchKind::kSmallCnn)) {
    throw DataError("load_model: unknown architecture code");
  }
  config.kind = static_cast<ArchKind>(kind_byte);
  config.num_classes = le_read32(in);
  config.input_shape = {le_read32(in), le_read32(in), le_read32(in)};
  const std::uint32_t hidden_count = le_read32(in);
  config.hidden.resize(hidden_count);
  for (auto& hdim : config.hidden) hdim = le_read32(in);
  config.conv_channels = le_read32(in);
  config.kernel = le_read32(in);
  config.pool = le_read32(in);
  const std::uint64_t count = le_read64(in);
  if (!in) throw DataError("load_model: truncated header in " + path.string());
  if (count != param_count(config)) {
    throw DataError("load_model: parameter count does not match the architecture");
  }
  Model model = make_zero_model(config);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t bits = le_read64(in);
    std::memcpy(&model.params.data[i], &bits, 8);
  }
  if (!in) throw DataError("load_model: truncated payload in " + path.string());
  return model;
}

}  // namespace dpmix
