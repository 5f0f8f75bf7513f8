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

#include "dpmix/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dpmix {
namespace {

constexpr char kContainerMagic[8] = {'D', 'P', 'M', 'I', 'X', 'D', 'S', '1'};
constexpr std::uint32_t kContainerVersion = 1;
constexpr std::size_t kCifarRecordBytes = 3073;  // label byte + 3 * 1024 pixels

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open " + path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw DataError("cannot read " + path.string());
  return bytes;
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

float read_f32(const unsigned char* p) {
  const std::uint32_t bits = read_u32(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void append_f32(std::vector<unsigned char>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  append_u32(out, bits);
}

}  // namespace

std::vector<double> one_hot(std::size_t label, std::size_t num_classes) {
  if (label >= num_classes) throw DomainError("one_hot: label out of range");
  std::vector<double> v(num_classes, 0.0);
  v[label] = 1.0;
  return v;
}

Tensor Dataset::image(std::size_t i) const {
  const std::size_t pixels = pixels_per_image();
  Tensor t(image_shape);
  std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(i * pixels), pixels, t.data.begin());
  return t;
}

LabeledExample Dataset::example(std::size_t i) const {
  return {image(i), one_hot(labels[i], num_classes)};
}

Dataset load_cifar10_binary(const std::vector<std::filesystem::path>& paths) {
  Dataset ds;
  ds.image_shape = {3, 32, 32};
  ds.num_classes = 10;
  for (const auto& path : paths) {
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
      throw DataError("cifar10: " + path.string() + " is not a multiple of 3073 bytes");
    }
    const std::size_t records = bytes.size() / kCifarRecordBytes;
    for (std::size_t r = 0; r < records; ++r) {
      const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
      if (rec[0] > 9) {
        throw DataError("cifar10: corrupt record label in " + path.string());
      }
      ds.labels.push_back(rec[0]);
      for (std::size_t i = 1; i < kCifarRecordBytes; ++i) {
        ds.images.push_back(static_cast<double>(rec[i]) / 255.0);
      }
    }
  }
  return ds;
}

Dataset load_container(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  constexpr std::size_t kHeaderBytes = 8 + 4 + 4 * 4 + 1 + 4;
  if (bytes.size() < kHeaderBytes) throw DataError("container: truncated header");
  if (std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
    throw DataError("container: magic mismatch in " + path.string());
  }
  const unsigned char* p = bytes.data() + 8;
  const std::uint32_t version = read_u32(p);
  if (version != kContainerVersion) throw DataError("container: unsupported version");
  const std::uint32_t n = read_u32(p + 4);
  const std::uint32_t channels = read_u32(p + 8);
  const std::uint32_t height = read_u32(p + 12);
  const std::uint32_t width = read_u32(p + 16);
  const std::uint8_t dtype = p[20];
  const std::uint32_t num_classes = read_u32(p + 21);
  if (dtype > 1) throw DataError("container: unknown dtype code");
  if (num_classes == 0) throw DataError("container: num_classes must be positive");

  const std::size_t pixel_count =
      static_cast<std::size_t>(n) * channels * height * width;
  const std::size_t pixel_bytes = (dtype == 0 ? 1 : 4) * pixel_count;
  const std::size_t expected = kHeaderBytes + 4ull * n + pixel_bytes;
  if (bytes.size() != expected) {
    throw DataError("container: size mismatch in " + path.string());
  }

  Dataset ds;
  ds.image_shape = {channels, height, width};
  ds.num_classes = num_classes;
  ds.labels.resize(n);
  const unsigned char* labels = bytes.data() + kHeaderBytes;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = read_u32(labels + 4 * i);
    if (ds.labels[i] >= num_classes) {
      throw DataError("container: label out of range in " + path.string());
    }
  }
  const unsigned char* pixels = labels + 4ull * n;
  ds.images.resize(pixel_count);
  if (dtype == 0) {
    for (std::size_t i = 0; i < pixel_count; ++i) {
      ds.images[i] = static_cast<double>(pixels[i]) / 255.0;
    }
  } else {
    for (std::size_t i = 0; i < pixel_count; ++i) {
      ds.images[i] = static_cast<double>(read_f32(pixels + 4 * i));
    }
  }
  return ds;
}

void save_container(const Dataset& dataset, const std::filesystem::path& path, PixelType dtype) {
  if (dataset.image_shape.size() != 3) throw DataError("container: image shape must be C x H x W");
  std::vector<unsigned char> bytes;
  bytes.reserve(64 + dataset.images.size() * (dtype == PixelType::kU8 ? 1 : 4));
  bytes.insert(bytes.end(), kContainerMagic, kContainerMagic + 8);
  append_u32(bytes, kContainerVersion);
  append_u32(bytes, static_cast<std::uint32_t>(dataset.size()));
  for (std::size_t d : dataset.image_shape) append_u32(bytes, static_cast<std::uint32_t>(d));
  bytes.push_back(static_cast<unsigned char>(dtype));
  append_u32(bytes, static_cast<std::uint32_t>(dataset.num_classes));
  for (std::uint32_t label : dataset.labels) append_u32(bytes, label);
  if (dtype == PixelType::kU8) {
    for (double v : dataset.images) {
      const double scaled = v * 255.0;
      const double rounded = std::round(scaled);
      if (!(rounded >= 0.0 && rounded <= 255.0) || std::abs(scaled - rounded) > 1e-6) {
        throw DataError("container: pixel values are not u8-representable");
      }
      bytes.push_back(static_cast<unsigned char>(rounded));
    }
  } else {
    for (double v : dataset.images) append_f32(bytes, static_cast<float>(v));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("container: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("container: write failed for " + path.string());
}

SyntheticPool pool_from_dataset(const Dataset& dataset, std::size_t expected_num_classes,
                                std::string provenance) {
  if (dataset.num_classes != expected_num_classes) {
    throw DataError("pool: dataset declares " + std::to_string(dataset.num_classes) +
                    " classes, expected " + std::to_string(expected_num_classes));
  }
  SyntheticPool pool;
  pool.num_classes = dataset.num_classes;
  pool.provenance = std::move(provenance);
  pool.samples.reserve(dataset.size());
  std::vector<bool> seen(dataset.num_classes, false);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    pool.samples.push_back(dataset.example(i));
    seen[dataset.labels[i]] = true;
  }
  for (std::size_t c = 0; c < dataset.num_classes; ++c) {
    if (!seen[c]) pool.missing_classes.push_back(c);
  }
  return pool;
}

SyntheticPool load_synthetic_pool(const std::filesystem::path& path,
                                  std::size_t expected_num_classes) {
  return pool_from_dataset(load_container(path), expected_num_classes, path.filename().string());
}

Normalization compute_normalization(const Dataset& dataset) {
  const std::size_t channels = dataset.image_shape.at(0);
  const std::size_t plane = dataset.pixels_per_image() / channels;
  Normalization stats;
  stats.mean.assign(channels, 0.0);
  stats.std_dev.assign(channels, 0.0);
  if (dataset.size() == 0) {
    stats.std_dev.assign(channels, 1.0);
    return stats;
  }
  const double count = static_cast<double>(dataset.size() * plane);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const double* img = dataset.images.data() + i * dataset.pixels_per_image();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t j = 0; j < plane; ++j) stats.mean[c] += img[c * plane + j];
    }
  }
  for (double& m : stats.mean) m /= count;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const double* img = dataset.images.data() + i * dataset.pixels_per_image();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t j = 0; j < plane; ++j) {
        const double d = img[c * plane + j] - stats.mean[c];
        stats.std_dev[c] += d * d;
      }
    }
  }
  for (double& s : stats.std_dev) {
    s = std::sqrt(s / count);
    if (s < 1e-12) s = 1.0;  // constant channel
  }
  return stats;
}

Dataset normalize(const Dataset& dataset, const Normalization& stats) {
  const std::size_t channels = dataset.image_shape.at(0);
  const std::size_t plane = dataset.pixels_per_image() / channels;
  Dataset out = dataset;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    double* img = out.images.data() + i * dataset.pixels_per_image();
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t j = 0; j < plane; ++j) {
        img[c * plane + j] = (img[c * plane + j] - stats.mean[c]) / stats.std_dev[c];
      }
    }
  }
  out.normalization = stats;
  out.normalization.applied = true;
  return out;
}

namespace {

// Random per-class direction of norm `separation`, shared across the
// bundle's parts. Templates are low-frequency (bilinear upsampling of a
// coarse noise grid) and mirror-symmetric, so horizontal flips preserve them
// exactly and small crops only perturb them; the flip/crop pipeline is then
// approximately label-preserving, as it is on natural images.
std::vector<std::vector<double>> toy_templates(const ToySpec& spec) {
  Rng rng = substream(spec.seed, Stream::kToyData, 0);
  const std::size_t side = spec.image_size;
  const std::size_t pixels = spec.channels * side * side;
  const std::size_t coarse = std::max<std::size_t>(2, side / 2 + 1);
  std::vector<std::vector<double>> templates(spec.classes);
  for (auto& t : templates) {
    t.resize(pixels);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      std::vector<double> grid(coarse * coarse);
      for (double& v : grid) v = rng.normal();
      double* plane = t.data() + c * side * side;
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          const double fy =
              side > 1 ? static_cast<double>(y) * (coarse - 1) / (side - 1) : 0.0;
          const double fx =
              side > 1 ? static_cast<double>(x) * (coarse - 1) / (side - 1) : 0.0;
          const std::size_t y0 = static_cast<std::size_t>(fy);
          const std::size_t x0 = static_cast<std::size_t>(fx);
          const std::size_t y1 = std::min(y0 + 1, coarse - 1);
          const std::size_t x1 = std::min(x0 + 1, coarse - 1);
          const double dy = fy - static_cast<double>(y0);
          const double dx = fx - static_cast<double>(x0);
          plane[y * side + x] = (1 - dy) * ((1 - dx) * grid[y0 * coarse + x0] +
                                            dx * grid[y0 * coarse + x1]) +
                                dy * ((1 - dx) * grid[y1 * coarse + x0] +
                                      dx * grid[y1 * coarse + x1]);
        }
      }
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side / 2; ++x) {
          const double mirrored =
              0.5 * (plane[y * side + x] + plane[y * side + (side - 1 - x)]);
          plane[y * side + x] = mirrored;
          plane[y * side + (side - 1 - x)] = mirrored;
        }
      }
    }
    double norm_sq = 0.0;
    for (double v : t) norm_sq += v * v;
    const double inv = 1.0 / std::max(std::sqrt(norm_sq), 1e-12);
    for (double& v : t) v *= inv * spec.separation;
  }
  return templates;
}

// Pixel intensity = 0.5 + kToyScale * (template + unit noise), clamped to [0, 1].
constexpr double kToyScale = 0.08;

Dataset toy_part(const ToySpec& spec, const std::vector<std::vector<double>>& templates,
                 std::size_t per_class, std::uint64_t part) {
  Dataset ds;
  ds.image_shape = {spec.channels, spec.image_size, spec.image_size};
  ds.num_classes = spec.classes;
  const std::size_t pixels = spec.channels * spec.image_size * spec.image_size;
  ds.images.reserve(spec.classes * per_class * pixels);
  Rng rng = substream(spec.seed, Stream::kToyData, part);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      ds.labels.push_back(static_cast<std::uint32_t>(c));
      for (std::size_t j = 0; j < pixels; ++j) {
        const double raw = 0.5 + kToyScale * (templates[c][j] + rng.normal());
        ds.images.push_back(std::clamp(raw, 0.0, 1.0));
      }
    }
  }
  return ds;
}

void validate_toy(const ToySpec& spec) {
  if (spec.classes < 2) throw ConfigError("toy: need at least 2 classes");
  if (spec.per_class == 0) throw ConfigError("toy: per-class count must be positive");
  if (spec.image_size == 0 || spec.channels == 0) throw ConfigError("toy: empty image shape");
  if (!(spec.separation > 0.0)) throw ConfigError("toy: separation must be positive");
}

}  // namespace

Dataset make_toy_dataset(const ToySpec& spec) {
  validate_toy(spec);
  return toy_part(spec, toy_templates(spec), spec.per_class, 1);
}

ToyBundle make_toy_bundle(const ToyBundleSpec& spec) {
  validate_toy(spec.base);
  const auto templates = toy_templates(spec.base);
  ToyBundle bundle;
  bundle.train = toy_part(spec.base, templates, spec.base.per_class, 1);
  bundle.test = toy_part(spec.base, templates, spec.per_class_test, 2);
  if (spec.per_class_pool > 0) {
    auto shifted = templates;
    if (spec.pool_shift > 0.0) {
      Rng rng = substream(spec.base.seed, Stream::kToyData, 4);
      for (auto& t : shifted) {
        std::vector<double> dir(t.size());
        double norm_sq = 0.0;
        for (double& v : dir) {
          v = rng.normal();
          norm_sq += v * v;
        }
        const double scale = spec.pool_shift / std::max(std::sqrt(norm_sq), 1e-12);
        for (std::size_t j = 0; j < t.size(); ++j) t[j] += dir[j] * scale;
      }
    }
    bundle.pool = toy_part(spec.base, shifted, spec.per_class_pool, 3);
  }
  return bundle;
}

}  // namespace dpmix
