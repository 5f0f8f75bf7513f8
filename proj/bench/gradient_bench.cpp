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

// Times the serial reference against the OpenMP batch kernel on the clipped
// gradient sums that dominate a training step, and checks they agree bitwise.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dpmix/data.hpp"
#include "dpmix/dpsgd.hpp"
#include "dpmix/model.hpp"

using namespace dpmix;
using clock_type = std::chrono::steady_clock;

namespace {

double run_ms(int reps, const Model& model, const Batch& batch, const AugmentationConfig& aug,
              const TransformPipeline& pipeline, const MixupConfig& mix, Execution exec,
              Tensor* out) {
  const auto start = clock_type::now();
  for (int r = 0; r < reps; ++r) {
    BatchGradient acc =
        clipped_sum_augmult(model, batch, nullptr, aug, pipeline, mix, 1.0, 7, 0,
                            AugmultPath::kGeneric, exec);
    if (r == 0) *out = std::move(acc.prenoise_sum);
  }
  const auto stop = clock_type::now();
  return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t batch_size = argc > 1 ? std::stoul(argv[1]) : 128;
  const int reps = argc > 2 ? std::stoi(argv[2]) : 5;

  ToySpec spec;
  spec.classes = 10;
  spec.per_class = (batch_size + 9) / 10;
  spec.image_size = 8;
  spec.separation = 6.0;
  spec.seed = 11;
  const Dataset data = make_toy_dataset(spec);

  ModelConfig mc;
  mc.kind = ArchKind::kMlp;
  mc.input_shape = data.image_shape;
  mc.num_classes = data.num_classes;
  mc.hidden = {64};
  const Model model = make_model(mc, 3);

  std::vector<std::size_t> indices(std::min(batch_size, data.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  const Batch batch = gather_batch(data, indices);

  AugmentationConfig aug;
  aug.ka = 8;
  aug.km = 8;
  TransformPipeline pipeline;
  pipeline.crop_padding = 2;
  MixupConfig mix;

#ifdef _OPENMP
  const int threads = omp_get_max_threads();
#else
  const int threads = 1;
#endif
  std::printf("batch %zu, %zu params, K=%zu, %d thread(s)\n", batch.size(), model.params.size(),
              aug.k_total(), threads);

  Tensor serial_sum, parallel_sum;
  const double serial_ms =
      run_ms(reps, model, batch, aug, pipeline, mix, Execution::kSerial, &serial_sum);
  const double parallel_ms =
      run_ms(reps, model, batch, aug, pipeline, mix, Execution::kParallel, &parallel_sum);

  const bool identical = serial_sum.data == parallel_sum.data;
  std::printf("serial   %10.2f ms/step\n", serial_ms);
  std::printf("openmp   %10.2f ms/step   speedup %.2fx\n", parallel_ms, serial_ms / parallel_ms);
  std::printf("bitwise identical: %s\n", identical ? "yes" : "NO");
  return identical ? 0 : 1;
}
