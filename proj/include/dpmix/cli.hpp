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

#include <string>
#include <vector>

namespace dpmix {

/// Command dispatch for train / calibrate / gradstats / eval / gen-toy-data.
/// Exit codes: 0 success, 2 config error, 3 calibration failure, 4 data error.
int run_cli(const std::vector<std::string>& args);

int cli_main(int argc, const char* const* argv);

}  // namespace dpmix
