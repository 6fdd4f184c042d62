// Copyright 2026-present the beagle authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "beagle/masks.hpp"

namespace beagle {

// Deterministic synthetic training text: short sentences over a small word
// set, bytes limited to 'a'..'z', ' ', '.', '\n'. Generation stops at the
// first line boundary at or past min_bytes; min_bytes must be positive.
std::string make_toy_corpus(size_t min_bytes, uint64_t seed);

// The grid behind `mask-dump`: the early inverse-block mask at step 1,
// extended in place through simulation steps 2..step otherwise. Invalid
// parameters (T or k zero, eps >= k, step outside [1, k]) raise UsageError.
AttentionMask mask_for_dump(size_t T, size_t k, size_t eps, size_t step);

// The whole tool behind main(): parses the argument list (program name
// excluded), dispatches to the subcommand, and maps errors to exit codes --
// 0 success, 1 runtime failure, 2 usage or config error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// argv convenience wrapper over std::cout / std::cerr; skips argv[0].
int run_cli(int argc, const char* const* argv);

}  // namespace beagle
