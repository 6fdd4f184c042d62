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

#include "beagle/checkpoint.hpp"
#include "beagle/common.hpp"
#include "beagle/specdec.hpp"
#include "beagle/train.hpp"

namespace beagle {

// One experiment, fully described: model dimensions, training
// hyperparameters, decode settings, seed, and artifact paths. The text form
// is flat `key = value` lines with `#` comments; every key has a default and
// unknown keys are rejected, so a config file is always fully spelled out by
// `init-config` and never silently ignored.
struct RunConfig {
    ModelConfig model;   // d, n_heads, n_layers, t_max, vocab
    TrainConfig train;   // k, s, epochs, optimizer, noise, batching

    // target pretraining (the draft trainer takes its budget from `train`)
    size_t target_epochs = 8;
    float target_lr = 1e-3f;

    // speculative decoding
    size_t gamma = 5;
    SDMode mode = SDMode::kGreedy;
    bool concat_draft_states = true;
    size_t max_new = 64;

    // one master seed; parsing writes it to train.seed as well, and every
    // subsystem derives its own stream from it
    uint64_t seed = 0;

    // artifact paths
    std::string corpus = "corpus.txt";
    std::string target_ckpt = "target.bgl";
    std::string draft_ckpt = "draft.bgl";

    SDConfig sd_config() const;

    // ConfigError on out-of-range or mutually inconsistent values.
    void validate() const;
};

// Parses `key = value` text. '#' starts a comment; blank lines are skipped.
// Unknown keys, duplicates, malformed values, and out-of-range settings all
// raise ConfigError naming the offending line.
RunConfig parse_run_config(std::istream& is);

// Reads and parses `path` (IoError if unreadable), then applies the
// BEAGLE_SEED environment override when the variable is set and non-empty.
RunConfig load_run_config(const std::string& path);

// Canonical serialization: every key once, fixed order, floats rendered
// shortest-round-trip so parse(write(cfg)) reproduces cfg exactly.
void write_run_config(const RunConfig& cfg, std::ostream& os);

// Default config annotated with one comment per key; parses back to the
// defaults. This is what `init-config` emits.
void write_config_template(std::ostream& os);

// The same text with each line prefixed "# ", placed at the top of metric
// logs and eval CSVs so every artifact records how it was produced.
void write_provenance_header(const RunConfig& cfg, std::ostream& os);

// Provenance inside checkpoints: the serialized config rides as a
// "meta.run_config" byte tensor (one float per byte), which model loaders
// ignore like any other auxiliary tensor.
void embed_run_config(Checkpoint& ckpt, const RunConfig& cfg);

// Recovers the embedded text; empty when the checkpoint carries none.
std::string extract_run_config_text(const Checkpoint& ckpt);

}  // namespace beagle
