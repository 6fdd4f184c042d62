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

#include "beagle/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "beagle/data.hpp"

namespace beagle {

namespace {

[[noreturn]] void bad(size_t line_no, const std::string& what) {
    throw ConfigError("config line " + std::to_string(line_no) + ": " + what);
}

std::string trim(const std::string& s) {
    const auto* ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

uint64_t to_u64(const std::string& v, size_t line, const std::string& key) {
    uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        bad(line, "key '" + key + "': expected an unsigned integer, got '" + v + "'");
    return out;
}

size_t to_count(const std::string& v, size_t line, const std::string& key) {
    return static_cast<size_t>(to_u64(v, line, key));
}

uint32_t to_u32(const std::string& v, size_t line, const std::string& key) {
    const uint64_t out = to_u64(v, line, key);
    if (out > std::numeric_limits<uint32_t>::max())
        bad(line, "key '" + key + "': value out of range");
    return static_cast<uint32_t>(out);
}

float to_float(const std::string& v, size_t line, const std::string& key) {
    float out = 0.0f;
    size_t pos = 0;
    try {
        out = std::stof(v, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != v.size()) bad(line, "key '" + key + "': expected a number, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& v, size_t line, const std::string& key) {
    if (v == "true") return true;
    if (v == "false") return false;
    bad(line, "key '" + key + "': expected true or false, got '" + v + "'");
}

SDMode to_sd_mode(const std::string& v, size_t line, const std::string& key) {
    if (v == "greedy") return SDMode::kGreedy;
    if (v == "sampling") return SDMode::kSampling;
    bad(line, "key '" + key + "': expected greedy or sampling, got '" + v + "'");
}

std::string render(uint64_t v) { return std::to_string(v); }

std::string render(bool v) { return v ? "true" : "false"; }

std::string render(SDMode v) { return v == SDMode::kGreedy ? "greedy" : "sampling"; }

// shortest decimal form that parses back to exactly the same float
std::string render(float v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

struct Key {
    const char* name;
    const char* doc;
    std::function<void(RunConfig&, const std::string&, size_t)> set;
    std::function<std::string(const RunConfig&)> get;
};

// One row per documented key: the table drives parsing, canonical
// serialization, and the annotated template, so they cannot drift apart.
const std::vector<Key>& key_table() {
    static const std::vector<Key> keys = {
        // model dimensions
        {"d", "hidden width",
         [](RunConfig& c, const std::string& v, size_t l) { c.model.d = to_u32(v, l, "d"); },
         [](const RunConfig& c) { return render(uint64_t{c.model.d}); }},
        {"n_heads", "attention heads (d % n_heads == 0)",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.model.n_heads = to_u32(v, l, "n_heads");
         },
         [](const RunConfig& c) { return render(uint64_t{c.model.n_heads}); }},
        {"n_layers", "target decoder layers",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.model.n_layers = to_u32(v, l, "n_layers");
         },
         [](const RunConfig& c) { return render(uint64_t{c.model.n_layers}); }},
        {"t_max", "context window, in positions",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.model.t_max = to_u32(v, l, "t_max");
         },
         [](const RunConfig& c) { return render(uint64_t{c.model.t_max}); }},
        {"vocab", "vocabulary size (>= 258: bytes plus BOS/EOS)",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.model.vocab = to_u32(v, l, "vocab");
         },
         [](const RunConfig& c) { return render(uint64_t{c.model.vocab}); }},
        // draft training
        {"k", "training window length",
         [](RunConfig& c, const std::string& v, size_t l) { c.train.k = to_count(v, l, "k"); },
         [](const RunConfig& c) { return render(uint64_t{c.train.k}); }},
        {"s", "late-stage simulation steps (1 <= s <= k)",
         [](RunConfig& c, const std::string& v, size_t l) { c.train.s = to_count(v, l, "s"); },
         [](const RunConfig& c) { return render(uint64_t{c.train.s}); }},
        {"epochs_early", "early-stage draft epochs",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.epochs_early = to_count(v, l, "epochs_early");
         },
         [](const RunConfig& c) { return render(uint64_t{c.train.epochs_early}); }},
        {"epochs_late", "late-stage draft epochs",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.epochs_late = to_count(v, l, "epochs_late");
         },
         [](const RunConfig& c) { return render(uint64_t{c.train.epochs_late}); }},
        {"lr", "draft learning rate",
         [](RunConfig& c, const std::string& v, size_t l) { c.train.lr = to_float(v, l, "lr"); },
         [](const RunConfig& c) { return render(c.train.lr); }},
        {"warmup_steps", "linear LR warmup steps (0 = automatic)",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.warmup_steps = to_count(v, l, "warmup_steps");
         },
         [](const RunConfig& c) { return render(uint64_t{c.train.warmup_steps}); }},
        {"beta1", "AdamW beta1",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.beta1 = to_float(v, l, "beta1");
         },
         [](const RunConfig& c) { return render(c.train.beta1); }},
        {"beta2", "AdamW beta2",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.beta2 = to_float(v, l, "beta2");
         },
         [](const RunConfig& c) { return render(c.train.beta2); }},
        {"weight_decay", "AdamW decoupled weight decay",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.weight_decay = to_float(v, l, "weight_decay");
         },
         [](const RunConfig& c) { return render(c.train.weight_decay); }},
        {"grad_clip", "global gradient-norm clip (0 = off)",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.grad_clip = to_float(v, l, "grad_clip");
         },
         [](const RunConfig& c) { return render(c.train.grad_clip); }},
        {"vloss_coeff", "state-regression loss weight",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.vloss_coeff = to_float(v, l, "vloss_coeff");
         },
         [](const RunConfig& c) { return render(c.train.vloss_coeff); }},
        {"noise_std", "gaussian noise std on training keys",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.noise_std = to_float(v, l, "noise_std");
         },
         [](const RunConfig& c) { return render(c.train.noise_std); }},
        {"batch_size", "chunks per optimizer step",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.batch_size = to_count(v, l, "batch_size");
         },
         [](const RunConfig& c) { return render(uint64_t{c.train.batch_size}); }},
        {"context_len", "payload bytes per chunk (BOS adds one position)",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.context_len = to_count(v, l, "context_len");
         },
         [](const RunConfig& c) { return render(uint64_t{c.train.context_len}); }},
        {"sampled_sim_tokens", "sample simulation tokens instead of argmax",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.sampled_sim_tokens = to_bool(v, l, "sampled_sim_tokens");
         },
         [](const RunConfig& c) { return render(c.train.sampled_sim_tokens); }},
        {"val_chunks", "corpus tail chunks held out for validation",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.train.val_chunks = to_count(v, l, "val_chunks");
         },
         [](const RunConfig& c) { return render(uint64_t{c.train.val_chunks}); }},
        // target pretraining
        {"target_epochs", "target pretraining epochs",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.target_epochs = to_count(v, l, "target_epochs");
         },
         [](const RunConfig& c) { return render(uint64_t{c.target_epochs}); }},
        {"target_lr", "target pretraining learning rate",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.target_lr = to_float(v, l, "target_lr");
         },
         [](const RunConfig& c) { return render(c.target_lr); }},
        // speculative decoding
        {"gamma", "draft tokens proposed per iteration",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.gamma = to_count(v, l, "gamma");
         },
         [](const RunConfig& c) { return render(uint64_t{c.gamma}); }},
        {"mode", "decode mode: greedy or sampling",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.mode = to_sd_mode(v, l, "mode");
         },
         [](const RunConfig& c) { return render(c.mode); }},
        {"concat_draft_states", "chain queries attend to drafted states",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.concat_draft_states = to_bool(v, l, "concat_draft_states");
         },
         [](const RunConfig& c) { return render(c.concat_draft_states); }},
        {"max_new", "generation length cap, in tokens",
         [](RunConfig& c, const std::string& v, size_t l) {
             c.max_new = to_count(v, l, "max_new");
         },
         [](const RunConfig& c) { return render(uint64_t{c.max_new}); }},
        // randomness
        {"seed", "master seed; env BEAGLE_SEED overrides",
         [](RunConfig& c, const std::string& v, size_t l) { c.seed = to_u64(v, l, "seed"); },
         [](const RunConfig& c) { return render(c.seed); }},
        // artifact paths
        {"corpus", "training corpus (byte text)",
         [](RunConfig& c, const std::string& v, size_t) { c.corpus = v; },
         [](const RunConfig& c) { return c.corpus; }},
        {"target_ckpt", "target checkpoint path",
         [](RunConfig& c, const std::string& v, size_t) { c.target_ckpt = v; },
         [](const RunConfig& c) { return c.target_ckpt; }},
        {"draft_ckpt", "draft checkpoint path",
         [](RunConfig& c, const std::string& v, size_t) { c.draft_ckpt = v; },
         [](const RunConfig& c) { return c.draft_ckpt; }},
    };
    return keys;
}

const Key* find_key(const std::string& name) {
    for (const Key& k : key_table())
        if (name == k.name) return &k;
    return nullptr;
}

}  // namespace

SDConfig RunConfig::sd_config() const {
    SDConfig sd;
    sd.gamma = gamma;
    sd.mode = mode;
    sd.concat_draft_states = concat_draft_states;
    sd.seed = seed;
    return sd;
}

void RunConfig::validate() const {
    try {
        model.validate();
        train.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (model.vocab < static_cast<uint32_t>(Vocab::kSize))
        throw ConfigError("vocab must be at least " + std::to_string(Vocab::kSize) +
                          " (bytes plus BOS/EOS)");
    if (train.context_len + 1 > model.t_max)
        throw ConfigError("context_len + 1 (BOS) must fit in t_max");
    if (gamma < 1) throw ConfigError("gamma must be >= 1");
    if (max_new < 1) throw ConfigError("max_new must be >= 1");
    if (target_epochs < 1) throw ConfigError("target_epochs must be >= 1");
}

RunConfig parse_run_config(std::istream& is) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::string raw;
    size_t line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        std::string line = raw;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) bad(line_no, "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) bad(line_no, "empty key");
        const Key* k = find_key(key);
        if (!k) bad(line_no, "unknown key '" + key + "'");
        if (!seen.insert(key).second) bad(line_no, "duplicate key '" + key + "'");
        if (value.empty()) bad(line_no, "empty value for key '" + key + "'");
        k->set(cfg, value, line_no);
    }
    cfg.train.seed = cfg.seed;  // one master seed feeds every subsystem
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config: " + path);
    RunConfig cfg = parse_run_config(f);
    if (const char* env = std::getenv("BEAGLE_SEED"); env != nullptr && *env != '\0') {
        const std::string v(env);
        uint64_t seed = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), seed);
        if (ec != std::errc() || ptr != v.data() + v.size())
            throw ConfigError("BEAGLE_SEED must be an unsigned integer, got '" + v + "'");
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    return cfg;
}

void write_run_config(const RunConfig& cfg, std::ostream& os) {
    for (const Key& k : key_table()) os << k.name << " = " << k.get(cfg) << "\n";
}

void write_config_template(std::ostream& os) {
    os << "# beagle run configuration. Every key below is shown with its default;\n"
          "# unknown keys are rejected. '#' starts a comment.\n";
    const RunConfig def;
    for (const Key& k : key_table()) {
        std::string line = std::string(k.name) + " = " + k.get(def);
        if (line.size() < 30) line.resize(30, ' ');
        os << line << " # " << k.doc << "\n";
    }
}

void write_provenance_header(const RunConfig& cfg, std::ostream& os) {
    std::ostringstream ss;
    write_run_config(cfg, ss);
    std::istringstream lines(ss.str());
    std::string line;
    while (std::getline(lines, line)) os << "# " << line << "\n";
}

void embed_run_config(Checkpoint& ckpt, const RunConfig& cfg) {
    std::ostringstream ss;
    write_run_config(cfg, ss);
    const std::string text = ss.str();
    ckpt.tensors.erase(std::remove_if(ckpt.tensors.begin(), ckpt.tensors.end(),
                                      [](const NamedTensor& t) {
                                          return t.name == "meta.run_config";
                                      }),
                       ckpt.tensors.end());
    NamedTensor t = make_tensor("meta.run_config", 1, text.size());
    for (size_t i = 0; i < text.size(); ++i)
        (*t.data)[i] = static_cast<float>(static_cast<unsigned char>(text[i]));
    ckpt.tensors.push_back(std::move(t));
}

std::string extract_run_config_text(const Checkpoint& ckpt) {
    if (!ckpt.has("meta.run_config")) return "";
    const NamedTensor& t = ckpt.tensor("meta.run_config");
    std::string text(t.numel(), '\0');
    for (size_t i = 0; i < text.size(); ++i)
        text[i] = static_cast<char>(static_cast<unsigned char>((*t.data)[i]));
    return text;
}

}  // namespace beagle
