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

#include "beagle/cli.hpp"

#include <sys/resource.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "beagle/analysis.hpp"
#include "beagle/config.hpp"
#include "beagle/data.hpp"
#include "beagle/models.hpp"
#include "beagle/specdec.hpp"
#include "beagle/train.hpp"

namespace beagle {

namespace {

namespace fsys = std::filesystem;
using Clock = std::chrono::steady_clock;

// Every subsystem draws from its own stream of the one master seed, so runs
// are reproducible end to end and no two consumers share a sequence.
constexpr uint64_t kStreamCorpus = 29;        // make-corpus text
constexpr uint64_t kStreamTargetInit = 101;   // target weight init
constexpr uint64_t kStreamDraftInit = 202;    // draft weight init
constexpr uint64_t kStreamBaseline = 303;     // generate --baseline sampling
constexpr uint64_t kStreamEval = 0x5000;      // + 2*i (spec) / + 2*i+1 (baseline)

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void require_file(const std::string& path, const std::string& what, const std::string& hint) {
    if (fsys::exists(fsys::path(path))) return;
    std::string msg = what + " not found: " + path;
    if (!hint.empty()) msg += " (" + hint + ")";
    throw ConfigError(msg);
}

std::ofstream open_out(const std::string& path, bool append = false) {
    std::ofstream f(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
    if (!f) throw IoError("cannot open for writing: " + path);
    return f;
}

std::string metrics_path_for(const std::string& ckpt_path, const std::string& override_path) {
    return override_path.empty() ? ckpt_path + ".metrics.csv" : override_path;
}

// `key = value` line in the same texture as the eval summaries
void kv_line(std::ostream& os, const std::string& key, double v) {
    std::string k = key;
    if (k.size() < 18) k.resize(18, ' ');
    os << k << " = " << std::fixed << std::setprecision(4) << v << "\n";
}

TargetModel load_target(const RunConfig& cfg) {
    require_file(cfg.target_ckpt, "target checkpoint", "run `beagle train-target` first");
    TargetModel m = TargetModel::from_checkpoint(load_checkpoint(cfg.target_ckpt));
    if (!(m.config() == cfg.model))
        throw ConfigError("model dimensions in the config do not match the target checkpoint " +
                          cfg.target_ckpt);
    return m;
}

DraftHead load_draft(const RunConfig& cfg) {
    require_file(cfg.draft_ckpt, "draft checkpoint", "run `beagle train-draft` first");
    DraftHead d = DraftHead::from_checkpoint(load_checkpoint(cfg.draft_ckpt));
    if (!(d.config() == cfg.model))
        throw ConfigError("model dimensions in the config do not match the draft checkpoint " +
                          cfg.draft_ckpt);
    return d;
}

std::vector<double> softmax_row(const float* logits, size_t n) {
    double mx = logits[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
    std::vector<double> p(n);
    double denom = 0.0;
    for (size_t i = 0; i < n; ++i) {
        p[i] = std::exp(static_cast<double>(logits[i]) - mx);
        denom += p[i];
    }
    for (auto& v : p) v /= denom;
    return p;
}

int32_t draw_token(const std::vector<double>& dist, Rng& rng) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    int32_t last = -1;
    for (size_t i = 0; i < dist.size(); ++i) {
        if (dist[i] <= 0.0) continue;
        last = static_cast<int32_t>(i);
        acc += dist[i];
        if (u < acc) return last;
    }
    if (last < 0) throw Error("sample from a distribution with no mass");
    return last;
}

// Target-only ancestral sampling: the baseline for sampling-mode runs,
// mirroring target_greedy_generate's stopping rules.
std::vector<int32_t> target_sample_generate(const TargetModel& target,
                                            const std::vector<int32_t>& prompt, size_t max_new,
                                            uint64_t seed) {
    if (prompt.empty()) throw ValueError("sample generate: empty prompt");
    Rng rng = make_rng(seed);
    TargetKV cache = target.make_cache();
    ForwardOut out = target.forward_incremental(cache, prompt.data(), prompt.size());
    std::vector<int32_t> gen;
    int32_t next =
        draw_token(softmax_row(out.logits.data() + (out.rows - 1) * out.vocab, out.vocab), rng);
    while (gen.size() < max_new) {
        gen.push_back(next);
        if (next == Vocab::kEos) break;
        if (cache.filled >= target.config().t_max) break;  // window full
        out = target.forward_incremental(cache, &next, 1);
        next = draw_token(softmax_row(out.logits.data(), out.vocab), rng);
    }
    return gen;
}

std::vector<int32_t> baseline_generate(const TargetModel& target, const RunConfig& cfg,
                                       const std::vector<int32_t>& prompt, size_t max_new,
                                       uint64_t stream) {
    if (cfg.mode == SDMode::kGreedy) return target_greedy_generate(target, prompt, max_new);
    return target_sample_generate(target, prompt, max_new, derive_seed(cfg.seed, stream));
}

// --- subcommands ---------------------------------------------------------

void cmd_make_corpus(const std::string& path, size_t bytes, uint64_t seed, std::ostream& out) {
    const std::string text = make_toy_corpus(bytes, seed);
    std::ofstream f = open_out(path);
    f << text;
    if (!f) throw IoError("write failed: " + path);
    out << "wrote " << text.size() << " bytes to " << path << "\n";
}

void cmd_init_config(const std::string& path, std::ostream& out) {
    if (path.empty()) {
        write_config_template(out);
        return;
    }
    std::ofstream f = open_out(path);
    write_config_template(f);
    out << "wrote " << path << "\n";
}

void cmd_train_target(const std::string& config_path, const std::string& metrics_override,
                      std::ostream& out) {
    const RunConfig cfg = load_run_config(config_path);
    require_file(cfg.corpus, "corpus", "run `beagle make-corpus --out " + cfg.corpus + "` first");
    const std::vector<Chunk> corpus = load_corpus(cfg.corpus, cfg.train.context_len);
    TargetModel target(cfg.model, derive_seed(cfg.seed, kStreamTargetInit));

    const std::string mpath = metrics_path_for(cfg.target_ckpt, metrics_override);
    std::ofstream mf = open_out(mpath);
    write_provenance_header(cfg, mf);
    const float vce = train_target(target, corpus, cfg.train, cfg.target_epochs, cfg.target_lr, mf);
    if (!std::isfinite(vce)) throw Error("target training diverged: validation CE is not finite");

    Checkpoint ck = target.to_checkpoint();
    embed_run_config(ck, cfg);
    save_checkpoint(ck, cfg.target_ckpt);
    out << "saved target checkpoint " << cfg.target_ckpt << " (validation ce "
        << std::setprecision(6) << vce << ")\n";
    out << "metrics: " << mpath << "\n";
}

void cmd_train_draft(const std::string& config_path, const std::string& stage, bool from_scratch,
                     const std::string& metrics_override, std::ostream& out) {
    const RunConfig cfg = load_run_config(config_path);
    require_file(cfg.target_ckpt, "target checkpoint", "run `beagle train-target` first");
    require_file(cfg.corpus, "corpus", "run `beagle make-corpus --out " + cfg.corpus + "` first");
    const TargetModel target = load_target(cfg);
    const std::vector<Chunk> corpus = load_corpus(cfg.corpus, cfg.train.context_len);

    TrainConfig tcfg = cfg.train;
    const size_t early = tcfg.epochs_early;
    const size_t late = tcfg.epochs_late;
    if (stage == "early" && early == 0)
        throw ConfigError("stage early requires epochs_early >= 1");
    if (stage == "late" && late == 0) throw ConfigError("stage late requires epochs_late >= 1");
    if (stage == "both" && early + late == 0)
        throw ConfigError("nothing to train: epochs_early and epochs_late are both 0");

    // early and both always start fresh; late resumes the early checkpoint
    // unless --from-scratch substitutes an all-late schedule
    std::optional<DraftTrainer> trainer;
    bool append_metrics = false;
    if (stage == "late") {
        if (from_scratch) {
            tcfg.epochs_early = 0;
        } else if (fsys::exists(fsys::path(cfg.draft_ckpt))) {
            trainer.emplace(DraftTrainer::resume(load_checkpoint(cfg.draft_ckpt), tcfg));
            const size_t done = trainer->next_epoch() - 1;
            if (done < early)
                throw ConfigError("draft checkpoint " + cfg.draft_ckpt + " has finished only " +
                                  std::to_string(done) + " of " + std::to_string(early) +
                                  " early epochs; complete --stage early first");
            append_metrics = true;
        } else {
            throw UsageError("stage late needs an early-stage draft checkpoint at " +
                             cfg.draft_ckpt +
                             " (train one with --stage early, or pass --from-scratch)");
        }
    }
    if (!trainer) {
        DraftHead head(cfg.model, derive_seed(cfg.seed, kStreamDraftInit), target.embedding());
        trainer.emplace(std::move(head), tcfg);
    }

    const std::string mpath = metrics_path_for(cfg.draft_ckpt, metrics_override);
    std::ofstream mf = open_out(mpath, append_metrics);
    mf << "# train-draft stage=" << stage << (from_scratch ? " from_scratch" : "") << "\n";
    write_provenance_header(cfg, mf);

    if (stage == "early") {
        trainer->run(corpus, target, mf, cfg.draft_ckpt, nullptr, early);
    } else if (stage == "late") {
        trainer->run(corpus, target, mf, cfg.draft_ckpt);
    } else {
        if (early > 0) trainer->run(corpus, target, mf, cfg.draft_ckpt, nullptr, early);
        if (late > 0) {
            if (early > 0) mf << "# stage switch: early -> late\n";
            trainer->run(corpus, target, mf, cfg.draft_ckpt);
        }
    }

    Checkpoint ck = trainer->to_checkpoint();
    embed_run_config(ck, cfg);
    save_checkpoint(ck, cfg.draft_ckpt);
    out << "saved draft checkpoint " << cfg.draft_ckpt << " through epoch "
        << trainer->next_epoch() - 1 << "\n";
    out << "metrics: " << mpath << "\n";
}

void cmd_generate(const std::string& config_path, const std::string& prompt, bool baseline,
                  const std::optional<size_t>& max_new_flag, std::ostream& out,
                  std::ostream& err) {
    const RunConfig cfg = load_run_config(config_path);
    const TargetModel target = load_target(cfg);
    const std::vector<int32_t> prompt_ids = Vocab::encode(prompt, /*add_bos=*/true);
    const size_t max_new = max_new_flag.value_or(cfg.max_new);

    if (baseline) {
        const Clock::time_point t0 = Clock::now();
        const std::vector<int32_t> gen =
            baseline_generate(target, cfg, prompt_ids, max_new, kStreamBaseline);
        const double secs = seconds_since(t0);
        out << Vocab::decode(gen) << "\n";
        kv_line(err, "new_tokens", static_cast<double>(gen.size()));
        kv_line(err, "tokens_per_sec", secs > 0.0 ? static_cast<double>(gen.size()) / secs : 0.0);
        return;
    }

    const DraftHead draft = load_draft(cfg);
    const SDResult r = sd_generate(target, draft, cfg.sd_config(), prompt_ids, max_new);
    out << Vocab::decode(r.tokens) << "\n";
    write_eval_summary(r.metrics, err);
}

void cmd_eval(const std::string& config_path, const std::string& prompts_path,
              const std::string& out_csv, const std::string& per_prompt_override,
              std::ostream& out) {
    const RunConfig cfg = load_run_config(config_path);
    const TargetModel target = load_target(cfg);
    const DraftHead draft = load_draft(cfg);

    require_file(prompts_path, "prompts file", "one prompt per line");
    std::ifstream pf(prompts_path, std::ios::binary);
    if (!pf) throw IoError("cannot open prompts file: " + prompts_path);
    std::vector<std::string> prompts;
    for (std::string line; std::getline(pf, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) prompts.push_back(line);
    }
    if (prompts.empty()) throw ConfigError("prompts file has no prompts: " + prompts_path);

    const std::string pp_path =
        per_prompt_override.empty()
            ? fsys::path(out_csv).replace_extension(".prompts.csv").string()
            : per_prompt_override;

    SDMetrics merged;
    merged.gamma = cfg.gamma;
    double spec_secs = 0.0, base_secs = 0.0;
    size_t spec_tokens = 0, base_tokens = 0;

    std::ofstream ppf = open_out(pp_path);
    write_provenance_header(cfg, ppf);
    ppf << "prompt,bytes,new_tokens,spec_tok_s,base_tok_s,speedup,mean_tau\n";
    ppf << std::fixed << std::setprecision(4);

    for (size_t i = 0; i < prompts.size(); ++i) {
        const std::vector<int32_t> ids = Vocab::encode(prompts[i], /*add_bos=*/true);
        SDConfig sd = cfg.sd_config();
        sd.seed = derive_seed(cfg.seed, kStreamEval + 2 * i);

        const Clock::time_point t0 = Clock::now();
        const SDResult r = sd_generate(target, draft, sd, ids, cfg.max_new);
        const double rs = seconds_since(t0);

        const Clock::time_point t1 = Clock::now();
        const std::vector<int32_t> base =
            baseline_generate(target, cfg, ids, cfg.max_new, kStreamEval + 2 * i + 1);
        const double bs = seconds_since(t1);

        merged.iterations.insert(merged.iterations.end(), r.metrics.iterations.begin(),
                                 r.metrics.iterations.end());
        merged.total_tokens += r.metrics.total_tokens;
        merged.total_draft_us += r.metrics.total_draft_us;
        merged.total_verify_us += r.metrics.total_verify_us;
        spec_secs += rs;
        base_secs += bs;
        spec_tokens += r.tokens.size();
        base_tokens += base.size();

        const double spec_rate = rs > 0.0 ? static_cast<double>(r.tokens.size()) / rs : 0.0;
        const double base_rate = bs > 0.0 ? static_cast<double>(base.size()) / bs : 0.0;
        const double tau = r.metrics.iterations.empty() ? 0.0 : r.metrics.mean_tau();
        ppf << (i + 1) << ',' << prompts[i].size() << ',' << r.tokens.size() << ',' << spec_rate
            << ',' << base_rate << ',' << (base_rate > 0.0 ? spec_rate / base_rate : 0.0) << ','
            << tau << '\n';
    }

    std::ofstream cf = open_out(out_csv);
    write_provenance_header(cfg, cf);
    write_eval_csv(merged, cf);

    const double spec_rate = spec_secs > 0.0 ? static_cast<double>(spec_tokens) / spec_secs : 0.0;
    const double base_rate = base_secs > 0.0 ? static_cast<double>(base_tokens) / base_secs : 0.0;
    kv_line(out, "prompts", static_cast<double>(prompts.size()));
    kv_line(out, "spec_tokens_per_sec", spec_rate);
    kv_line(out, "baseline_tokens_per_sec", base_rate);
    kv_line(out, "speedup", base_rate > 0.0 ? spec_rate / base_rate : 0.0);
    if (!merged.iterations.empty()) {
        kv_line(out, "mean_tau", merged.mean_tau());
        kv_line(out, "improvement_factor", improvement_factor(merged));
    }
    struct rusage ru {};
    getrusage(RUSAGE_SELF, &ru);
    kv_line(out, "peak_rss_kb", static_cast<double>(ru.ru_maxrss));
    out << "eval csv: " << out_csv << "\n";
    out << "per-prompt csv: " << pp_path << "\n";
}

void cmd_mask_dump(size_t T, size_t k, size_t eps, size_t step, std::ostream& out) {
    out << mask_for_dump(T, k, eps, step).to_ascii() << "\n";
}

void cmd_analyze(const std::string& in_path, const std::string& csv_path,
                 const std::string& summary_path, std::ostream& out) {
    std::ifstream f(in_path, std::ios::binary);
    if (!f) throw IoError("cannot open eval csv: " + in_path);
    const SDMetrics m = read_eval_csv(f);
    const AnalyzeReport r = analyze_metrics(m);
    write_analysis_summary(r, out);
    if (!csv_path.empty()) {
        std::ofstream cf = open_out(csv_path);
        write_analysis_csv(r, cf);
    }
    if (!summary_path.empty()) {
        std::ofstream sf = open_out(summary_path);
        write_analysis_summary(r, sf);
    }
}

}  // namespace

std::string make_toy_corpus(size_t min_bytes, uint64_t seed) {
    if (min_bytes == 0) throw ValueError("make_toy_corpus: min_bytes must be >= 1");
    static const std::vector<std::string> kSubjects = {"the cat", "the dog",  "a bird",
                                                       "the fox", "a mouse", "the owl"};
    static const std::vector<std::string> kVerbs = {"sees",    "chases", "finds",
                                                    "likes", "follows", "watches"};
    static const std::vector<std::string> kObjects = {"the ball", "the tree", "a star",
                                                      "the moon", "a fish",   "the door"};
    static const std::vector<std::string> kTails = {"today",   "again",   "at noon",
                                                    "quietly", "outside", "at dusk"};
    Rng rng = make_rng(derive_seed(seed, kStreamCorpus));
    std::string text;
    text.reserve(min_bytes + 256);
    size_t on_line = 0;
    while (true) {
        text += kSubjects[rng() % kSubjects.size()];
        text += ' ';
        text += kVerbs[rng() % kVerbs.size()];
        text += ' ';
        text += kObjects[rng() % kObjects.size()];
        if (rng() % 2 == 0) {
            text += ' ';
            text += kTails[rng() % kTails.size()];
        }
        text += '.';
        if (++on_line == 4) {
            text += '\n';
            on_line = 0;
            if (text.size() >= min_bytes) break;
        } else {
            text += ' ';
        }
    }
    return text;
}

AttentionMask mask_for_dump(size_t T, size_t k, size_t eps, size_t step) {
    if (T < 1) throw UsageError("mask-dump: T must be >= 1");
    if (k < 1) throw UsageError("mask-dump: k must be >= 1");
    if (eps >= k) throw UsageError("mask-dump: require eps < k");
    if (step < 1 || step > k) throw UsageError("mask-dump: require 1 <= step <= k");
    const WindowPlan plan = window_plan(T, k, eps);
    AttentionMask mask = inverse_block_mask(plan);
    for (size_t s = 2; s <= step; ++s) simulation_mask_step(mask, plan, s);
    return mask;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"desk-scale speculative decoding workbench"};
    app.require_subcommand(1);

    std::string corpus_out = "corpus.txt";
    size_t corpus_bytes = 1 << 20;
    uint64_t corpus_seed = 0;
    auto* mk = app.add_subcommand("make-corpus", "write the synthetic training corpus");
    mk->add_option("--out", corpus_out, "output path")->capture_default_str();
    mk->add_option("--bytes", corpus_bytes, "minimum size in bytes")->capture_default_str();
    mk->add_option("--seed", corpus_seed, "generator seed")->capture_default_str();

    std::string init_out;
    auto* ic = app.add_subcommand("init-config", "print the annotated default configuration");
    ic->add_option("--out", init_out, "write to this file instead of stdout");

    std::string tt_config, tt_metrics;
    auto* tt = app.add_subcommand("train-target", "pretrain and freeze the target LM");
    tt->add_option("--config", tt_config, "run configuration file")->required();
    tt->add_option("--metrics", tt_metrics, "metrics csv (default <target_ckpt>.metrics.csv)");

    std::string td_config, td_metrics, td_stage = "both";
    bool td_scratch = false;
    auto* td = app.add_subcommand("train-draft", "train the draft head on the frozen target");
    td->add_option("--config", td_config, "run configuration file")->required();
    td->add_option("--stage", td_stage, "early | late | both")
        ->check(CLI::IsMember({"early", "late", "both"}))
        ->capture_default_str();
    td->add_flag("--from-scratch", td_scratch, "allow stage late without an early checkpoint");
    td->add_option("--metrics", td_metrics, "metrics csv (default <draft_ckpt>.metrics.csv)");

    std::string gen_config, gen_prompt;
    bool gen_spec = false, gen_base = false;
    size_t gen_max_new = 0;
    auto* gen = app.add_subcommand("generate", "decode one continuation");
    gen->add_option("--config", gen_config, "run configuration file")->required();
    gen->add_option("--prompt", gen_prompt, "prompt text")->required();
    auto* spec_flag = gen->add_flag("--spec", gen_spec, "speculative decoding (default)");
    auto* base_flag = gen->add_flag("--baseline", gen_base, "target-only decoding");
    spec_flag->excludes(base_flag);
    base_flag->excludes(spec_flag);
    auto* max_new_opt = gen->add_option("--max-new", gen_max_new, "override config max_new");

    std::string ev_config, ev_prompts, ev_out = "eval.csv", ev_per_prompt;
    auto* ev = app.add_subcommand("eval", "speculative decoding over a prompts file");
    ev->add_option("--config", ev_config, "run configuration file")->required();
    ev->add_option("--prompts", ev_prompts, "text file, one prompt per line")->required();
    ev->add_option("--out", ev_out, "per-iteration csv")->capture_default_str();
    ev->add_option("--per-prompt", ev_per_prompt,
                   "per-prompt csv (default: <out> with extension .prompts.csv)");

    size_t md_T = 0, md_k = 0, md_eps = 0, md_step = 1;
    auto* md = app.add_subcommand("mask-dump", "print a training mask as an ascii grid");
    md->add_option("--T", md_T, "sequence length")->required();
    md->add_option("--k", md_k, "window length")->required();
    md->add_option("--eps", md_eps, "window offset (0 <= eps < k)")->capture_default_str();
    md->add_option("--step", md_step, "simulation step; 1 is the early mask")
        ->capture_default_str();

    std::string an_in, an_csv, an_summary;
    auto* an = app.add_subcommand("analyze", "acceptance-length analysis of an eval csv");
    an->add_option("--in", an_in, "eval csv path")->required();
    an->add_option("--csv", an_csv, "also write the machine-readable report here");
    an->add_option("--summary", an_summary, "also write the text summary here");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 2;
    }

    try {
        if (mk->parsed()) {
            cmd_make_corpus(corpus_out, corpus_bytes, corpus_seed, out);
        } else if (ic->parsed()) {
            cmd_init_config(init_out, out);
        } else if (tt->parsed()) {
            cmd_train_target(tt_config, tt_metrics, out);
        } else if (td->parsed()) {
            cmd_train_draft(td_config, td_stage, td_scratch, td_metrics, out);
        } else if (gen->parsed()) {
            std::optional<size_t> max_new;
            if (max_new_opt->count() > 0) max_new = gen_max_new;
            cmd_generate(gen_config, gen_prompt, gen_base, max_new, out, err);
        } else if (ev->parsed()) {
            cmd_eval(ev_config, ev_prompts, ev_out, ev_per_prompt, out);
        } else if (md->parsed()) {
            cmd_mask_dump(md_T, md_k, md_eps, md_step, out);
        } else if (an->parsed()) {
            cmd_analyze(an_in, an_csv, an_summary, out);
        }
        return 0;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_cli(int argc, const char* const* argv) {
    std::vector<std::string> args;
    args.reserve(argc > 0 ? static_cast<size_t>(argc) - 1 : 0);
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace beagle
