#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "patchrec/catalog.hpp"
#include "patchrec/checkpoint.hpp"
#include "patchrec/evaluate.hpp"
#include "patchrec/synthetic.hpp"
#include "patchrec/trainer.hpp"
#include "patchrec/trie.hpp"

#include <json.hpp>

namespace patchrec {

struct EvalRunSpec {
    std::string name;
    std::string checkpoint; // plan name or explicit checkpoint dir
    LayoutConfig layout;
};

struct SweepSpec {
    std::string checkpoint;
    std::vector<LayoutMode> modes;
    std::vector<std::size_t> ks;
    std::vector<std::size_t> ms; // pft_i grid
    std::vector<std::size_t> ls; // pft_s / pure_session grid
};

/// Declarative experiment file: dataset block (files or synthetic), model
/// block, ordered train plans, eval runs and an optional sweep grid.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/out";

    bool use_synthetic = true;
    SyntheticConfig synthetic;
    std::string catalog_path;
    std::string interactions_path;
    FilterConfig filter;

    ModelConfig model; // vocab_size is resolved from the data

    std::vector<TrainPlan> plans;

    std::string eval_split = "test";
    std::size_t beam_width = 20;
    bool length_normalize = true;
    std::size_t eval_max_cases = 0;
    std::vector<std::size_t> cohorts;
    std::vector<EvalRunSpec> eval_runs;
    std::optional<SweepSpec> sweep;

    static LayoutConfig layout_from_json(const nlohmann::json& j, const LayoutConfig& base) {
        LayoutConfig lc = base;
        if (j.contains("mode")) lc.mode = layout_mode_from_name(j["mode"].get<std::string>());
        lc.truncation_k = j.value("K", lc.truncation_k);
        lc.recent_text_m = j.value("M", lc.recent_text_m);
        lc.session_size_l = j.value("L", lc.session_size_l);
        return lc;
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig c;
        c.seed = j.value("seed", c.seed);
        c.out_dir = j.value("out_dir", c.out_dir);

        if (!j.contains("dataset")) throw ConfigError("experiment: missing dataset block");
        const auto& d = j["dataset"];
        if (d.contains("synthetic")) {
            c.use_synthetic = true;
            c.synthetic = synthetic_config_from_json(d["synthetic"]);
        } else {
            c.use_synthetic = false;
            if (!d.contains("catalog") || !d.contains("interactions")) {
                throw ConfigError("experiment: dataset needs synthetic{} or catalog+interactions");
            }
            c.catalog_path = d["catalog"].get<std::string>();
            c.interactions_path = d["interactions"].get<std::string>();
        }
        if (d.contains("filter")) {
            const auto& f = d["filter"];
            c.filter.min_rating = f.value("min_rating", c.filter.min_rating);
            c.filter.min_user_interactions =
                f.value("min_user_interactions", c.filter.min_user_interactions);
            c.filter.min_item_users = f.value("min_item_users", c.filter.min_item_users);
        }

        if (j.contains("model")) {
            const auto& m = j["model"];
            c.model.d = m.value("d", c.model.d);
            c.model.n_layers = m.value("n_layers", c.model.n_layers);
            c.model.n_heads = m.value("n_heads", c.model.n_heads);
            c.model.max_positions = m.value("max_positions", c.model.max_positions);
        }

        if (j.contains("train")) {
            for (const auto& pj : j["train"].at("plans")) {
                TrainPlan p;
                p.name = pj.at("name").get<std::string>();
                p.stage = train_stage_from_name(pj.at("stage").get<std::string>());
                p.epochs = pj.value("epochs", p.epochs);
                p.batch_size = pj.value("batch_size", p.batch_size);
                p.learning_rate = pj.value("lr", p.learning_rate);
                p.warmup_frac = pj.value("warmup_frac", p.warmup_frac);
                p.cosine_decay = pj.value("cosine_decay", p.cosine_decay);
                p.seed = pj.value("seed", c.seed);
                p.max_examples = pj.value("max_examples", p.max_examples);
                p.init_checkpoint = pj.value("init", std::string());
                p.val_every = pj.value("val_every", p.val_every);
                p.layout = layout_from_json(pj, p.layout);
                switch (p.stage) { // the stage decides the layout family
                case TrainStage::FinetunePFT_I: p.layout.mode = LayoutMode::PFT_I; break;
                case TrainStage::FinetunePFT_S: p.layout.mode = LayoutMode::PFT_S; break;
                case TrainStage::PureItem: p.layout.mode = LayoutMode::PureItem; break;
                case TrainStage::PureSession: p.layout.mode = LayoutMode::PureSession; break;
                default: p.layout.mode = LayoutMode::Text; break;
                }
                p.layout.validate();
                c.plans.push_back(std::move(p));
            }
        }

        if (j.contains("eval")) {
            const auto& e = j["eval"];
            c.eval_split = e.value("split", c.eval_split);
            c.beam_width = e.value("beam_width", c.beam_width);
            c.length_normalize = e.value("length_normalize", c.length_normalize);
            c.eval_max_cases = e.value("max_cases", c.eval_max_cases);
            if (e.contains("cohorts")) {
                c.cohorts = e["cohorts"].get<std::vector<std::size_t>>();
            }
            if (e.contains("runs")) {
                for (const auto& rj : e["runs"]) {
                    EvalRunSpec spec;
                    spec.checkpoint = rj.at("checkpoint").get<std::string>();
                    spec.layout = layout_from_json(rj, spec.layout);
                    spec.layout.validate();
                    spec.name = rj.value("name", spec.checkpoint + "_" +
                                                     layout_mode_name(spec.layout.mode));
                    c.eval_runs.push_back(std::move(spec));
                }
            }
            if (e.contains("sweep")) {
                const auto& sj = e["sweep"];
                SweepSpec s;
                s.checkpoint = sj.at("checkpoint").get<std::string>();
                for (const auto& m : sj.at("modes")) {
                    s.modes.push_back(layout_mode_from_name(m.get<std::string>()));
                }
                s.ks = sj.at("K").get<std::vector<std::size_t>>();
                if (sj.contains("M")) s.ms = sj["M"].get<std::vector<std::size_t>>();
                if (sj.contains("L")) s.ls = sj["L"].get<std::vector<std::size_t>>();
                c.sweep = std::move(s);
            }
        }
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("experiment: cannot open config file " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("experiment: bad json in " + path + ": " + e.what());
        }
        return from_json(j);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["seed"] = seed;
        j["out_dir"] = out_dir;
        if (use_synthetic) {
            j["dataset"]["synthetic"] = synthetic_config_json(synthetic);
        } else {
            j["dataset"]["catalog"] = catalog_path;
            j["dataset"]["interactions"] = interactions_path;
        }
        j["dataset"]["filter"] = {{"min_rating", filter.min_rating},
                                  {"min_user_interactions", filter.min_user_interactions},
                                  {"min_item_users", filter.min_item_users}};
        j["model"] = {{"d", model.d},
                      {"n_layers", model.n_layers},
                      {"n_heads", model.n_heads},
                      {"max_positions", model.max_positions}};
        j["train"]["plans"] = nlohmann::json::array();
        for (const TrainPlan& p : plans) {
            j["train"]["plans"].push_back({{"name", p.name},
                                           {"stage", train_stage_name(p.stage)},
                                           {"epochs", p.epochs},
                                           {"batch_size", p.batch_size},
                                           {"lr", p.learning_rate},
                                           {"warmup_frac", p.warmup_frac},
                                           {"cosine_decay", p.cosine_decay},
                                           {"seed", p.seed},
                                           {"max_examples", p.max_examples},
                                           {"init", p.init_checkpoint},
                                           {"val_every", p.val_every},
                                           {"mode", layout_mode_name(p.layout.mode)},
                                           {"K", p.layout.truncation_k},
                                           {"M", p.layout.recent_text_m},
                                           {"L", p.layout.session_size_l}});
        }
        j["eval"] = {{"split", eval_split},
                     {"beam_width", beam_width},
                     {"length_normalize", length_normalize},
                     {"max_cases", eval_max_cases},
                     {"cohorts", cohorts}};
        for (const EvalRunSpec& r : eval_runs) {
            j["eval"]["runs"].push_back({{"name", r.name},
                                         {"checkpoint", r.checkpoint},
                                         {"mode", layout_mode_name(r.layout.mode)},
                                         {"K", r.layout.truncation_k},
                                         {"M", r.layout.recent_text_m},
                                         {"L", r.layout.session_size_l}});
        }
        if (sweep) {
            nlohmann::json sj;
            sj["checkpoint"] = sweep->checkpoint;
            sj["modes"] = nlohmann::json::array();
            for (LayoutMode m : sweep->modes) sj["modes"].push_back(layout_mode_name(m));
            sj["K"] = sweep->ks;
            sj["M"] = sweep->ms;
            sj["L"] = sweep->ls;
            j["eval"]["sweep"] = sj;
        }
        return j;
    }
};

/// Loaded dataset plus every derived structure runs share.
struct ExperimentContext {
    SplitDataset dataset;
    Vocabulary vocab;
    TokenizedCatalog tokenized;
    TitleTrie trie;
};

inline ExperimentContext load_context(const ExperimentConfig& config) {
    ExperimentContext ctx;
    if (config.use_synthetic) {
        SyntheticData data = generate_synthetic(config.synthetic);
        ctx.dataset = split_interactions(std::move(data.catalog), std::move(data.interactions),
                                         config.filter);
    } else {
        ctx.dataset = ingest(config.catalog_path, config.interactions_path, config.filter);
    }
    ctx.vocab = Vocabulary::build(ctx.dataset.catalog());
    ctx.tokenized = TokenizedCatalog(ctx.dataset.catalog(), ctx.vocab);
    ctx.trie = TitleTrie::build(ctx.dataset.catalog(), ctx.vocab);
    return ctx;
}

inline std::string checkpoint_dir(const ExperimentConfig& config, const std::string& plan_name) {
    return config.out_dir + "/checkpoints/" + plan_name;
}

/// Execute the config's plans in order. Plans whose `init` names an earlier
/// plan start from that plan's saved checkpoint; everything else starts from
/// the experiment's shared fresh initialization, so ablations with and
/// without pre-training share their starting point. With `no_pretrain`,
/// pre-training plans are skipped and references to them cleared.
inline std::map<std::string, RunRecord> run_training(const ExperimentConfig& config,
                                                     const ExperimentContext& ctx,
                                                     bool no_pretrain = false,
                                                     const ValidationProbe& probe = nullptr) {
    if (config.plans.empty()) throw ConfigError("train: no plans configured");

    std::vector<TrainPlan> plans;
    std::set<std::string> skipped_names;
    for (const TrainPlan& p : config.plans) {
        if (no_pretrain && p.stage == TrainStage::PretrainPatch) {
            skipped_names.insert(p.name);
            continue;
        }
        plans.push_back(p);
    }
    for (TrainPlan& p : plans) {
        if (skipped_names.count(p.init_checkpoint)) p.init_checkpoint.clear();
    }

    // Wiring must be sound before any training starts.
    std::set<std::string> known;
    for (const TrainPlan& p : plans) {
        if (!p.init_checkpoint.empty() && !known.count(p.init_checkpoint) &&
            !std::filesystem::exists(p.init_checkpoint)) {
            throw ConfigError("train: plan '" + p.name + "' wants init from '" +
                              p.init_checkpoint + "', which is neither an earlier plan nor an "
                              "existing checkpoint directory");
        }
        if (!known.insert(p.name).second) {
            throw ConfigError("train: duplicate plan name '" + p.name + "'");
        }
    }

    ModelConfig mc = config.model;
    mc.vocab_size = ctx.vocab.size();
    ModelState fresh = ModelState::init(mc, mix_seed(config.seed, 0x1A17));

    std::map<std::string, RunRecord> records;
    std::set<std::string> completed;
    for (const TrainPlan& plan : plans) {
        ModelState state = [&]() {
            if (plan.init_checkpoint.empty()) return fresh.clone();
            if (completed.count(plan.init_checkpoint)) {
                return load_checkpoint(checkpoint_dir(config, plan.init_checkpoint));
            }
            return load_checkpoint(plan.init_checkpoint);
        }();
        RunRecord record = run_stage(state, plan, ctx.dataset, ctx.tokenized, probe);
        const std::string ckpt = checkpoint_dir(config, plan.name);
        save_checkpoint(ckpt, state);
        record.checkpoint_path = ckpt;
        std::filesystem::create_directories(config.out_dir + "/records");
        write_run_record(config.out_dir + "/records/" + plan.name + ".jsonl", record);
        records.emplace(plan.name, std::move(record));
        completed.insert(plan.name);
    }
    return records;
}

struct SweepRow {
    std::string mode;
    std::size_t k = 0, m = 0, l = 0;
    std::size_t cases = 0;
    double cr = 1.0;
    double hr10 = 0.0, ndcg10 = 0.0, hr20 = 0.0, ndcg20 = 0.0;
    std::uint64_t compressed_tokens = 0;
    std::uint64_t text_tokens = 0;
};

inline void write_sweep_csv(const std::string& path, std::span<const SweepRow> rows) {
    std::ofstream out(path);
    if (!out) throw DataError("sweep: cannot write " + path);
    out << "mode,K,M,L,cases,cr,hr10,ndcg10,hr20,ndcg20,compressed_tokens,text_tokens\n";
    for (const SweepRow& r : rows) {
        out << r.mode << ',' << r.k << ',' << r.m << ',' << r.l << ',' << r.cases << ',' << r.cr
            << ',' << r.hr10 << ',' << r.ndcg10 << ',' << r.hr20 << ',' << r.ndcg20 << ','
            << r.compressed_tokens << ',' << r.text_tokens << '\n';
    }
}

/// Equal-token pairing: each compressed sweep point against the text point
/// whose token budget is closest (the fixed-compute comparison protocol).
inline void write_token_pairs_csv(const std::string& path, std::span<const SweepRow> rows) {
    std::vector<const SweepRow*> text_rows;
    for (const SweepRow& r : rows) {
        if (r.mode == "text") text_rows.push_back(&r);
    }
    std::ofstream out(path);
    if (!out) throw DataError("pairs: cannot write " + path);
    out << "mode,K,M,L,compressed_tokens,hr20,text_K,text_tokens,text_hr20,hr20_delta\n";
    if (text_rows.empty()) return;
    for (const SweepRow& r : rows) {
        if (r.mode == "text") continue;
        const SweepRow* best = text_rows[0];
        for (const SweepRow* t : text_rows) {
            const auto d1 = t->compressed_tokens > r.compressed_tokens
                                ? t->compressed_tokens - r.compressed_tokens
                                : r.compressed_tokens - t->compressed_tokens;
            const auto d2 = best->compressed_tokens > r.compressed_tokens
                                ? best->compressed_tokens - r.compressed_tokens
                                : r.compressed_tokens - best->compressed_tokens;
            if (d1 < d2) best = t;
        }
        out << r.mode << ',' << r.k << ',' << r.m << ',' << r.l << ',' << r.compressed_tokens
            << ',' << r.hr20 << ',' << best->k << ',' << best->compressed_tokens << ','
            << best->hr20 << ',' << (r.hr20 - best->hr20) << '\n';
    }
}

inline EvalConfig eval_config_for(const ExperimentConfig& config, const LayoutConfig& layout) {
    EvalConfig ec;
    ec.split = config.eval_split;
    ec.layout = layout;
    ec.beam_width = config.beam_width;
    ec.length_normalize = config.length_normalize;
    ec.cohort_min_history = config.cohorts;
    ec.max_cases = config.eval_max_cases;
    return ec;
}

inline std::string resolve_checkpoint(const ExperimentConfig& config, const std::string& ref) {
    const std::string as_plan = checkpoint_dir(config, ref);
    if (std::filesystem::exists(as_plan)) return as_plan;
    if (std::filesystem::exists(ref)) return ref;
    throw ConfigError("eval: checkpoint '" + ref + "' not found (looked at " + as_plan + ")");
}

/// Run the configured eval runs and sweep; writes one report per run plus
/// sweep.csv and token_pairs.csv under out_dir/eval.
inline std::map<std::string, EvalReport> run_evaluation(const ExperimentConfig& config,
                                                        const ExperimentContext& ctx) {
    std::map<std::string, EvalReport> reports;
    const std::string eval_dir = config.out_dir + "/eval";
    for (const EvalRunSpec& spec : config.eval_runs) {
        ModelState state = load_checkpoint(resolve_checkpoint(config, spec.checkpoint));
        EvalReport report =
            evaluate(state, ctx.dataset, ctx.tokenized, ctx.vocab, ctx.trie,
                     eval_config_for(config, spec.layout));
        write_eval_report(eval_dir, report, spec.name);
        reports.emplace(spec.name, std::move(report));
    }
    if (config.sweep) {
        ModelState state = load_checkpoint(resolve_checkpoint(config, config.sweep->checkpoint));
        std::vector<SweepRow> rows;
        auto eval_point = [&](const LayoutConfig& layout) {
            EvalReport r = evaluate(state, ctx.dataset, ctx.tokenized, ctx.vocab, ctx.trie,
                                    eval_config_for(config, layout));
            SweepRow row;
            row.mode = layout_mode_name(layout.mode);
            row.k = layout.truncation_k;
            row.m = layout.recent_text_m;
            row.l = layout.session_size_l;
            row.cases = r.cases;
            row.cr = r.cr_ratio_of_sums;
            row.hr10 = r.hr10;
            row.ndcg10 = r.ndcg10;
            row.hr20 = r.hr20;
            row.ndcg20 = r.ndcg20;
            row.compressed_tokens = r.compressed_position_total;
            row.text_tokens = r.text_token_total;
            rows.push_back(row);
        };
        for (LayoutMode mode : config.sweep->modes) {
            for (std::size_t k : config.sweep->ks) {
                LayoutConfig lc;
                lc.mode = mode;
                lc.truncation_k = k;
                switch (mode) {
                case LayoutMode::Text:
                case LayoutMode::PureItem:
                    lc.recent_text_m = 0;
                    eval_point(lc);
                    break;
                case LayoutMode::PFT_I:
                    for (std::size_t m : config.sweep->ms) {
                        if (m > k) continue;
                        lc.recent_text_m = m;
                        eval_point(lc);
                    }
                    break;
                case LayoutMode::PFT_S:
                case LayoutMode::PureSession:
                    for (std::size_t l : config.sweep->ls) {
                        lc.session_size_l = l;
                        eval_point(lc);
                    }
                    break;
                }
            }
        }
        std::filesystem::create_directories(eval_dir);
        write_sweep_csv(eval_dir + "/sweep.csv", rows);
        write_token_pairs_csv(eval_dir + "/token_pairs.csv", rows);
    }
    return reports;
}

} // namespace patchrec
