#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "patchrec/augment.hpp"
#include "patchrec/catalog.hpp"
#include "patchrec/error.hpp"
#include "patchrec/layout.hpp"
#include "patchrec/model.hpp"
#include "patchrec/optimizer.hpp"
#include "patchrec/rng.hpp"

#include <json.hpp>

namespace patchrec {

enum class TrainStage {
    PretrainPatch,
    FinetunePFT_I,
    FinetunePFT_S,
    BaselineText,
    PureItem,
    PureSession,
    DropoutAblation,
};

inline std::string train_stage_name(TrainStage s) {
    switch (s) {
    case TrainStage::PretrainPatch: return "pretrain_patch";
    case TrainStage::FinetunePFT_I: return "pft_i";
    case TrainStage::FinetunePFT_S: return "pft_s";
    case TrainStage::BaselineText: return "baseline_text";
    case TrainStage::PureItem: return "pure_item";
    case TrainStage::PureSession: return "pure_session";
    case TrainStage::DropoutAblation: return "dropout_ablation";
    }
    return "?";
}

inline TrainStage train_stage_from_name(const std::string& name) {
    if (name == "pretrain_patch") return TrainStage::PretrainPatch;
    if (name == "pft_i") return TrainStage::FinetunePFT_I;
    if (name == "pft_s") return TrainStage::FinetunePFT_S;
    if (name == "baseline_text") return TrainStage::BaselineText;
    if (name == "pure_item") return TrainStage::PureItem;
    if (name == "pure_session") return TrainStage::PureSession;
    if (name == "dropout_ablation") return TrainStage::DropoutAblation;
    throw ConfigError("unknown training stage '" + name + "'");
}

struct TrainPlan {
    std::string name = "run";
    TrainStage stage = TrainStage::BaselineText;
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double warmup_frac = 0.05;
    bool cosine_decay = true;
    std::uint64_t seed = 1;
    LayoutConfig layout;
    std::size_t max_examples = 0; // 0 = use every train example
    std::string init_checkpoint;  // plan name or path; resolved by the driver
    std::size_t val_every = 0;    // optimizer steps between validation probes, 0 = off
};

struct StepRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double p = 0.0; // compression schedule value; 0 outside pre-training
    std::size_t tokens = 0;
    double wall_ms = 0.0;
};

struct RunRecord {
    std::string plan_name;
    std::string stage;
    std::string checkpoint_path; // where the final parameters were saved
    std::vector<StepRecord> steps;
    std::size_t skipped_examples = 0; // empty histories and emptied dropout copies
    std::vector<std::pair<std::size_t, double>> validation_probes; // (step, metric)

    double final_loss() const { return steps.empty() ? 0.0 : steps.back().loss; }
};

/// Line-delimited step log; wall_ms is informational and excluded from
/// determinism guarantees.
inline void write_run_record(const std::string& path, const RunRecord& record) {
    std::ofstream out(path);
    if (!out) throw DataError("run record: cannot write " + path);
    for (const StepRecord& s : record.steps) {
        nlohmann::json j{{"step", s.step}, {"loss", s.loss}, {"p", s.p}, {"tokens", s.tokens},
                         {"wall_ms", s.wall_ms}};
        out << j.dump() << '\n';
    }
}

struct TrainExample {
    std::int64_t user_id = 0;
    std::int64_t target_item = 0;
    std::int64_t anchor_ts = 0;
    std::uint64_t example_id = 0; // stable: index in chronological train order
};

/// One training example per train-split interaction that has at least one
/// prior interaction. `skipped` counts the empty-history ones.
inline std::vector<TrainExample> build_train_examples(const SplitDataset& ds, std::size_t k,
                                                      std::size_t* skipped = nullptr) {
    std::vector<TrainExample> out;
    std::size_t skip = 0;
    for (std::size_t i = 0; i < ds.train().size(); ++i) {
        const Interaction& ia = ds.train()[i];
        if (ds.try_truncate_history(ia.user_id, ia.timestamp, k).empty()) {
            ++skip;
            continue;
        }
        out.push_back({ia.user_id, ia.item_id, ia.timestamp, static_cast<std::uint64_t>(i)});
    }
    if (skipped) *skipped = skip;
    return out;
}

/// Callback probe run every plan.val_every steps; receives the live model and
/// the step index, returns a scalar metric to log.
using ValidationProbe = std::function<double(const ModelState&, std::size_t step)>;

/// Run one training stage over the dataset, mutating `state` in place.
///
/// Pre-training pairs every text layout with a compressed copy whose items
/// are patched with probability p = tau / T (tau = optimizer step, T = total
/// steps of the run); the batch loss is the mean over both copies. Finetune
/// and baseline stages build their mode's layout directly.
inline RunRecord run_stage(ModelState& state, const TrainPlan& plan, const SplitDataset& ds,
                           const TokenizedCatalog& tc, const ValidationProbe& probe = nullptr) {
    plan.layout.validate();
    if (plan.epochs < 1) throw ConfigError("train plan: epochs must be >= 1");
    if (plan.batch_size < 1) throw ConfigError("train plan: batch_size must be >= 1");

    RunRecord record;
    record.plan_name = plan.name;
    record.stage = train_stage_name(plan.stage);

    std::vector<TrainExample> examples =
        build_train_examples(ds, plan.layout.truncation_k, &record.skipped_examples);
    if (plan.max_examples > 0 && examples.size() > plan.max_examples) {
        // Uniform deterministic subsample, then restored to chronological order.
        Rng rng(mix_seed(plan.seed, 0xCA9));
        rng.shuffle(examples);
        examples.resize(plan.max_examples);
        std::sort(examples.begin(), examples.end(),
                  [](const TrainExample& a, const TrainExample& b) {
                      return a.example_id < b.example_id;
                  });
    }
    if (examples.size() < plan.batch_size) {
        throw DataError("run_stage: dataset too small for one batch (" +
                        std::to_string(examples.size()) + " examples, batch " +
                        std::to_string(plan.batch_size) + ")");
    }

    const std::size_t steps_per_epoch = (examples.size() + plan.batch_size - 1) / plan.batch_size;
    const std::size_t total_steps = steps_per_epoch * plan.epochs;

    OptimizerConfig ocfg;
    ocfg.learning_rate = plan.learning_rate;
    ocfg.warmup_frac = plan.warmup_frac;
    ocfg.cosine_decay = plan.cosine_decay;
    ocfg.total_steps = total_steps;
    AdamOptimizer opt(state.named_parameters(), ocfg);

    const LayoutConfig& lc = plan.layout;
    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
        std::vector<TrainExample> order = examples;
        Rng shuffle_rng(mix_seed(plan.seed, 0xE90C4, epoch));
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += plan.batch_size) {
            const auto t0 = std::chrono::steady_clock::now();
            const std::size_t end = std::min(start + plan.batch_size, order.size());

            std::vector<PromptLayout> text_layouts;
            std::vector<std::uint64_t> example_ids;
            for (std::size_t i = start; i < end; ++i) {
                const TrainExample& ex = order[i];
                const auto history =
                    ds.truncate_history(ex.user_id, ex.anchor_ts, lc.truncation_k);
                text_layouts.push_back(layout_text(history, ex.target_item, tc));
                example_ids.push_back(ex.example_id);
            }

            CompressionSchedule schedule{total_steps, global_step};
            double p_logged = 0.0;
            std::vector<PromptLayout> batch;
            switch (plan.stage) {
            case TrainStage::BaselineText:
                batch = std::move(text_layouts);
                break;
            case TrainStage::PretrainPatch: {
                p_logged = schedule.p();
                AugmentedBatch aug =
                    augment_pretraining(text_layouts, schedule, example_ids, plan.seed, tc);
                batch = std::move(aug.layouts);
                break;
            }
            case TrainStage::DropoutAblation: {
                p_logged = schedule.p();
                AugmentedBatch aug =
                    augment_dropout(text_layouts, schedule, example_ids, plan.seed, tc);
                record.skipped_examples += aug.skipped;
                batch = std::move(aug.layouts);
                break;
            }
            case TrainStage::FinetunePFT_I:
            case TrainStage::FinetunePFT_S:
            case TrainStage::PureItem:
            case TrainStage::PureSession: {
                LayoutConfig mode_cfg = lc;
                mode_cfg.mode = plan.stage == TrainStage::FinetunePFT_I ? LayoutMode::PFT_I
                                : plan.stage == TrainStage::FinetunePFT_S ? LayoutMode::PFT_S
                                : plan.stage == TrainStage::PureItem     ? LayoutMode::PureItem
                                                                         : LayoutMode::PureSession;
                for (const PromptLayout& text : text_layouts) {
                    const auto history = text.flatten_source_items();
                    batch.push_back(build_layout(mode_cfg, history, text.target_item_id, tc));
                }
                break;
            }
            }

            std::size_t token_count = 0;
            double loss_value = 0.0;
            {
                ComputationTape tape;
                ComputationTape::Scope scope(tape);
                Tensor total;
                for (const PromptLayout& l : batch) {
                    token_count += l.model_input_length();
                    Tensor li = loss(state, l, tc);
                    total = total.defined() ? add(total, li) : li;
                }
                Tensor mean = scale(total, 1.0 / static_cast<double>(batch.size()));
                loss_value = mean.value();
                tape.backward(mean);
            }
            opt.step();

            const auto t1 = std::chrono::steady_clock::now();
            record.steps.push_back(
                {global_step, loss_value, p_logged, token_count,
                 std::chrono::duration<double, std::milli>(t1 - t0).count()});
            ++global_step;

            if (probe && plan.val_every > 0 && global_step % plan.val_every == 0) {
                record.validation_probes.emplace_back(global_step, probe(state, global_step));
            }
        }
    }
    return record;
}

} // namespace patchrec
