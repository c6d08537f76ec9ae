#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "patchrec/beam.hpp"
#include "patchrec/catalog.hpp"
#include "patchrec/layout.hpp"
#include "patchrec/metrics.hpp"
#include "patchrec/model.hpp"
#include "patchrec/trie.hpp"

#include <json.hpp>

namespace patchrec {

struct EvalConfig {
    std::string split = "test"; // "test" or "validation"
    LayoutConfig layout;
    std::size_t beam_width = 20;
    bool length_normalize = true;
    std::vector<std::size_t> cohort_min_history; // per-cohort full-history floors
    std::size_t max_cases = 0;                   // 0 = every case in the split
};

struct EvalCaseRow {
    std::size_t case_index = 0;
    std::int64_t user_id = 0;
    std::int64_t target_item = 0;
    std::size_t rank = 0; // 1-based; 0 = not in the ranked list
    std::size_t text_tokens = 0;
    std::size_t compressed_positions = 0;
    double cr = 1.0;
    std::size_t full_history = 0;
};

struct CohortReport {
    std::size_t min_history = 0;
    std::size_t cases = 0;
    double hr10 = 0.0, ndcg10 = 0.0, hr20 = 0.0, ndcg20 = 0.0;
};

struct EvalReport {
    std::size_t cases = 0;
    std::size_t skipped = 0; // empty-history test interactions
    double hr10 = 0.0, ndcg10 = 0.0, hr20 = 0.0, ndcg20 = 0.0;
    double cr_ratio_of_sums = 1.0;  // headline aggregate
    double cr_mean_of_ratios = 1.0; // per-sequence aggregate, also reported
    std::uint64_t text_token_total = 0;
    std::uint64_t compressed_position_total = 0;
    std::vector<CohortReport> cohorts;
    std::vector<EvalCaseRow> per_case;
    nlohmann::json config_echo;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["cases"] = cases;
        j["skipped"] = skipped;
        j["hr10"] = hr10;
        j["ndcg10"] = ndcg10;
        j["hr20"] = hr20;
        j["ndcg20"] = ndcg20;
        j["cr_ratio_of_sums"] = cr_ratio_of_sums;
        j["cr_mean_of_ratios"] = cr_mean_of_ratios;
        j["text_token_total"] = text_token_total;
        j["compressed_position_total"] = compressed_position_total;
        j["cohorts"] = nlohmann::json::array();
        for (const CohortReport& c : cohorts) {
            j["cohorts"].push_back({{"min_history", c.min_history},
                                    {"cases", c.cases},
                                    {"hr10", c.hr10},
                                    {"ndcg10", c.ndcg10},
                                    {"hr20", c.hr20},
                                    {"ndcg20", c.ndcg20}});
        }
        j["config"] = config_echo;
        return j;
    }
};

/// Constrained-decoding evaluation over one split: builds the mode's layout
/// for every test case, beam searches the trie, and aggregates ranking
/// metrics plus exact compression accounting.
inline EvalReport evaluate(const ModelState& state, const SplitDataset& ds,
                           const TokenizedCatalog& tc, const Vocabulary& vocab,
                           const TitleTrie& trie, const EvalConfig& config) {
    config.layout.validate();
    if (state.config.vocab_size != vocab.size()) {
        throw ConfigError("evaluate: checkpoint vocab size " +
                          std::to_string(state.config.vocab_size) +
                          " does not match catalog vocabulary " + std::to_string(vocab.size()));
    }
    const std::vector<Interaction>& split =
        config.split == "validation" ? ds.validation() : ds.test();

    BeamSearchConfig bs;
    bs.width = config.beam_width;
    bs.length_normalize = config.length_normalize;

    EvalReport report;
    report.config_echo = {{"split", config.split},
                          {"mode", layout_mode_name(config.layout.mode)},
                          {"K", config.layout.truncation_k},
                          {"M", config.layout.recent_text_m},
                          {"L", config.layout.session_size_l},
                          {"beam_width", config.beam_width},
                          {"length_normalize", config.length_normalize}};

    std::vector<RankedList> lists;
    std::vector<std::int64_t> truths;
    double cr_sum = 0.0;
    for (const Interaction& ia : split) {
        if (config.max_cases > 0 && report.cases >= config.max_cases) break;
        const auto history =
            ds.try_truncate_history(ia.user_id, ia.timestamp, config.layout.truncation_k);
        if (history.empty()) {
            ++report.skipped;
            continue;
        }
        PromptLayout text = layout_text(history, ia.item_id, tc);
        PromptLayout prompt = build_layout(config.layout, history, ia.item_id, tc);
        RankedList ranked = beam_search(state, prompt, tc, trie, bs);

        EvalCaseRow row;
        row.case_index = report.cases;
        row.user_id = ia.user_id;
        row.target_item = ia.item_id;
        row.rank = rank_of(ranked, ia.item_id).value_or(0);
        row.text_tokens = text.history_representation_positions();
        row.compressed_positions = prompt.history_representation_positions();
        row.cr = compression_ratio(text, prompt);
        row.full_history = ds.full_history_length(ia.user_id);
        report.per_case.push_back(row);

        report.text_token_total += row.text_tokens;
        report.compressed_position_total += row.compressed_positions;
        cr_sum += row.cr;
        lists.push_back(std::move(ranked));
        truths.push_back(ia.item_id);
        ++report.cases;
    }
    if (report.cases == 0) {
        throw DataError("evaluate: no usable cases in split '" + config.split + "'");
    }

    report.hr10 = hit_ratio(lists, truths, 10);
    report.ndcg10 = ndcg(lists, truths, 10);
    report.hr20 = hit_ratio(lists, truths, 20);
    report.ndcg20 = ndcg(lists, truths, 20);
    report.cr_ratio_of_sums = static_cast<double>(report.text_token_total) /
                              static_cast<double>(report.compressed_position_total);
    report.cr_mean_of_ratios = cr_sum / static_cast<double>(report.cases);

    for (std::size_t floor : config.cohort_min_history) {
        CohortReport cohort;
        cohort.min_history = floor;
        std::vector<RankedList> cl;
        std::vector<std::int64_t> ct;
        for (std::size_t i = 0; i < lists.size(); ++i) {
            if (report.per_case[i].full_history >= floor) {
                cl.push_back(lists[i]);
                ct.push_back(truths[i]);
            }
        }
        cohort.cases = cl.size();
        if (!cl.empty()) {
            cohort.hr10 = hit_ratio(cl, ct, 10);
            cohort.ndcg10 = ndcg(cl, ct, 10);
            cohort.hr20 = hit_ratio(cl, ct, 20);
            cohort.ndcg20 = ndcg(cl, ct, 20);
        }
        report.cohorts.push_back(cohort);
    }
    return report;
}

/// report.json plus a flat per-case CSV for plotting.
inline void write_eval_report(const std::string& dir, const EvalReport& report,
                              const std::string& stem = "eval") {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir + "/" + stem + ".json");
        if (!out) throw DataError("eval report: cannot write " + dir);
        out << report.to_json().dump(2) << '\n';
    }
    {
        std::ofstream out(dir + "/" + stem + "_cases.csv");
        out << "case,user_id,target_item,rank,text_tokens,compressed_positions,cr,full_history\n";
        for (const EvalCaseRow& r : report.per_case) {
            out << r.case_index << ',' << r.user_id << ',' << r.target_item << ',' << r.rank << ','
                << r.text_tokens << ',' << r.compressed_positions << ',' << r.cr << ','
                << r.full_history << '\n';
        }
    }
}

} // namespace patchrec
