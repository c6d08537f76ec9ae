// patchrec command line: gen-data, ingest, train, eval, report.
//
// Experiments are described by a JSON config file; flags only override the
// handful of knobs that vary between repeat runs (seed, output dir, the
// pre-training ablation switch). Every command prints its effective resolved
// config before doing anything. Exit codes: 0 success, 2 configuration
// problem, 3 runtime failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "patchrec/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
};

patchrec::ExperimentConfig resolve(const CommonArgs& args) {
    patchrec::ExperimentConfig config = patchrec::ExperimentConfig::load(args.config_path);
    if (args.seed_set) {
        config.seed = args.seed;
        config.synthetic.seed = args.seed;
        for (auto& plan : config.plans) plan.seed = args.seed;
    }
    if (!args.out_dir.empty()) config.out_dir = args.out_dir;
    std::cout << "effective config:\n" << config.to_json().dump(2) << "\n";
    return config;
}

void print_stats(const patchrec::DatasetStats& st) {
    std::cout << "users:                " << st.users << "\n"
              << "items:                " << st.items << "\n"
              << "interactions:         " << st.interactions << "\n"
              << "max sequence length:  " << st.max_sequence_length << "\n"
              << "avg sequence length:  " << st.avg_sequence_length << "\n"
              << "avg title words:      " << st.avg_title_words << "\n";
}

int cmd_gen_data(const CommonArgs& args, const std::string& data_dir) {
    patchrec::ExperimentConfig config = resolve(args);
    if (!config.use_synthetic) {
        throw patchrec::ConfigError("gen-data: config has no dataset.synthetic block");
    }
    const std::string dir = data_dir.empty() ? config.out_dir + "/data" : data_dir;
    patchrec::SyntheticData data = patchrec::generate_synthetic(config.synthetic);
    patchrec::write_synthetic(dir, data, config.synthetic);
    std::cout << "wrote " << dir << "/catalog.tsv, interactions.tsv, provenance.json\n";
    print_stats(patchrec::compute_stats(data.catalog, data.interactions));
    return 0;
}

int cmd_ingest(const CommonArgs& args) {
    patchrec::ExperimentConfig config = resolve(args);
    patchrec::ExperimentContext ctx = patchrec::load_context(config);
    const auto& ds = ctx.dataset;
    std::vector<patchrec::Interaction> all;
    all.insert(all.end(), ds.train().begin(), ds.train().end());
    all.insert(all.end(), ds.validation().begin(), ds.validation().end());
    all.insert(all.end(), ds.test().begin(), ds.test().end());
    patchrec::DatasetStats st = patchrec::compute_stats(ds.catalog(), all);
    print_stats(st);
    std::cout << "split: train " << ds.train().size() << " / validation "
              << ds.validation().size() << " / test " << ds.test().size() << "\n"
              << "vocabulary: " << ctx.vocab.size() << " tokens ("
              << ctx.vocab.word_count() << " words)\n"
              << "trie: " << ctx.trie.path_count() << " distinct titles, "
              << ctx.trie.node_count() << " nodes\n";
    std::filesystem::create_directories(config.out_dir);
    nlohmann::json j{{"users", st.users},
                     {"items", st.items},
                     {"interactions", st.interactions},
                     {"max_sequence_length", st.max_sequence_length},
                     {"avg_sequence_length", st.avg_sequence_length},
                     {"avg_title_words", st.avg_title_words},
                     {"train", ds.train().size()},
                     {"validation", ds.validation().size()},
                     {"test", ds.test().size()},
                     {"vocab", ctx.vocab.size()}};
    std::ofstream(config.out_dir + "/ingest_stats.json") << j.dump(2) << '\n';
    ctx.vocab.save(config.out_dir + "/vocab.tsv");
    std::cout << "wrote " << config.out_dir << "/ingest_stats.json and vocab.tsv\n";
    return 0;
}

int cmd_train(const CommonArgs& args, bool no_pretrain) {
    patchrec::ExperimentConfig config = resolve(args);
    patchrec::ExperimentContext ctx = patchrec::load_context(config);

    patchrec::ValidationProbe probe = [&](const patchrec::ModelState& state, std::size_t step) {
        patchrec::EvalConfig ec;
        ec.split = "validation";
        ec.layout.mode = patchrec::LayoutMode::Text;
        ec.layout.truncation_k = 10;
        ec.beam_width = 10;
        ec.max_cases = 64;
        patchrec::EvalReport r =
            patchrec::evaluate(state, ctx.dataset, ctx.tokenized, ctx.vocab, ctx.trie, ec);
        std::cout << "  [probe step " << step << "] validation HR@10 " << r.hr10 << "\n";
        return r.hr10;
    };

    auto records = patchrec::run_training(config, ctx, no_pretrain, probe);
    for (const auto& [name, record] : records) {
        std::cout << "plan " << name << " (" << record.stage << "): " << record.steps.size()
                  << " steps, final loss " << record.final_loss() << ", skipped "
                  << record.skipped_examples << "\n"
                  << "  checkpoint: " << record.checkpoint_path << "\n";
    }
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    patchrec::ExperimentConfig config = resolve(args);
    patchrec::ExperimentContext ctx = patchrec::load_context(config);
    auto reports = patchrec::run_evaluation(config, ctx);
    for (const auto& [name, r] : reports) {
        std::cout << name << ": cases " << r.cases << " CR " << r.cr_ratio_of_sums << " HR@10 "
                  << r.hr10 << " N@10 " << r.ndcg10 << " HR@20 " << r.hr20 << " N@20 " << r.ndcg20
                  << "\n";
    }
    std::cout << "reports under " << config.out_dir << "/eval\n";
    return 0;
}

int cmd_report(const CommonArgs& args) {
    patchrec::ExperimentConfig config = resolve(args);
    const std::string eval_dir = config.out_dir + "/eval";
    if (!std::filesystem::exists(eval_dir)) {
        throw patchrec::DataError("report: no eval outputs under " + eval_dir +
                                  " (run `patchrec eval` first)");
    }
    std::cout << std::left << std::setw(28) << "run" << std::setw(8) << "cases" << std::setw(10)
              << "CR" << std::setw(10) << "HR@10" << std::setw(10) << "N@10" << std::setw(10)
              << "HR@20" << std::setw(10) << "N@20" << "\n";
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(eval_dir)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        nlohmann::json j;
        std::ifstream(path) >> j;
        std::cout << std::left << std::setw(28) << path.stem().string() << std::setw(8)
                  << j.value("cases", 0) << std::setw(10) << j.value("cr_ratio_of_sums", 0.0)
                  << std::setw(10) << j.value("hr10", 0.0) << std::setw(10)
                  << j.value("ndcg10", 0.0) << std::setw(10) << j.value("hr20", 0.0)
                  << std::setw(10) << j.value("ndcg20", 0.0) << "\n";
    }
    for (const char* extra : {"/sweep.csv", "/token_pairs.csv"}) {
        const std::string p = eval_dir + extra;
        if (std::filesystem::exists(p)) std::cout << "sweep data: " << p << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"PatchRec desk-scale laboratory"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string data_dir;
    bool no_pretrain = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", args.config_path, "experiment config (json)")->required();
        cmd->add_option("--seed", args.seed, "override every seed in the config")
            ->each([&](const std::string&) { args.seed_set = true; });
        cmd->add_option("--out", args.out_dir, "override out_dir");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "write the synthetic dataset files");
    add_common(gen);
    gen->add_option("--data-dir", data_dir, "where to write catalog/interactions");

    CLI::App* ing = app.add_subcommand("ingest", "filter + split the dataset and print stats");
    add_common(ing);

    CLI::App* tr = app.add_subcommand("train", "run the configured training plans in order");
    add_common(tr);
    tr->add_flag("--no-pretrain", no_pretrain,
                 "skip patch pre-training plans (finetune from scratch)");

    CLI::App* ev = app.add_subcommand("eval", "evaluate checkpoints per the eval block");
    add_common(ev);

    CLI::App* rep = app.add_subcommand("report", "summarize eval outputs as a table");
    add_common(rep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(args, data_dir);
        if (ing->parsed()) return cmd_ingest(args);
        if (tr->parsed()) return cmd_train(args, no_pretrain);
        if (ev->parsed()) return cmd_eval(args);
        if (rep->parsed()) return cmd_report(args);
    } catch (const patchrec::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const patchrec::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
