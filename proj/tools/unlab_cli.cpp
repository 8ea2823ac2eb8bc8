#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "unlab/errors.hpp"
#include "unlab/harness.hpp"
#include "unlab/svg.hpp"

namespace fs = std::filesystem;
using namespace unlab;

namespace {

void print_usage() {
    std::cout <<
        "usage: unlab <subcommand> [flags]\n"
        "\n"
        "subcommands:\n"
        "  worldgen   generate the persona world and sample corpus\n"
        "  pretrain   train the base model and apply the memorization filter\n"
        "  unlearn    build the split/corpus and run the configured method\n"
        "  eval       evaluate checkpoints against the split\n"
        "  attack     run the robustness attacks on the unlearned model\n"
        "  pipeline   run every stage end to end and write the manifest\n"
        "  report     print a run summary and regenerate the plots\n"
        "\n"
        "flags:\n"
        "  --config <path>   flat key=value config file\n"
        "  --seed <n>        master seed (overrides config)\n"
        "  --out <dir>       output directory (overrides config)\n"
        "  --method <name>   unlearning method (overrides config)\n"
        "  --setting <name>  complete | selective | personalized\n"
        "  --ratio <r>       complete-setting forget ratio (0.05 | 0.15 | 0.30)\n";
}

struct CliArgs {
    std::string subcommand;
    std::optional<std::string> config, out, method, setting;
    std::optional<std::uint64_t> seed;
    std::optional<double> ratio;
};

CliArgs parse_args(int argc, char** argv) {
    if (argc < 2) throw ConfigError("missing subcommand");
    CliArgs args;
    args.subcommand = argv[1];
    for (int i = 2; i < argc; ++i) {
        const std::string flag = argv[i];
        auto need_value = [&](const char* name) -> std::string {
            if (i + 1 >= argc) throw ConfigError(std::string("flag ") + name + " needs a value");
            return argv[++i];
        };
        if (flag == "--config") args.config = need_value("--config");
        else if (flag == "--seed") args.seed = std::stoull(need_value("--seed"));
        else if (flag == "--out") args.out = need_value("--out");
        else if (flag == "--method") args.method = need_value("--method");
        else if (flag == "--setting") args.setting = need_value("--setting");
        else if (flag == "--ratio") args.ratio = std::stod(need_value("--ratio"));
        else throw ConfigError("unknown flag: " + flag);
    }
    return args;
}

RunConfig resolve_config(const CliArgs& args) {
    RunConfig cfg;
    if (args.config) {
        KvConfig kv = KvConfig::from_file(*args.config);
        cfg.load_kv(kv);
        kv.reject_unknown();
    }
    if (args.seed) cfg.master_seed = *args.seed;
    if (args.out) cfg.out_dir = *args.out;
    if (args.method) cfg.unlearn.method = method_from_string(*args.method);
    if (args.setting) cfg.setting = setting_from_string(*args.setting);
    if (args.ratio) cfg.split_params.ratio = *args.ratio;
    cfg.finalize();
    return cfg;
}

World require_world(const RunConfig& cfg) {
    const fs::path path = fs::path(cfg.out_dir) / "world.json";
    if (!fs::exists(path))
        throw ConfigError("missing " + path.string() + " (run `unlab worldgen` first)");
    return load_world(path.string());
}

std::vector<Sample> require_samples(const RunConfig& cfg, const World& w, const char* file,
                                    const char* hint) {
    const fs::path path = fs::path(cfg.out_dir) / file;
    if (!fs::exists(path))
        throw ConfigError("missing " + path.string() + " (run `unlab " + hint + "` first)");
    return load_samples(w, path.string());
}

ModelState require_checkpoint(const RunConfig& cfg, const char* file, const char* hint) {
    const fs::path path = fs::path(cfg.out_dir) / file;
    if (!fs::exists(path))
        throw ConfigError("missing " + path.string() + " (run `unlab " + hint + "` first)");
    return load_checkpoint(path.string());
}

SplitSpec require_or_make_split(const RunConfig& cfg, const World& w,
                                const std::vector<Sample>& kept) {
    const fs::path path = fs::path(cfg.out_dir) / "split.json";
    if (fs::exists(path)) return load_split(path.string());
    const DerivedSeeds seeds = DerivedSeeds::from_master(cfg.master_seed);
    SplitSpec split = make_split(w, kept, cfg.setting, cfg.split_params, seeds.split);
    save_split(split, path.string());
    return split;
}

int cmd_worldgen(const RunConfig& cfg) {
    const DerivedSeeds seeds = DerivedSeeds::from_master(cfg.master_seed);
    fs::create_directories(cfg.out_dir);
    World w = generate_world({cfg.world.n_subjects, cfg.world.facts_per_category,
                              cfg.world.vocab_size, seeds.world});
    const auto samples = build_samples(w);
    save_world(w, (fs::path(cfg.out_dir) / "world.json").string());
    save_samples(samples, (fs::path(cfg.out_dir) / "samples.jsonl").string());
    std::cout << "world: " << w.subjects.size() << " subjects, " << w.fact_count() << " facts, "
              << samples.size() << " samples -> " << cfg.out_dir << "\n";
    return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
    const DerivedSeeds seeds = DerivedSeeds::from_master(cfg.master_seed);
    World w = require_world(cfg);
    const auto samples = require_samples(cfg, w, "samples.jsonl", "worldgen");
    ModelState m = pretrain(w, samples, cfg.model, cfg.pretrain, seeds.pretrain, &std::cout);
    save_checkpoint(m, (fs::path(cfg.out_dir) / "checkpoint_before.bin").string());
    FilterResult fr = filter_memorized(m, samples, cfg.filter_threshold);
    save_samples(fr.kept, (fs::path(cfg.out_dir) / "samples_filtered.jsonl").string());
    std::ostringstream drops;
    drops << "sample_id,token_f1\n";
    for (const auto& [id, f1] : fr.dropped) drops << id << ',' << format_double(f1) << "\n";
    std::ofstream df(fs::path(cfg.out_dir) / "filter_drops.csv", std::ios::binary);
    df << drops.str();
    std::cout << "pretrained model saved; filter kept " << fr.kept.size() << "/" << samples.size()
              << " samples\n";
    return 0;
}

int cmd_unlearn(const RunConfig& cfg) {
    const DerivedSeeds seeds = DerivedSeeds::from_master(cfg.master_seed);
    World w = require_world(cfg);
    const auto kept = require_samples(cfg, w, "samples_filtered.jsonl", "pretrain");
    ModelState before = require_checkpoint(cfg, "checkpoint_before.bin", "pretrain");
    SplitSpec split = require_or_make_split(cfg, w, kept);
    UnlearnCorpus corpus = build_unlearn_corpus(before, kept, split);
    save_corpus(corpus.forget, (fs::path(cfg.out_dir) / "corpus_forget.jsonl").string());
    save_corpus(corpus.retain, (fs::path(cfg.out_dir) / "corpus_retain.jsonl").string());
    ModelState after = before.clone();
    TrainTrace trace = run_unlearn(after, corpus, split, cfg.unlearn, seeds.unlearn, &std::cout);
    save_checkpoint(after, (fs::path(cfg.out_dir) / "checkpoint_after.bin").string());
    save_trace(trace, (fs::path(cfg.out_dir) / "trace.csv").string());
    std::cout << "unlearn " << to_string(cfg.unlearn.method) << ": " << trace.steps << " steps"
              << (trace.aborted ? " (aborted, last-good restored)" : "") << "\n";
    return trace.aborted ? 2 : 0;
}

int cmd_eval(const RunConfig& cfg) {
    World w = require_world(cfg);
    const auto kept = require_samples(cfg, w, "samples_filtered.jsonl", "pretrain");
    SplitSpec split = require_or_make_split(cfg, w, kept);
    ModelState before = require_checkpoint(cfg, "checkpoint_before.bin", "pretrain");
    EvalReport rb = evaluate(before, kept, split);
    rb.method_id = "before";
    rb.config_hash = cfg.config_hash();
    save_eval_report(rb, (fs::path(cfg.out_dir) / "eval_before.json").string(),
                     (fs::path(cfg.out_dir) / "eval_before.csv").string());
    save_memorization_profile(memorization_profile(before, kept),
                              (fs::path(cfg.out_dir) / "memorization_before.csv").string());
    std::cout << "eval before: utility "
              << (rb.utility ? format_double(*rb.utility) : "absent") << "\n";
    const fs::path after_path = fs::path(cfg.out_dir) / "checkpoint_after.bin";
    if (fs::exists(after_path)) {
        ModelState after = load_checkpoint(after_path.string());
        EvalReport ra = evaluate(after, kept, split);
        ra.method_id = to_string(cfg.unlearn.method);
        ra.config_hash = cfg.config_hash();
        save_eval_report(ra, (fs::path(cfg.out_dir) / "eval_after.json").string(),
                         (fs::path(cfg.out_dir) / "eval_after.csv").string());
        std::cout << "eval after (" << ra.method_id << "): forget_efficiency "
                  << (ra.forget_efficiency ? format_double(*ra.forget_efficiency) : "absent")
                  << " utility " << (ra.utility ? format_double(*ra.utility) : "absent") << "\n";
        if (!split.subject_pairing.empty()) {
            const double gap = cfg.unlearn.margin - 0.3;
            const MarginStats ms = margin_satisfaction(after, kept, split, gap);
            std::cout << "margin: " << ms.satisfied << "/" << ms.pairs << " pairs with gap >= "
                      << format_double(gap) << " (mean gap " << format_double(ms.mean_gap)
                      << ")\n";
        }
    }
    return 0;
}

int cmd_attack(const RunConfig& cfg) {
    const DerivedSeeds seeds = DerivedSeeds::from_master(cfg.master_seed);
    World w = require_world(cfg);
    const auto kept = require_samples(cfg, w, "samples_filtered.jsonl", "pretrain");
    SplitSpec split = require_or_make_split(cfg, w, kept);
    ModelState after = require_checkpoint(cfg, "checkpoint_after.bin", "unlearn");
    const std::set<int> forget_ids(split.forget_sample_ids.begin(),
                                   split.forget_sample_ids.end());
    std::vector<Sample> forget_gen;
    for (const auto& s : kept)
        if (s.task == Task::generation && forget_ids.count(s.id)) forget_gen.push_back(s);
    std::vector<double> baseline;
    for (const auto& s : forget_gen)
        baseline.push_back(
            rouge_l_recall(s.reference, greedy_decode(after, s.question, decode_budget(s))));
    std::vector<AttackSpec> specs;
    for (AttackKind k : cfg.attack_kinds) {
        AttackSpec spec = AttackSpec::make(k, seeds.attacks);
        spec.n_variants = cfg.attack_variants;
        specs.push_back(spec);
    }
    AttackReport rep = run_attacks(after, baseline, forget_gen, specs, w);
    save_attack_report(rep, to_string(cfg.unlearn.method),
                       (fs::path(cfg.out_dir) / "attacks.csv").string(),
                       (fs::path(cfg.out_dir) / "attacks_detail.csv").string());
    for (const auto& s : rep.summaries)
        std::cout << to_string(s.kind) << ": R_before " << format_double(s.r_before)
                  << " R_attack " << format_double(s.r_attack) << " ASR "
                  << (s.asr ? format_double(*s.asr) : "undefined") << "\n";
    return 0;
}

int cmd_pipeline(const RunConfig& cfg) {
    RunManifest manifest = pipeline(cfg, &std::cout);
    std::cout << (manifest.complete ? "pipeline complete" : "pipeline incomplete") << "; manifest "
              << (fs::path(cfg.out_dir) / "manifest.json").string() << "\n";
    return manifest.complete ? 0 : 2;
}

int cmd_report(const RunConfig& cfg) {
    const fs::path out(cfg.out_dir);
    for (const char* file : {"eval_before.json", "eval_after.json"}) {
        const fs::path p = out / file;
        if (!fs::exists(p)) continue;
        std::ifstream in(p);
        nlohmann::ordered_json j = nlohmann::ordered_json::parse(in);
        std::cout << file << " (" << j.at("method").get<std::string>() << ")\n";
        for (const auto& [split_name, tasks] : j.at("cells").items())
            for (const auto& [task, channels] : tasks.items())
                for (const auto& [channel, value] : channels.items())
                    std::cout << "  " << split_name << "/" << task << "/" << channel << ": "
                              << (value.is_null() ? "absent" : format_double(value.get<double>()))
                              << "\n";
    }
    const fs::path attacks = out / "attacks.csv";
    if (fs::exists(attacks)) {
        std::ifstream in(attacks);
        std::string line;
        std::getline(in, line);  // header
        std::vector<std::string> cols;
        std::vector<std::optional<double>> row;
        std::string method = to_string(cfg.unlearn.method);
        while (std::getline(in, line)) {
            std::istringstream ls(line);
            std::string m, attack, rb, ra, asr_s;
            std::getline(ls, m, ',');
            std::getline(ls, attack, ',');
            std::getline(ls, rb, ',');
            std::getline(ls, ra, ',');
            std::getline(ls, asr_s, ',');
            method = m;
            cols.push_back(attack);
            row.push_back(asr_s == "undefined" ? std::optional<double>{}
                                               : std::optional<double>{std::stod(asr_s)});
            std::cout << "attack " << attack << ": ASR " << asr_s << "\n";
        }
        if (!cols.empty()) {
            fs::create_directories(out / "plots");
            write_heatmap_svg((out / "plots" / "asr_heatmap.svg").string(),
                              "attack success rate", {method}, cols, {row});
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        const CliArgs args = parse_args(argc, argv);
        if (args.subcommand == "help" || args.subcommand == "--help") {
            print_usage();
            return 0;
        }
        const RunConfig cfg = resolve_config(args);
        if (args.subcommand == "worldgen") return cmd_worldgen(cfg);
        if (args.subcommand == "pretrain") return cmd_pretrain(cfg);
        if (args.subcommand == "unlearn") return cmd_unlearn(cfg);
        if (args.subcommand == "eval") return cmd_eval(cfg);
        if (args.subcommand == "attack") return cmd_attack(cfg);
        if (args.subcommand == "pipeline") return cmd_pipeline(cfg);
        if (args.subcommand == "report") return cmd_report(cfg);
        throw ConfigError("unknown subcommand: " + args.subcommand);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        print_usage();
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
