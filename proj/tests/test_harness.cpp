#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "unlab/errors.hpp"
#include "unlab/harness.hpp"

using namespace unlab;
namespace fs = std::filesystem;

namespace {

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig small_run_config(const std::string& out) {
    RunConfig cfg;
    cfg.world.n_subjects = 6;
    cfg.world.vocab_size = 512;
    cfg.model.width = 48;
    cfg.model.ff_width = 48;
    cfg.pretrain.max_epochs = 40;
    cfg.out_dir = out;
    cfg.master_seed = 7;
    cfg.finalize();
    return cfg;
}

// one pretrained small world, shared across test cases
struct SmallRun {
    World world;
    std::vector<Sample> samples;
    ModelState model;
    std::vector<Sample> kept;

    SmallRun() {
        RunConfig cfg = small_run_config("unused");
        const DerivedSeeds seeds = DerivedSeeds::from_master(cfg.master_seed);
        world = generate_world({cfg.world.n_subjects, cfg.world.facts_per_category,
                                cfg.world.vocab_size, seeds.world});
        samples = build_samples(world);
        model = pretrain(world, samples, cfg.model, cfg.pretrain, seeds.pretrain);
        kept = filter_memorized(model, samples, 0.5).kept;
    }
};

const SmallRun& small_run() {
    static SmallRun run;
    return run;
}

}  // namespace

TEST_CASE("flat config parsing and unknown-key rejection") {
    KvConfig kv = KvConfig::from_string(
        "# comment\n"
        "world.n_subjects = 12\n"
        "unlearn.method = npo   # trailing comment\n"
        "seed = 42\n");
    RunConfig cfg;
    cfg.load_kv(kv);
    kv.reject_unknown();
    cfg.finalize();
    CHECK(cfg.world.n_subjects == 12);
    CHECK(cfg.unlearn.method == Method::npo);
    CHECK(cfg.master_seed == 42);
    // per-method defaults filled in by finalize
    CHECK(cfg.unlearn.lr == 0.003);
    CHECK(cfg.unlearn.epochs == 3);

    KvConfig bad = KvConfig::from_string("world.n_subjects = 5\nno_such_key = 1\n");
    RunConfig cfg2;
    cfg2.load_kv(bad);
    CHECK_THROWS_AS(bad.reject_unknown(), ConfigError);

    CHECK_THROWS_AS(KvConfig::from_string("just a line\n"), ConfigError);
    CHECK_THROWS_AS(KvConfig::from_string("a = 1\na = 2\n"), ConfigError);
    KvConfig notnum = KvConfig::from_string("world.n_subjects = x\n");
    RunConfig cfg3;
    CHECK_THROWS_AS(cfg3.load_kv(notnum), ConfigError);
}

TEST_CASE("explicit config keys survive method defaulting") {
    KvConfig kv = KvConfig::from_string("unlearn.method = ga\nunlearn.lr = 0.5\n");
    RunConfig cfg;
    cfg.load_kv(kv);
    cfg.finalize();
    CHECK(cfg.unlearn.lr == 0.5);
    CHECK(cfg.unlearn.epochs == 1);  // defaulted
}

TEST_CASE("seed derivation is deterministic and purpose-separated") {
    const DerivedSeeds a = DerivedSeeds::from_master(7);
    const DerivedSeeds b = DerivedSeeds::from_master(7);
    CHECK(a.world == b.world);
    CHECK(a.pretrain == b.pretrain);
    const DerivedSeeds c = DerivedSeeds::from_master(8);
    CHECK(a.world != c.world);
    std::set<std::uint64_t> all = {a.world, a.model, a.pretrain, a.split, a.unlearn, a.attacks};
    CHECK(all.size() == 6);
}

TEST_CASE("config echo and hash are stable") {
    RunConfig a = small_run_config("x");
    RunConfig b = small_run_config("y");  // out dir is not part of the hash
    CHECK(a.canonical_echo() == b.canonical_echo());
    CHECK(a.config_hash() == b.config_hash());
    b.unlearn.margin = 2.0;
    CHECK(a.config_hash() != b.config_hash());
}

TEST_CASE("checkpoint save/load round-trips bit-exactly") {
    const SmallRun& run = small_run();
    save_checkpoint(run.model, "ckpt_a.bin");
    ModelState loaded = load_checkpoint("ckpt_a.bin");
    CHECK(loaded.params.content_hash() == run.model.params.content_hash());
    REQUIRE(loaded.has_reference());
    CHECK(loaded.reference->content_hash() == run.model.reference->content_hash());
    CHECK(loaded.cfg.width == run.model.cfg.width);
    CHECK(loaded.rng_seed == run.model.rng_seed);
    save_checkpoint(loaded, "ckpt_b.bin");
    CHECK(file_bytes("ckpt_a.bin") == file_bytes("ckpt_b.bin"));
}

TEST_CASE("pretrain reaches the probe target and snapshots the reference") {
    const SmallRun& run = small_run();
    double f1 = 0.0;
    for (const auto& s : run.samples)
        f1 += token_f1(s.reference,
                       greedy_decode(run.model, s.question, decode_budget(s)));
    f1 /= static_cast<double>(run.samples.size());
    CHECK(f1 >= 0.9);
    REQUIRE(run.model.has_reference());
    CHECK(run.model.reference->content_hash() == run.model.params.content_hash());
}

TEST_CASE("pretrain failure reports diagnostics") {
    RunConfig cfg = small_run_config("unused");
    cfg.pretrain.max_epochs = 1;
    cfg.pretrain.lr = 1e-12;
    const DerivedSeeds seeds = DerivedSeeds::from_master(3);
    World w = generate_world({4, 3, 512, seeds.world});
    const auto samples = build_samples(w);
    CHECK_THROWS_AS(pretrain(w, samples, cfg.model, cfg.pretrain, seeds.pretrain),
                    GenerationError);
}

TEST_CASE("memorization filter keeps verbatim decodes") {
    const SmallRun& run = small_run();
    // every kept sample decodes with F1 >= 0.5; verbatim decodes are kept
    const std::set<int> kept_ids = [&] {
        std::set<int> ids;
        for (const auto& s : run.kept) ids.insert(s.id);
        return ids;
    }();
    for (const auto& s : run.samples) {
        const TokenSeq d = greedy_decode(run.model, s.question, decode_budget(s));
        if (d == s.reference) CHECK(kept_ids.count(s.id));
        if (kept_ids.count(s.id)) CHECK(token_f1(s.reference, d) >= 0.5);
    }
}

TEST_CASE("self-generated corpus mirrors the model's own answers") {
    const SmallRun& run = small_run();
    SplitSpec split = make_split(run.world, run.kept, Setting::personalized, {}, 11);
    UnlearnCorpus corpus = build_unlearn_corpus(run.model, run.kept, split);

    const std::set<int> forget_ids(split.forget_sample_ids.begin(),
                                   split.forget_sample_ids.end());
    std::size_t gen_forget = 0;
    std::size_t verbatim = 0;
    for (const auto& s : run.kept) {
        if (s.task != Task::generation) continue;
        if (forget_ids.count(s.id)) ++gen_forget;
    }
    for (const auto& item : corpus.forget) {
        CHECK(!item.answer.empty());
        CHECK(item.origin == "self-generation");
        const TokenSeq d = greedy_decode(run.model, item.question,
                                         static_cast<int>(item.answer.size()) + 4);
        CHECK(d == item.answer);  // answers are exactly what the model emits
        const Fact* f = run.world.subject(item.subject_id).find_fact(item.slot);
        REQUIRE(f);
        if (item.answer.size() >= f->answer.size() &&
            TokenSeq(item.answer.end() - static_cast<long>(f->answer.size()),
                     item.answer.end()) == f->answer)
            ++verbatim;
    }
    CHECK(corpus.forget.size() == gen_forget);  // no empty decodes at this scale
    // a well-memorizing model emits the gold answers almost everywhere
    CHECK(static_cast<double>(verbatim) >= 0.8 * static_cast<double>(corpus.forget.size()));

    // corpus construction is deterministic
    UnlearnCorpus corpus2 = build_unlearn_corpus(run.model, run.kept, split);
    REQUIRE(corpus2.forget.size() == corpus.forget.size());
    for (std::size_t i = 0; i < corpus.forget.size(); ++i)
        CHECK(corpus2.forget[i].answer == corpus.forget[i].answer);
}

TEST_CASE("trace rows are steps times the component count") {
    const SmallRun& run = small_run();
    SplitSpec split = make_split(run.world, run.kept, Setting::personalized, {}, 11);
    UnlearnCorpus corpus = build_unlearn_corpus(run.model, run.kept, split);

    ModelState m = run.model.clone();
    UnlearnConfig cfg;
    cfg.method = Method::ga_diff;
    cfg.lr = 0.001;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    TrainTrace trace = run_unlearn(m, corpus, split, cfg, 5);
    CHECK(trace.steps > 0);
    CHECK(trace.rows.size() == static_cast<std::size_t>(trace.steps) * 6);
    CHECK(!trace.aborted);
}

TEST_CASE("manu run performs exactly one prune edit and no gradient steps") {
    const SmallRun& run = small_run();
    SplitSpec split = make_split(run.world, run.kept, Setting::personalized, {}, 11);
    UnlearnCorpus corpus = build_unlearn_corpus(run.model, run.kept, split);

    ModelState m = run.model.clone();
    UnlearnConfig cfg;
    cfg.method = Method::manu;
    cfg.prune_alpha = 0.5;
    TrainTrace trace = run_unlearn(m, corpus, split, cfg, 5);
    CHECK(trace.steps == 1);  // a single report row set, no optimization steps

    // only the neuron-owned tensors may change
    std::size_t idx = 0;
    std::vector<std::pair<std::string, bool>> changed;
    run.model.params.for_each([&](const std::string& name, const Tensor& t) {
        bool same = true;
        std::size_t j = 0;
        m.params.for_each([&](const std::string& name2, const Tensor& t2) {
            if (j == idx && name2 == name) same = t.value() == t2.value();
            ++j;
        });
        changed.emplace_back(name, !same);
        ++idx;
    });
    for (const auto& [name, was_changed] : changed) {
        const bool neuron_owned = name.find("w1") != std::string::npos ||
                                  name.find("b1") != std::string::npos ||
                                  name.find("w2") != std::string::npos;
        if (!neuron_owned) CHECK(!was_changed);
    }
}

TEST_CASE("ablating canonical identity embeddings severs only the trained view") {
    const SmallRun& run = small_run();
    ModelState ablated = run.model.clone();
    std::vector<int> targets = {0, 1};
    ablate_canonical_identity(ablated, run.world, targets);

    double id_before = 0.0, id_after = 0.0, text_before = 0.0, text_after = 0.0;
    double alias_after = 0.0;
    int n_id = 0, n_text = 0;
    for (const auto& s : run.kept) {
        if (s.task != Task::generation) continue;
        if (s.subject_id != 0 && s.subject_id != 1) continue;
        const double before = rouge_l_recall(
            s.reference, greedy_decode(run.model, s.question, decode_budget(s)));
        const double after = rouge_l_recall(
            s.reference, greedy_decode(ablated, s.question, decode_budget(s)));
        if (s.channel == Channel::identity) {
            id_before += before;
            id_after += after;
            ++n_id;
            // unseen alias views keep working
            TokenSeq alias_q = s.question;
            alias_q[0] = run.world.subject(s.subject_id).identity_tokens[2];
            alias_after += rouge_l_recall(
                s.reference, greedy_decode(ablated, alias_q, decode_budget(s)));
        } else {
            text_before += before;
            text_after += after;
            ++n_text;
        }
    }
    REQUIRE(n_id > 0);
    REQUIRE(n_text > 0);
    const double id_drop = (id_before - id_after) / n_id;
    const double text_drop = (text_before - text_after) / n_text;
    CHECK(id_drop > 0.3);                    // canonical grounding broken
    CHECK(text_drop < id_drop / 2.0);        // text channel essentially intact
    CHECK(alias_after / n_id > id_after / n_id + 0.3);  // aliases recover the answers
}

TEST_CASE("pipeline writes a complete deterministic manifest") {
    fs::remove_all("pipe_a");
    fs::remove_all("pipe_b");
    RunConfig cfg_a = small_run_config("pipe_a");
    RunConfig cfg_b = small_run_config("pipe_b");
    RunManifest ma = pipeline(cfg_a);
    RunManifest mb = pipeline(cfg_b);
    CHECK(ma.complete);
    CHECK(mb.complete);

    CHECK(file_bytes("pipe_a/manifest.json") == file_bytes("pipe_b/manifest.json"));
    for (const char* f :
         {"eval_before.json", "eval_after.json", "attacks.csv", "trace.csv", "samples.jsonl",
          "corpus_forget.jsonl", "checkpoint_after.bin", "memorization_before.csv"})
        CHECK(file_bytes(std::string("pipe_a/") + f) == file_bytes(std::string("pipe_b/") + f));

    // every artifact named in the manifest exists and hashes match
    for (const auto& [rel, hash] : ma.artifacts) {
        CHECK(fs::exists(fs::path("pipe_a") / rel));
        CHECK(hash_file_hex((fs::path("pipe_a") / rel).string()) == hash);
    }
}

TEST_CASE("pipeline records partial completion on stage failure") {
    fs::remove_all("pipe_fail");
    RunConfig cfg = small_run_config("pipe_fail");
    cfg.pretrain.max_epochs = 1;
    cfg.pretrain.lr = 1e-12;  // cannot reach 0.5 probe F1
    RunManifest m = pipeline(cfg);
    CHECK(!m.complete);
    bool saw_failed = false;
    for (const auto& [name, status] : m.stages)
        if (name == "pretrain") saw_failed = status.rfind("failed", 0) == 0;
    CHECK(saw_failed);
    CHECK(fs::exists("pipe_fail/manifest.json"));
    CHECK(fs::exists("pipe_fail/world.json"));  // earlier stages persisted
}
