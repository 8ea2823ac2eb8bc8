#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "unlab/errors.hpp"
#include "unlab/serialize.hpp"
#include "unlab/world.hpp"

using namespace unlab;

namespace {

WorldConfig small_cfg(int n = 4, std::uint64_t seed = 7) {
    WorldConfig cfg;
    cfg.n_subjects = n;
    cfg.facts_per_category = 3;
    cfg.vocab_size = 512;
    cfg.seed = seed;
    return cfg;
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool contains_alias(const World& w, const TokenSeq& seq) {
    for (int t : seq)
        if (w.layout.is_identity_token(t) && (t - w.layout.identity_begin) % 4 != 0) return true;
    return false;
}

}  // namespace

TEST_CASE("generate_world produces the configured counts") {
    WorldConfig cfg;
    cfg.n_subjects = 50;
    cfg.facts_per_category = 3;
    cfg.vocab_size = 2048;
    cfg.seed = 7;
    World w = generate_world(cfg);
    CHECK(w.subjects.size() == 50);
    CHECK(w.fact_count() >= 450);
    for (const auto& s : w.subjects) {
        int per_cat[3] = {0, 0, 0};
        for (const auto& f : s.facts) {
            ++per_cat[static_cast<int>(f.category)];
            CHECK(!f.answer.empty());
            CHECK(f.answer.size() <= 6);
        }
        for (int c = 0; c < 3; ++c) CHECK(per_cat[c] >= 3);
    }
}

TEST_CASE("subject identity tokens are distinct and unshared") {
    World w = generate_world(small_cfg(6));
    std::set<int> seen;
    for (const auto& s : w.subjects) {
        std::set<int> own(s.identity_tokens.begin(), s.identity_tokens.end());
        CHECK(own.size() == 4);
        for (int t : s.identity_tokens) {
            CHECK(!seen.count(t));
            seen.insert(t);
        }
    }
    // (subject, slot) unique
    for (const auto& s : w.subjects) {
        std::set<std::string> slots;
        for (const auto& f : s.facts) {
            CHECK(!slots.count(f.slot));
            slots.insert(f.slot);
        }
    }
}

TEST_CASE("identical config and seed give byte-identical worlds") {
    World a = generate_world(small_cfg(2, 1));
    World b = generate_world(small_cfg(2, 1));
    save_world(a, "world_a.json");
    save_world(b, "world_b.json");
    CHECK(file_bytes("world_a.json") == file_bytes("world_b.json"));
    save_samples(build_samples(a), "samples_a.jsonl");
    save_samples(build_samples(b), "samples_b.jsonl");
    CHECK(file_bytes("samples_a.jsonl") == file_bytes("samples_b.jsonl"));
}

TEST_CASE("vocab too small is a configuration error naming the shortfall") {
    WorldConfig cfg = small_cfg(50);
    cfg.vocab_size = 150;
    try {
        generate_world(cfg);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("200 identity tokens") != std::string::npos);
        CHECK(msg.find("150") != std::string::npos);
    }
}

TEST_CASE("build_samples emits six samples per fact with the paired design") {
    World w = generate_world(small_cfg());
    const auto samples = build_samples(w);
    CHECK(samples.size() == 6 * w.fact_count());

    // every (fact, task) pair exists in both channels
    std::set<std::tuple<int, std::string, int, int>> keys;
    for (const auto& s : samples)
        keys.insert({s.subject_id, s.fact_slot, static_cast<int>(s.task),
                     static_cast<int>(s.channel)});
    CHECK(keys.size() == samples.size());
    for (const auto& s : w.subjects)
        for (const auto& f : s.facts)
            for (int task = 0; task < 3; ++task)
                for (int ch = 0; ch < 2; ++ch)
                    CHECK(keys.count({s.id, f.slot, task, ch}));
}

TEST_CASE("channel exclusivity and identity-prefix invariants") {
    World w = generate_world(small_cfg());
    for (const auto& s : build_samples(w)) {
        bool has_identity = false, has_name = false;
        for (int t : s.question) {
            has_identity |= w.layout.is_identity_token(t);
            has_name |= w.layout.is_name_token(t);
        }
        if (s.channel == Channel::identity) {
            CHECK(has_identity);
            CHECK(!has_name);
            CHECK(w.layout.is_identity_token(s.question[0]));
            // exactly one identity token
            int n_id = 0;
            for (int t : s.question) n_id += w.layout.is_identity_token(t) ? 1 : 0;
            CHECK(n_id == 1);
        } else {
            CHECK(has_name);
            CHECK(!has_identity);
        }
    }
}

TEST_CASE("swapping channel changes only the subject-reference tokens") {
    World w = generate_world(small_cfg());
    const auto samples = build_samples(w);
    std::map<std::tuple<int, std::string, int>, std::pair<TokenSeq, TokenSeq>> pairs;
    for (const auto& s : samples) {
        auto& entry = pairs[{s.subject_id, s.fact_slot, static_cast<int>(s.task)}];
        (s.channel == Channel::identity ? entry.first : entry.second) = s.question;
    }
    for (const auto& [key, qs] : pairs) {
        (void)key;
        const TokenSeq& qi = qs.first;
        const TokenSeq& qt = qs.second;
        REQUIRE(!qi.empty());
        REQUIRE(qt.size() == qi.size() + 1);  // one identity token vs two name tokens
        // identical after the subject-reference prefix
        CHECK(TokenSeq(qi.begin() + 1, qi.end()) == TokenSeq(qt.begin() + 2, qt.end()));
    }
}

TEST_CASE("alias hygiene: views 1..3 never appear in any sample") {
    World w = generate_world(small_cfg(8));
    for (const auto& s : build_samples(w)) {
        CHECK(!contains_alias(w, s.question));
        CHECK(!contains_alias(w, s.reference));
        for (const auto& o : s.option_tokens) CHECK(!contains_alias(w, o));
    }
}

TEST_CASE("classification samples carry exactly four options with one abstention") {
    World w = generate_world(small_cfg());
    for (const auto& s : build_samples(w)) {
        if (s.task != Task::classification) {
            CHECK(s.options.empty());
            continue;
        }
        CHECK(s.options.size() == 4);
        CHECK(s.option_tokens.size() == 4);
        int abstentions = 0, correct_hits = 0;
        for (int k = 0; k < 4; ++k) {
            if (s.option_tokens[static_cast<std::size_t>(k)] == TokenSeq{SpecialTokens::abstain})
                ++abstentions;
            if (s.option_tokens[static_cast<std::size_t>(k)] == s.reference) ++correct_hits;
        }
        CHECK(abstentions == 1);
        CHECK(correct_hits == 1);
        CHECK(s.correct_option >= 0);
        CHECK(s.correct_option < 4);
        CHECK(s.option_tokens[static_cast<std::size_t>(s.correct_option)] == s.reference);
    }
}

TEST_CASE("cloze questions are declarative with a blank placeholder") {
    World w = generate_world(small_cfg());
    for (const auto& s : build_samples(w)) {
        if (s.task != Task::cloze) continue;
        CHECK(s.question.back() == SpecialTokens::blank);
        bool has_decl = false;
        for (int t : s.question)
            has_decl |= t >= w.layout.decl_begin && t < w.layout.decl_end;
        CHECK(has_decl);
        // the reference is the bare answer span
        const Fact* f = w.subject(s.subject_id).find_fact(s.fact_slot);
        REQUIRE(f);
        CHECK(s.reference == f->answer);
    }
}

TEST_CASE("majority voting selects slots and keeps both sets non-empty") {
    World w = generate_world(small_cfg(8, 7));
    const auto voted = select_personalized(w, 3, 7);
    CHECK(voted.size() == w.subjects.size());
    for (const auto& s : w.subjects) {
        const auto& forget = voted.at(s.id);
        CHECK(!forget.empty());
        CHECK(forget.size() < s.facts.size());
    }
    // deterministic
    CHECK(select_personalized(w, 3, 7) == voted);
    CHECK(select_personalized(w, 3, 8) != voted);

    CHECK_THROWS_AS(select_personalized(w, 2, 7), ConfigError);
    CHECK_THROWS_AS(select_personalized(w, 1, 7), ConfigError);
}

TEST_CASE("complete split puts whole subjects in the forget set") {
    World w = generate_world(small_cfg(50, 7));
    // build a world with 50 subjects but a larger vocab
    WorldConfig cfg = small_cfg(50);
    cfg.vocab_size = 2048;
    w = generate_world(cfg);
    const auto samples = build_samples(w);
    SplitParams params;
    params.ratio = 0.30;
    SplitSpec split = make_split(w, samples, Setting::complete, params, 7);
    CHECK(split.ratio == 0.30);

    const std::set<int> forget_ids(split.forget_sample_ids.begin(),
                                   split.forget_sample_ids.end());
    std::set<int> forget_subjects;
    for (const auto& s : samples)
        if (forget_ids.count(s.id)) forget_subjects.insert(s.subject_id);
    CHECK(forget_subjects.size() == 15);  // 0.30 * 50
    // every sample of a forgotten subject is in forget
    for (const auto& s : samples)
        if (forget_subjects.count(s.subject_id)) CHECK(forget_ids.count(s.id));

    params.ratio = 0.20;
    CHECK_THROWS_AS(make_split(w, samples, Setting::complete, params, 7), ConfigError);
}

TEST_CASE("forget set sizes grow monotonically with the ratio") {
    WorldConfig cfg = small_cfg(50);
    cfg.vocab_size = 2048;
    World w = generate_world(cfg);
    const auto samples = build_samples(w);
    std::size_t last = 0;
    for (double r : {0.05, 0.15, 0.30}) {
        SplitParams params;
        params.ratio = r;
        SplitSpec split = make_split(w, samples, Setting::complete, params, 7);
        CHECK(split.forget_sample_ids.size() > last);
        last = split.forget_sample_ids.size();
    }
}

TEST_CASE("selective split forgets exactly the sensitive-category samples") {
    World w = generate_world(small_cfg(6));
    const auto samples = build_samples(w);
    SplitSpec split = make_split(w, samples, Setting::selective, {}, 3);
    const std::set<int> forget_ids(split.forget_sample_ids.begin(),
                                   split.forget_sample_ids.end());
    for (const auto& s : samples) {
        const Fact* f = w.subject(s.subject_id).find_fact(s.fact_slot);
        REQUIRE(f);
        CHECK((f->category == Category::sensitive) == (forget_ids.count(s.id) > 0));
    }
    CHECK(!split.subject_pairing.empty());
    for (const auto& [subject, pairing] : split.subject_pairing) {
        (void)subject;
        CHECK(pairing.first.size() == 3);   // sensitive slots
        CHECK(pairing.second.size() == 6);  // basic + normal
    }
}

TEST_CASE("personalized split matches the voting oracle") {
    World w = generate_world(small_cfg(6));
    const auto samples = build_samples(w);
    SplitSpec split = make_split(w, samples, Setting::personalized, {}, 11);
    const auto voted = select_personalized(w, 3, 11);

    const std::set<int> forget_ids(split.forget_sample_ids.begin(),
                                   split.forget_sample_ids.end());
    for (const auto& s : samples) {
        const auto& fs = voted.at(s.subject_id);
        const bool in_voted = std::find(fs.begin(), fs.end(), s.fact_slot) != fs.end();
        CHECK(in_voted == (forget_ids.count(s.id) > 0));
    }
    for (const auto& [subject, pairing] : split.subject_pairing) {
        CHECK(pairing.first == voted.at(subject));
        CHECK(!pairing.second.empty());
    }
}

TEST_CASE("every split partitions the samples exactly once") {
    World w = generate_world(small_cfg(6));
    const auto samples = build_samples(w);
    for (Setting setting : {Setting::selective, Setting::personalized}) {
        SplitSpec split = make_split(w, samples, setting, {}, 5);
        std::set<int> seen;
        for (int id : split.forget_sample_ids) CHECK(seen.insert(id).second);
        for (int id : split.retain_sample_ids) CHECK(seen.insert(id).second);
        CHECK(seen.size() == samples.size());
        CHECK(!split.forget_sample_ids.empty());
        CHECK(!split.retain_sample_ids.empty());
    }
}

TEST_CASE("filter_memorized boundary behavior") {
    World w = generate_world(small_cfg(2));
    auto samples = build_samples(w);
    samples.resize(12);

    ModelConfig mc;
    mc.vocab = w.config.vocab_size;
    mc.width = 16;
    mc.depth = 1;
    mc.ff_width = 32;
    mc.context = 32;
    ModelState m = init_model(mc, 3);

    // force empty decodes: the end token always wins
    std::fill(m.params.w_out.value().begin(), m.params.w_out.value().end(), 0.0);
    std::fill(m.params.b_out.value().begin(), m.params.b_out.value().end(), 0.0);
    m.params.b_out.value()[static_cast<std::size_t>(mc.end_token)] = 9.0;

    FilterResult strict = filter_memorized(m, samples, 0.5);
    CHECK(strict.kept.empty());
    CHECK(strict.dropped.size() == samples.size());
    for (const auto& [id, f1] : strict.dropped) {
        (void)id;
        CHECK(f1 == 0.0);
    }

    // threshold 0 keeps everything
    FilterResult open = filter_memorized(m, samples, 0.0);
    CHECK(open.kept.size() == samples.size());
    CHECK(open.dropped.empty());

    CHECK_THROWS_AS(filter_memorized(m, samples, 1.5), ConfigError);
}

TEST_CASE("sample records round-trip through the line format") {
    World w = generate_world(small_cfg(3));
    const auto samples = build_samples(w);
    save_samples(samples, "samples_rt.jsonl");
    const auto loaded = load_samples(w, "samples_rt.jsonl");
    REQUIRE(loaded.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(loaded[i].id == samples[i].id);
        CHECK(loaded[i].question == samples[i].question);
        CHECK(loaded[i].reference == samples[i].reference);
        CHECK(loaded[i].options == samples[i].options);
        CHECK(loaded[i].option_tokens == samples[i].option_tokens);
        CHECK(loaded[i].correct_option == samples[i].correct_option);
    }
    save_samples(loaded, "samples_rt2.jsonl");
    CHECK(file_bytes("samples_rt.jsonl") == file_bytes("samples_rt2.jsonl"));
}
