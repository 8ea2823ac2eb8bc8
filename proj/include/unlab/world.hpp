#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unlab/model.hpp"
#include "unlab/rng.hpp"

namespace unlab {

enum class Category { basic, normal, sensitive };
enum class Channel { identity, text };
enum class Task { generation, classification, cloze };

const char* to_string(Category c);
const char* to_string(Channel c);
const char* to_string(Task t);
Category category_from_string(const std::string& s);
Channel channel_from_string(const std::string& s);
Task task_from_string(const std::string& s);

struct Fact {
    int subject_id = -1;
    Category category = Category::basic;
    std::string slot;   // unique per subject, e.g. "basic0"
    TokenSeq answer;    // 1..6 tokens
};

struct Subject {
    int id = -1;
    TokenSeq name;                          // two name tokens, unique per subject
    std::array<int, 4> identity_tokens{};   // [0] canonical, [1..3] unseen aliases
    int group = 0;                          // one of 8 group tags
    std::vector<Fact> facts;

    const Fact* find_fact(const std::string& slot) const;
};

struct Sample {
    int id = -1;
    int subject_id = -1;
    std::string fact_slot;
    Channel channel = Channel::identity;
    Task task = Task::generation;
    TokenSeq question;
    TokenSeq reference;
    std::vector<std::string> options;       // exactly 4 when classification, else empty
    std::vector<TokenSeq> option_tokens;    // token form of options (rebuilt on load)
    int correct_option = -1;                // 0..3 = A..D

    bool is_classification() const { return task == Task::classification; }
};

// special token ids
struct SpecialTokens {
    static constexpr int pad = 0;
    static constexpr int end_of_answer = 1;
    static constexpr int blank = 2;     // the "___" cloze placeholder
    static constexpr int abstain = 3;   // the "None of the above" option
    static constexpr int count = 8;
};

struct VocabLayout {
    int vocab_size = 0;
    int identity_begin = 0, identity_end = 0;
    int name_begin = 0, name_end = 0;
    int slot_begin = 0, slot_end = 0;
    int decl_begin = 0, decl_end = 0;
    int marker_begin = 0, marker_end = 0;   // [0]=ask, [1]=choose
    int template_begin = 0, template_end = 0;
    int filler_begin = 0, filler_end = 0;
    int answer_begin = 0, answer_end = 0;

    int ask_token() const { return marker_begin; }
    int choose_token() const { return marker_begin + 1; }
    bool is_identity_token(int t) const { return t >= identity_begin && t < identity_end; }
    bool is_name_token(int t) const { return t >= name_begin && t < name_end; }
    bool is_filler_token(int t) const { return t >= filler_begin && t < filler_end; }
};

struct WorldConfig {
    int n_subjects = 50;
    int facts_per_category = 3;
    int vocab_size = 2048;
    std::uint64_t seed = 7;
};

// number of question-template variants per task; variant 0 is canonical, the
// rest are the paraphrase rewrites
constexpr int kTemplateVariants = 4;

struct World {
    WorldConfig config;
    VocabLayout layout;
    std::vector<Subject> subjects;

    const Subject& subject(int id) const;
    std::size_t fact_count() const;
};

World generate_world(const WorldConfig& config);

TokenSeq subject_reference_tokens(const Subject& s, Channel channel);
TokenSeq make_question(const World& w, const Subject& s, const Fact& f, Task task, Channel channel,
                       int variant);
std::string render_token(const World& w, int token);
std::string render_tokens(const World& w, const TokenSeq& tokens);
TokenSeq parse_rendered(const World& w, const std::string& text);

std::vector<Sample> build_samples(const World& w);

// majority-vote persona selection: subject id -> forget slots
std::map<int, std::vector<std::string>> select_personalized(const World& w, int n_agents,
                                                            std::uint64_t seed);

enum class Setting { complete, selective, personalized };
const char* to_string(Setting s);
Setting setting_from_string(const std::string& s);

struct SplitSpec {
    Setting setting = Setting::complete;
    double ratio = 0.0;  // complete only
    std::vector<int> forget_sample_ids;
    std::vector<int> retain_sample_ids;
    // subject id -> (forget slots, retain slots); populated for selective/personalized
    std::map<int, std::pair<std::vector<std::string>, std::vector<std::string>>> subject_pairing;
};

struct SplitParams {
    double ratio = 0.30;   // complete
    int n_agents = 3;      // personalized
};

SplitSpec make_split(const World& w, const std::vector<Sample>& samples, Setting setting,
                     const SplitParams& params, std::uint64_t seed);

struct FilterResult {
    std::vector<Sample> kept;
    std::vector<std::pair<int, double>> dropped;  // (sample id, token-F1)
};

FilterResult filter_memorized(const ModelState& m, const std::vector<Sample>& samples,
                              double threshold = 0.5);

}  // namespace unlab
