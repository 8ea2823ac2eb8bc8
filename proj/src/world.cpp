#include "unlab/world.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "unlab/errors.hpp"
#include "unlab/metrics.hpp"

namespace unlab {

const char* to_string(Category c) {
    switch (c) {
        case Category::basic: return "basic";
        case Category::normal: return "normal";
        default: return "sensitive";
    }
}
const char* to_string(Channel c) { return c == Channel::identity ? "identity" : "text"; }
const char* to_string(Task t) {
    switch (t) {
        case Task::generation: return "generation";
        case Task::classification: return "classification";
        default: return "cloze";
    }
}
const char* to_string(Setting s) {
    switch (s) {
        case Setting::complete: return "complete";
        case Setting::selective: return "selective";
        default: return "personalized";
    }
}

Category category_from_string(const std::string& s) {
    if (s == "basic") return Category::basic;
    if (s == "normal") return Category::normal;
    if (s == "sensitive") return Category::sensitive;
    throw ConfigError("unknown category: " + s);
}
Channel channel_from_string(const std::string& s) {
    if (s == "identity") return Channel::identity;
    if (s == "text") return Channel::text;
    throw ConfigError("unknown channel: " + s);
}
Task task_from_string(const std::string& s) {
    if (s == "generation") return Task::generation;
    if (s == "classification") return Task::classification;
    if (s == "cloze") return Task::cloze;
    throw ConfigError("unknown task: " + s);
}
Setting setting_from_string(const std::string& s) {
    if (s == "complete") return Setting::complete;
    if (s == "selective") return Setting::selective;
    if (s == "personalized") return Setting::personalized;
    throw ConfigError("unknown setting: " + s);
}

const Fact* Subject::find_fact(const std::string& slot) const {
    for (const auto& f : facts)
        if (f.slot == slot) return &f;
    return nullptr;
}

const Subject& World::subject(int id) const {
    for (const auto& s : subjects)
        if (s.id == id) return s;
    throw std::invalid_argument("unknown subject id: " + std::to_string(id));
}

std::size_t World::fact_count() const {
    std::size_t n = 0;
    for (const auto& s : subjects) n += s.facts.size();
    return n;
}

namespace {

constexpr int kTemplatePool = 24;
constexpr int kFillerPool = 32;
constexpr int kMinAnswerPool = 64;

VocabLayout compute_layout(const WorldConfig& cfg) {
    VocabLayout lay;
    lay.vocab_size = cfg.vocab_size;
    int cursor = SpecialTokens::count;
    const int n_slots = 3 * cfg.facts_per_category;
    lay.identity_begin = cursor;
    lay.identity_end = cursor += 4 * cfg.n_subjects;
    lay.name_begin = cursor;
    lay.name_end = cursor += 2 * cfg.n_subjects;
    lay.slot_begin = cursor;
    lay.slot_end = cursor += n_slots;
    lay.decl_begin = cursor;
    lay.decl_end = cursor += n_slots;
    lay.marker_begin = cursor;
    lay.marker_end = cursor += 2;
    lay.template_begin = cursor;
    lay.template_end = cursor += kTemplatePool;
    lay.filler_begin = cursor;
    lay.filler_end = cursor += kFillerPool;
    lay.answer_begin = cursor;
    lay.answer_end = cfg.vocab_size;
    if (lay.answer_end - lay.answer_begin < kMinAnswerPool) {
        std::ostringstream msg;
        msg << "vocab_size " << cfg.vocab_size << " too small: " << cfg.n_subjects
            << " subjects need " << 4 * cfg.n_subjects << " identity tokens and "
            << 2 * cfg.n_subjects << " name tokens; minimum vocab is "
            << lay.answer_begin + kMinAnswerPool;
        throw ConfigError(msg.str());
    }
    return lay;
}

int slot_index(const World& w, const Fact& f) {
    // slots share one topic token per (category, k) across subjects
    int k = f.slot.back() - '0';
    return static_cast<int>(f.category) * w.config.facts_per_category + k;
}

}  // namespace

World generate_world(const WorldConfig& config) {
    if (config.n_subjects < 2) throw ConfigError("generate_world: n_subjects must be >= 2");
    if (config.facts_per_category < 3)
        throw ConfigError("generate_world: facts_per_category must be >= 3");

    World w;
    w.config = config;
    w.layout = compute_layout(config);

    Rng rng(derive_seed(config.seed, "world"));
    const int answers = w.layout.answer_end - w.layout.answer_begin;
    // per-slot used answers, so classification distractors are never the correct answer
    std::map<std::string, std::set<TokenSeq>> used_per_slot;

    for (int i = 0; i < config.n_subjects; ++i) {
        Subject s;
        s.id = i;
        s.name = {w.layout.name_begin + 2 * i, w.layout.name_begin + 2 * i + 1};
        for (int k = 0; k < 4; ++k) s.identity_tokens[static_cast<std::size_t>(k)] =
            w.layout.identity_begin + 4 * i + k;
        s.group = static_cast<int>(rng.next_below(8));
        for (Category cat : {Category::basic, Category::normal, Category::sensitive}) {
            for (int k = 0; k < config.facts_per_category; ++k) {
                Fact f;
                f.subject_id = i;
                f.category = cat;
                f.slot = std::string(to_string(cat)) + std::to_string(k);
                auto& used = used_per_slot[f.slot];
                for (int attempt = 0; attempt < 64; ++attempt) {
                    const int len = rng.next_int(1, 4);
                    TokenSeq ans(static_cast<std::size_t>(len));
                    for (int& t : ans)
                        t = w.layout.answer_begin + static_cast<int>(rng.next_below(
                                static_cast<std::uint64_t>(answers)));
                    if (!used.count(ans)) {
                        used.insert(ans);
                        f.answer = std::move(ans);
                        break;
                    }
                }
                if (f.answer.empty())
                    throw GenerationError("could not draw a unique answer for slot " + f.slot);
                s.facts.push_back(std::move(f));
            }
        }
        w.subjects.push_back(std::move(s));
    }
    return w;
}

TokenSeq subject_reference_tokens(const Subject& s, Channel channel) {
    if (channel == Channel::identity) return {s.identity_tokens[0]};
    return s.name;
}

TokenSeq make_question(const World& w, const Subject& s, const Fact& f, Task task, Channel channel,
                       int variant) {
    if (variant < 0 || variant >= kTemplateVariants)
        throw std::invalid_argument("make_question: variant out of range");
    const auto& lay = w.layout;
    const int slot_tok = lay.slot_begin + slot_index(w, f);
    const int decl_tok = lay.decl_begin + slot_index(w, f);
    TokenSeq q = subject_reference_tokens(s, channel);
    switch (task) {
        case Task::generation:
            q.push_back(lay.template_begin + 2 * variant);
            q.push_back(slot_tok);
            q.push_back(lay.template_begin + 2 * variant + 1);
            q.push_back(lay.ask_token());
            break;
        case Task::cloze:
            q.push_back(decl_tok);
            q.push_back(lay.template_begin + 8 + variant);
            q.push_back(SpecialTokens::blank);
            break;
        case Task::classification:
            q.push_back(lay.template_begin + 12 + 2 * variant);
            q.push_back(slot_tok);
            q.push_back(lay.template_begin + 12 + 2 * variant + 1);
            q.push_back(lay.choose_token());
            break;
    }
    return q;
}

std::string render_token(const World& w, int token) {
    const auto& lay = w.layout;
    switch (token) {
        case SpecialTokens::pad: return "<pad>";
        case SpecialTokens::end_of_answer: return "<eoa>";
        case SpecialTokens::blank: return "___";
        case SpecialTokens::abstain: return "None of the above";
        default: break;
    }
    if (token >= lay.identity_begin && token < lay.identity_end) {
        const int off = token - lay.identity_begin;
        return "@s" + std::to_string(off / 4) + "_v" + std::to_string(off % 4);
    }
    if (token >= lay.name_begin && token < lay.name_end) {
        const int off = token - lay.name_begin;
        return "nm" + std::to_string(off / 2) + (off % 2 ? "b" : "a");
    }
    if (token >= lay.slot_begin && token < lay.slot_end)
        return "slot" + std::to_string(token - lay.slot_begin);
    if (token >= lay.decl_begin && token < lay.decl_end)
        return "decl" + std::to_string(token - lay.decl_begin);
    if (token == lay.ask_token()) return "<ask>";
    if (token == lay.choose_token()) return "<choose>";
    if (token >= lay.template_begin && token < lay.template_end)
        return "t" + std::to_string(token - lay.template_begin);
    if (token >= lay.filler_begin && token < lay.filler_end)
        return "f" + std::to_string(token - lay.filler_begin);
    if (token >= lay.answer_begin && token < lay.answer_end)
        return "a" + std::to_string(token - lay.answer_begin);
    return "w" + std::to_string(token);
}

std::string render_tokens(const World& w, const TokenSeq& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += render_token(w, tokens[i]);
    }
    return out;
}

TokenSeq parse_rendered(const World& w, const std::string& text) {
    if (text == "None of the above") return {SpecialTokens::abstain};
    const auto& lay = w.layout;
    TokenSeq out;
    std::istringstream ss(text);
    std::string word;
    while (ss >> word) {
        if (word == "<pad>") { out.push_back(SpecialTokens::pad); continue; }
        if (word == "<eoa>") { out.push_back(SpecialTokens::end_of_answer); continue; }
        if (word == "___") { out.push_back(SpecialTokens::blank); continue; }
        if (word == "<ask>") { out.push_back(lay.ask_token()); continue; }
        if (word == "<choose>") { out.push_back(lay.choose_token()); continue; }
        auto tail_num = [&word](std::size_t at) { return std::stoi(word.substr(at)); };
        if (word.rfind("@s", 0) == 0) {
            const auto us = word.find("_v");
            const int subj = std::stoi(word.substr(2, us - 2));
            const int view = std::stoi(word.substr(us + 2));
            out.push_back(lay.identity_begin + 4 * subj + view);
        } else if (word.rfind("nm", 0) == 0) {
            const int subj = std::stoi(word.substr(2, word.size() - 3));
            out.push_back(lay.name_begin + 2 * subj + (word.back() == 'b' ? 1 : 0));
        } else if (word.rfind("slot", 0) == 0) {
            out.push_back(lay.slot_begin + tail_num(4));
        } else if (word.rfind("decl", 0) == 0) {
            out.push_back(lay.decl_begin + tail_num(4));
        } else if (word[0] == 't') {
            out.push_back(lay.template_begin + tail_num(1));
        } else if (word[0] == 'f') {
            out.push_back(lay.filler_begin + tail_num(1));
        } else if (word[0] == 'a') {
            out.push_back(lay.answer_begin + tail_num(1));
        } else if (word[0] == 'w') {
            out.push_back(tail_num(1));
        } else {
            throw ConfigError("cannot parse token: " + word);
        }
    }
    return out;
}

std::vector<Sample> build_samples(const World& w) {
    std::vector<Sample> out;
    int next_id = 0;
    for (const auto& s : w.subjects) {
        for (const auto& f : s.facts) {
            // full-sentence generation reference: declarative marker + answer span
            TokenSeq gen_ref = {w.layout.decl_begin + slot_index(w, f)};
            gen_ref.insert(gen_ref.end(), f.answer.begin(), f.answer.end());

            for (Task task : {Task::generation, Task::classification, Task::cloze}) {
                for (Channel channel : {Channel::identity, Channel::text}) {
                    Sample smp;
                    smp.id = next_id++;
                    smp.subject_id = s.id;
                    smp.fact_slot = f.slot;
                    smp.channel = channel;
                    smp.task = task;
                    smp.question = make_question(w, s, f, task, channel, 0);
                    smp.reference = task == Task::generation ? gen_ref : f.answer;
                    if (task == Task::classification) {
                        Rng orng(derive_seed(w.config.seed,
                                             "options-" + std::to_string(s.id) + "-" + f.slot +
                                                 "-" + to_string(channel)));
                        const int n = w.config.n_subjects;
                        std::vector<TokenSeq> opts;
                        opts.push_back(f.answer);
                        for (int k = 1; k <= 2; ++k) {
                            const auto& other = w.subjects[static_cast<std::size_t>((s.id + k) % n)];
                            const Fact* of = other.find_fact(f.slot);
                            if (of && of->answer != f.answer) {
                                opts.push_back(of->answer);
                            } else {
                                TokenSeq alt = {w.layout.answer_begin +
                                                static_cast<int>(orng.next_below(
                                                    static_cast<std::uint64_t>(
                                                        w.layout.answer_end -
                                                        w.layout.answer_begin)))};
                                opts.push_back(alt);
                            }
                        }
                        opts.push_back({SpecialTokens::abstain});
                        std::vector<int> order = {0, 1, 2, 3};
                        orng.shuffle(order);
                        for (int pos = 0; pos < 4; ++pos) {
                            const auto& ot = opts[static_cast<std::size_t>(order[pos])];
                            smp.option_tokens.push_back(ot);
                            smp.options.push_back(render_tokens(w, ot));
                            if (order[pos] == 0) smp.correct_option = pos;
                        }
                    }
                    out.push_back(std::move(smp));
                }
            }
        }
    }
    return out;
}

std::map<int, std::vector<std::string>> select_personalized(const World& w, int n_agents,
                                                            std::uint64_t seed) {
    if (n_agents < 3 || n_agents % 2 == 0)
        throw ConfigError("select_personalized: n_agents must be odd and >= 3");
    const int majority = n_agents / 2 + 1;
    std::map<int, std::vector<std::string>> forget;

    for (const auto& s : w.subjects) {
        Rng rng(derive_seed(seed, "persona-subject-" + std::to_string(s.id)));
        bool ok = false;
        for (int attempt = 0; attempt < 32 && !ok; ++attempt) {
            std::vector<std::string> selected;
            // each agent: category sensitivity weights plus a slot-keyword affinity,
            // thresholded per subject
            std::vector<double> thresholds(static_cast<std::size_t>(n_agents));
            for (double& t : thresholds) t = 0.35 + 0.45 * rng.next_double();
            for (const auto& f : s.facts) {
                int votes = 0;
                for (int a = 0; a < n_agents; ++a) {
                    std::uint64_t h = derive_seed(seed, "agent-" + std::to_string(a) + "-bias");
                    Rng agent_bias(h);
                    const double jitter = 0.3 * agent_bias.next_double() - 0.15;
                    double weight = 0.0;
                    switch (f.category) {
                        case Category::sensitive: weight = 0.75; break;
                        case Category::normal: weight = 0.40; break;
                        case Category::basic: weight = 0.12; break;
                    }
                    std::uint64_t kh = derive_seed(
                        seed, "agent-" + std::to_string(a) + "-slot-" + f.slot);
                    Rng kw(kh);
                    const double affinity = 0.35 * kw.next_double();
                    if (weight + jitter + affinity > thresholds[static_cast<std::size_t>(a)])
                        ++votes;
                }
                if (votes >= majority) selected.push_back(f.slot);
            }
            if (!selected.empty() && selected.size() < s.facts.size()) {
                forget[s.id] = std::move(selected);
                ok = true;
            }
        }
        if (!ok)
            throw GenerationError("select_personalized: retry bound exceeded for subject " +
                                  std::to_string(s.id));
    }
    return forget;
}

SplitSpec make_split(const World& w, const std::vector<Sample>& samples, Setting setting,
                     const SplitParams& params, std::uint64_t seed) {
    SplitSpec spec;
    spec.setting = setting;

    auto push_split = [&](const auto& is_forget) {
        for (const auto& smp : samples) {
            if (is_forget(smp))
                spec.forget_sample_ids.push_back(smp.id);
            else
                spec.retain_sample_ids.push_back(smp.id);
        }
    };

    switch (setting) {
        case Setting::complete: {
            const double r = params.ratio;
            if (r != 0.05 && r != 0.15 && r != 0.30)
                throw ConfigError("complete setting requires ratio in {0.05, 0.15, 0.30}");
            spec.ratio = r;
            const int n = w.config.n_subjects;
            int k = static_cast<int>(std::llround(r * n));
            k = std::max(1, std::min(k, n - 1));
            std::vector<int> ids(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
            Rng rng(derive_seed(seed, "split-complete"));
            rng.shuffle(ids);
            std::set<int> forget_subjects(ids.begin(), ids.begin() + k);
            push_split([&](const Sample& s) { return forget_subjects.count(s.subject_id) > 0; });
            break;
        }
        case Setting::selective: {
            push_split([&](const Sample& s) {
                const Fact* f = w.subject(s.subject_id).find_fact(s.fact_slot);
                return f && f->category == Category::sensitive;
            });
            for (const auto& s : w.subjects) {
                auto& pairing = spec.subject_pairing[s.id];
                for (const auto& f : s.facts)
                    (f.category == Category::sensitive ? pairing.first : pairing.second)
                        .push_back(f.slot);
            }
            break;
        }
        case Setting::personalized: {
            auto voted = select_personalized(w, params.n_agents, seed);
            push_split([&](const Sample& s) {
                const auto it = voted.find(s.subject_id);
                if (it == voted.end()) return false;
                return std::find(it->second.begin(), it->second.end(), s.fact_slot) !=
                       it->second.end();
            });
            for (const auto& s : w.subjects) {
                auto& pairing = spec.subject_pairing[s.id];
                const auto& fs = voted[s.id];
                for (const auto& f : s.facts)
                    (std::find(fs.begin(), fs.end(), f.slot) != fs.end() ? pairing.first
                                                                         : pairing.second)
                        .push_back(f.slot);
            }
            break;
        }
    }
    return spec;
}

FilterResult filter_memorized(const ModelState& m, const std::vector<Sample>& samples,
                              double threshold) {
    if (threshold < 0.0 || threshold > 1.0)
        throw ConfigError("filter_memorized: threshold must be in [0, 1]");
    FilterResult res;
    for (const auto& smp : samples) {
        const TokenSeq decoded =
            greedy_decode(m, smp.question, static_cast<int>(smp.reference.size()) + 4);
        const double f1 = token_f1(smp.reference, decoded);
        if (f1 >= threshold)
            res.kept.push_back(smp);
        else
            res.dropped.emplace_back(smp.id, f1);
    }
    return res;
}

}  // namespace unlab
