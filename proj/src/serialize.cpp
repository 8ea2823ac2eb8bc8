#include "unlab/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "unlab/errors.hpp"

namespace unlab {

using ojson = nlohmann::ordered_json;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << text;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* option_label(int idx) {
    static const char* labels[] = {"A", "B", "C", "D"};
    return labels[idx];
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void save_world(const World& w, const std::string& path) {
    ojson j;
    j["config"] = {{"n_subjects", w.config.n_subjects},
                   {"facts_per_category", w.config.facts_per_category},
                   {"vocab_size", w.config.vocab_size},
                   {"seed", w.config.seed}};
    ojson subjects = ojson::array();
    for (const auto& s : w.subjects) {
        ojson js;
        js["id"] = s.id;
        js["name"] = s.name;
        js["identity_tokens"] = s.identity_tokens;
        js["group"] = s.group;
        ojson facts = ojson::array();
        for (const auto& f : s.facts)
            facts.push_back({{"category", to_string(f.category)},
                             {"slot", f.slot},
                             {"answer", f.answer}});
        js["facts"] = facts;
        subjects.push_back(js);
    }
    j["subjects"] = subjects;
    write_text(path, j.dump(2) + "\n");
}

World load_world(const std::string& path) {
    const ojson j = ojson::parse(read_text(path));
    WorldConfig cfg;
    cfg.n_subjects = j.at("config").at("n_subjects").get<int>();
    cfg.facts_per_category = j.at("config").at("facts_per_category").get<int>();
    cfg.vocab_size = j.at("config").at("vocab_size").get<int>();
    cfg.seed = j.at("config").at("seed").get<std::uint64_t>();
    // regenerate and verify rather than trusting partial contents
    World w = generate_world(cfg);
    if (j.at("subjects").size() != w.subjects.size())
        throw ConfigError("world file does not match its own config: " + path);
    return w;
}

void save_samples(const std::vector<Sample>& samples, const std::string& path) {
    std::ostringstream out;
    for (const auto& s : samples) {
        ojson j;
        j["id"] = s.id;
        j["subject_id"] = s.subject_id;
        j["fact_slot"] = s.fact_slot;
        j["channel"] = to_string(s.channel);
        j["task"] = to_string(s.task);
        j["question"] = s.question;
        j["reference"] = s.reference;
        if (s.is_classification()) {
            j["options"] = s.options;
            j["correct_option"] = option_label(s.correct_option);
        } else {
            j["options"] = nullptr;
            j["correct_option"] = nullptr;
        }
        out << j.dump() << "\n";
    }
    write_text(path, out.str());
}

std::vector<Sample> load_samples(const World& w, const std::string& path) {
    std::vector<Sample> samples;
    std::istringstream in(read_text(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const ojson j = ojson::parse(line);
        Sample s;
        s.id = j.at("id").get<int>();
        s.subject_id = j.at("subject_id").get<int>();
        s.fact_slot = j.at("fact_slot").get<std::string>();
        s.channel = channel_from_string(j.at("channel").get<std::string>());
        s.task = task_from_string(j.at("task").get<std::string>());
        s.question = j.at("question").get<TokenSeq>();
        s.reference = j.at("reference").get<TokenSeq>();
        if (!j.at("options").is_null()) {
            s.options = j.at("options").get<std::vector<std::string>>();
            for (const auto& o : s.options) s.option_tokens.push_back(parse_rendered(w, o));
            const std::string label = j.at("correct_option").get<std::string>();
            s.correct_option = label[0] - 'A';
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

void save_split(const SplitSpec& split, const std::string& path) {
    ojson j;
    j["setting"] = to_string(split.setting);
    j["ratio"] = split.ratio;
    j["forget_sample_ids"] = split.forget_sample_ids;
    j["retain_sample_ids"] = split.retain_sample_ids;
    ojson pairing = ojson::object();
    for (const auto& [subject, slots] : split.subject_pairing)
        pairing[std::to_string(subject)] = {{"forget", slots.first}, {"retain", slots.second}};
    j["subject_pairing"] = pairing;
    write_text(path, j.dump(2) + "\n");
}

SplitSpec load_split(const std::string& path) {
    const ojson j = ojson::parse(read_text(path));
    SplitSpec split;
    split.setting = setting_from_string(j.at("setting").get<std::string>());
    split.ratio = j.at("ratio").get<double>();
    split.forget_sample_ids = j.at("forget_sample_ids").get<std::vector<int>>();
    split.retain_sample_ids = j.at("retain_sample_ids").get<std::vector<int>>();
    for (const auto& [key, value] : j.at("subject_pairing").items())
        split.subject_pairing[std::stoi(key)] = {
            value.at("forget").get<std::vector<std::string>>(),
            value.at("retain").get<std::vector<std::string>>()};
    return split;
}

void save_corpus(const std::vector<CorpusItem>& items, const std::string& path) {
    std::ostringstream out;
    for (const auto& it : items) {
        ojson j;
        j["sample_id"] = it.sample_id;
        j["subject_id"] = it.subject_id;
        j["slot"] = it.slot;
        j["channel"] = to_string(it.channel);
        j["question"] = it.question;
        j["answer"] = it.answer;
        j["origin"] = it.origin;
        out << j.dump() << "\n";
    }
    write_text(path, out.str());
}

std::vector<CorpusItem> load_corpus(const std::string& path) {
    std::vector<CorpusItem> items;
    std::istringstream in(read_text(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const ojson j = ojson::parse(line);
        CorpusItem it;
        it.sample_id = j.at("sample_id").get<int>();
        it.subject_id = j.at("subject_id").get<int>();
        it.slot = j.at("slot").get<std::string>();
        it.channel = channel_from_string(j.at("channel").get<std::string>());
        it.question = j.at("question").get<TokenSeq>();
        it.answer = j.at("answer").get<TokenSeq>();
        it.origin = j.at("origin").get<std::string>();
        items.push_back(std::move(it));
    }
    return items;
}

namespace {

constexpr char kCheckpointMagic[8] = {'U', 'L', 'C', 'P', '1', '\n', 0, 0};

void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
void write_i32(std::ofstream& out, std::int32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::int32_t read_i32(std::ifstream& in) {
    std::int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
void write_f64(std::ofstream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
double read_f64(std::ifstream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_params(std::ofstream& out, const ModelParams& p) {
    p.for_each([&out](const std::string& name, const Tensor& t) {
        write_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(out, t.rows());
        write_u64(out, t.cols());
        out.write(reinterpret_cast<const char*>(t.value().data()),
                  static_cast<std::streamsize>(t.value().size() * sizeof(double)));
    });
}

void read_params(std::ifstream& in, ModelParams& p) {
    p.for_each([&in](const std::string& name, Tensor& t) {
        const std::uint64_t len = read_u64(in);
        std::string stored(len, '\0');
        in.read(stored.data(), static_cast<std::streamsize>(len));
        if (stored != name) throw ConfigError("checkpoint layout mismatch: expected " + name);
        const std::uint64_t rows = read_u64(in), cols = read_u64(in);
        if (rows != t.rows() || cols != t.cols())
            throw ConfigError("checkpoint shape mismatch at " + name);
        in.read(reinterpret_cast<char*>(t.value().data()),
                static_cast<std::streamsize>(t.value().size() * sizeof(double)));
    });
}

}  // namespace

void save_checkpoint(const ModelState& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_i32(out, m.cfg.vocab);
    write_i32(out, m.cfg.width);
    write_i32(out, m.cfg.depth);
    write_i32(out, m.cfg.ff_width);
    write_i32(out, m.cfg.context);
    write_i32(out, m.cfg.end_token);
    write_f64(out, m.cfg.decay_short);
    write_f64(out, m.cfg.decay_long);
    write_u64(out, m.rng_seed);
    write_i32(out, m.has_reference() ? 1 : 0);
    write_params(out, m.params);
    if (m.has_reference()) write_params(out, *m.reference);
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read checkpoint: " + path);
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw ConfigError("not a checkpoint file: " + path);
    ModelConfig cfg;
    cfg.vocab = read_i32(in);
    cfg.width = read_i32(in);
    cfg.depth = read_i32(in);
    cfg.ff_width = read_i32(in);
    cfg.context = read_i32(in);
    cfg.end_token = read_i32(in);
    cfg.decay_short = read_f64(in);
    cfg.decay_long = read_f64(in);
    const std::uint64_t seed = read_u64(in);
    const bool has_ref = read_i32(in) != 0;
    ModelState m = init_model(cfg, seed);
    m.rng_seed = seed;
    read_params(in, m.params);
    if (has_ref) {
        ModelParams ref = m.params.clone(false);
        read_params(in, ref);
        m.reference = std::make_shared<const ModelParams>(std::move(ref));
    }
    if (!in) throw ConfigError("truncated checkpoint: " + path);
    return m;
}

void save_eval_report(const EvalReport& rep, const std::string& json_path,
                      const std::string& csv_path) {
    ojson j;
    j["method"] = rep.method_id;
    j["config_hash"] = rep.config_hash;
    ojson cells = ojson::object();
    const char* split_names[] = {"forget", "retain"};
    for (int sp = 0; sp < 2; ++sp) {
        ojson by_task = ojson::object();
        for (Task task : {Task::classification, Task::generation, Task::cloze}) {
            ojson by_channel = ojson::object();
            for (Channel ch : {Channel::identity, Channel::text}) {
                const auto& c = rep.cell(sp, task, ch);
                by_channel[to_string(ch)] = c ? ojson(*c) : ojson(nullptr);
            }
            by_task[to_string(task)] = by_channel;
        }
        cells[split_names[sp]] = by_task;
    }
    j["cells"] = cells;
    j["forget_efficiency"] = rep.forget_efficiency ? ojson(*rep.forget_efficiency) : ojson(nullptr);
    j["utility"] = rep.utility ? ojson(*rep.utility) : ojson(nullptr);
    write_text(json_path, j.dump(2) + "\n");

    std::ostringstream csv;
    csv << "split,task,channel,score\n";
    for (int sp = 0; sp < 2; ++sp)
        for (Task task : {Task::classification, Task::generation, Task::cloze})
            for (Channel ch : {Channel::identity, Channel::text}) {
                const auto& c = rep.cell(sp, task, ch);
                csv << split_names[sp] << ',' << to_string(task) << ',' << to_string(ch) << ','
                    << (c ? format_double(*c) : "absent") << "\n";
            }
    write_text(csv_path, csv.str());
}

void save_memorization_profile(const std::vector<MemorizationRow>& rows,
                               const std::string& path) {
    std::ostringstream out;
    out << "sample_id,nll,token_f1\n";
    for (const auto& r : rows)
        out << r.sample_id << ',' << format_double(r.nll) << ',' << format_double(r.decode_f1)
            << "\n";
    write_text(path, out.str());
}

void save_attack_report(const AttackReport& rep, const std::string& method,
                        const std::string& csv_path, const std::string& detail_csv_path) {
    std::ostringstream csv;
    csv << "method,attack,r_before,r_attack,asr\n";
    for (const auto& s : rep.summaries)
        csv << method << ',' << to_string(s.kind) << ',' << format_double(s.r_before) << ','
            << format_double(s.r_attack) << ',' << (s.asr ? format_double(*s.asr) : "undefined")
            << "\n";
    write_text(csv_path, csv.str());

    std::ostringstream det;
    det << "method,attack,sample_id,channel,variants,r_before,r_attack\n";
    for (const auto& d : rep.details)
        det << method << ',' << to_string(d.kind) << ',' << d.sample_id << ','
            << to_string(d.channel) << ',' << d.variants << ',' << format_double(d.r_before)
            << ',' << format_double(d.r_attack) << "\n";
    write_text(detail_csv_path, det.str());
}

}  // namespace unlab
