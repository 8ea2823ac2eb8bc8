#include "unlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "unlab/errors.hpp"
#include "unlab/svg.hpp"

namespace unlab {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

RunConfig RunConfig::defaults() { return RunConfig{}; }

RunConfig RunConfig::from_file(const std::string& path) {
    KvConfig kv = KvConfig::from_file(path);
    RunConfig cfg;
    cfg.load_kv(kv);
    kv.reject_unknown();
    cfg.finalize();
    return cfg;
}

void RunConfig::load_kv(KvConfig& kv) {
    world.n_subjects = kv.get_int("world.n_subjects", world.n_subjects);
    world.facts_per_category = kv.get_int("world.facts_per_category", world.facts_per_category);
    world.vocab_size = kv.get_int("world.vocab_size", world.vocab_size);

    model.width = kv.get_int("model.width", model.width);
    model.depth = kv.get_int("model.depth", model.depth);
    model.ff_width = kv.get_int("model.ff_width", model.ff_width);
    model.context = kv.get_int("model.context", model.context);

    pretrain.target_f1 = kv.get_double("pretrain.target_f1", pretrain.target_f1);
    pretrain.lr = kv.get_double("pretrain.lr", pretrain.lr);
    pretrain.max_epochs = kv.get_int("pretrain.max_epochs", pretrain.max_epochs);
    pretrain.batch_size = kv.get_int("pretrain.batch_size", pretrain.batch_size);
    pretrain.probe_every = kv.get_int("pretrain.probe_every", pretrain.probe_every);
    pretrain.prefix_prob = kv.get_double("pretrain.prefix_prob", pretrain.prefix_prob);

    setting = setting_from_string(kv.get_string("setting", to_string(setting)));
    split_params.ratio = kv.get_double("ratio", split_params.ratio);
    split_params.n_agents = kv.get_int("agents", split_params.n_agents);
    filter_threshold = kv.get_double("filter.threshold", filter_threshold);

    unlearn.method = method_from_string(kv.get_string("unlearn.method", to_string(unlearn.method)));
    unlearn.lambda_utility = kv.get_double("unlearn.lambda_utility", unlearn.lambda_utility);
    unlearn.beta_gd = kv.get_double("unlearn.beta_gd", unlearn.beta_gd);
    unlearn.gamma_kl = kv.get_double("unlearn.gamma_kl", unlearn.gamma_kl);
    unlearn.beta_npo = kv.get_double("unlearn.beta_npo", unlearn.beta_npo);
    unlearn.margin = kv.get_double("unlearn.margin", unlearn.margin);
    unlearn.lambda_f = kv.get_double("unlearn.lambda_f", unlearn.lambda_f);
    unlearn.lambda_r = kv.get_double("unlearn.lambda_r", unlearn.lambda_r);
    unlearn.lambda_b = kv.get_double("unlearn.lambda_b", unlearn.lambda_b);
    unlearn.prune_alpha = kv.get_double("unlearn.prune_alpha", unlearn.prune_alpha);
    unlearn.epsilon = kv.get_double("unlearn.epsilon", unlearn.epsilon);
    unlearn.mask_ratio = kv.get_double("unlearn.mask_ratio", unlearn.mask_ratio);
    if (kv.has("unlearn.lr")) lr_explicit = true;
    if (kv.has("unlearn.epochs")) epochs_explicit = true;
    if (kv.has("unlearn.beta_gd")) beta_explicit = true;
    if (kv.has("unlearn.gamma_kl")) gamma_explicit = true;
    if (kv.has("unlearn.beta_npo")) beta_npo_explicit = true;
    if (kv.has("unlearn.mask_ratio")) mask_ratio_explicit = true;
    unlearn.lr = kv.get_double("unlearn.lr", unlearn.lr);
    unlearn.epochs = kv.get_int("unlearn.epochs", unlearn.epochs);
    unlearn.batch_size = kv.get_int("unlearn.batch_size", unlearn.batch_size);

    const std::string kinds = kv.get_string("attack.kinds",
                                            "cross_identity,random_prefix,paraphrase,jailbreak");
    attack_kinds.clear();
    std::istringstream ks(kinds);
    std::string kind;
    while (std::getline(ks, kind, ','))
        if (!kind.empty()) attack_kinds.push_back(attack_kind_from_string(kind));
    attack_variants = kv.get_int("attack.n_variants", attack_variants);

    master_seed = kv.get_u64("seed", master_seed);
    out_dir = kv.get_string("out", out_dir);
}

void RunConfig::finalize() {
    // toy-scale settings tuned once against the default world and frozen;
    // collapse-avoidance shapes the choices (GA gets the smallest budget)
    struct MethodDefault {
        double lr;
        int epochs;
        double beta_gd;
        double gamma_kl;
        double beta_npo;
        double mask_ratio;
    };
    static const std::map<Method, MethodDefault> defaults = {
        {Method::ga, {0.005, 1, 1.0, 20.0, 0.5, 0.25}},
        {Method::ga_diff, {0.005, 2, 4.0, 20.0, 0.5, 0.25}},
        {Method::kl_min, {0.002, 4, 1.0, 20.0, 0.5, 0.25}},
        {Method::npo, {0.003, 3, 1.0, 20.0, 0.5, 0.25}},
        {Method::mmu, {0.005, 2, 1.0, 20.0, 0.5, 0.25}},
        {Method::manu, {0.1, 1, 1.0, 20.0, 0.5, 0.25}},
        {Method::bao_ga_diff, {0.0045, 5, 6.0, 20.0, 0.5, 0.25}},
        {Method::bao_mmu, {0.0015, 4, 1.0, 20.0, 0.5, 0.25}},
    };
    const auto& d = defaults.at(unlearn.method);
    if (!lr_explicit) unlearn.lr = d.lr;
    if (!epochs_explicit) unlearn.epochs = d.epochs;
    if (!beta_explicit) unlearn.beta_gd = d.beta_gd;
    if (!gamma_explicit) unlearn.gamma_kl = d.gamma_kl;
    if (!beta_npo_explicit) unlearn.beta_npo = d.beta_npo;
    if (!mask_ratio_explicit) unlearn.mask_ratio = d.mask_ratio;
    unlearn.validate();
    if (world.vocab_size != model.vocab) model.vocab = world.vocab_size;
}

std::string RunConfig::canonical_echo() const {
    std::ostringstream s;
    s << "world.n_subjects = " << world.n_subjects << "\n";
    s << "world.facts_per_category = " << world.facts_per_category << "\n";
    s << "world.vocab_size = " << world.vocab_size << "\n";
    s << "model.width = " << model.width << "\n";
    s << "model.depth = " << model.depth << "\n";
    s << "model.ff_width = " << model.ff_width << "\n";
    s << "model.context = " << model.context << "\n";
    s << "pretrain.target_f1 = " << format_double(pretrain.target_f1) << "\n";
    s << "pretrain.lr = " << format_double(pretrain.lr) << "\n";
    s << "pretrain.max_epochs = " << pretrain.max_epochs << "\n";
    s << "pretrain.batch_size = " << pretrain.batch_size << "\n";
    s << "pretrain.probe_every = " << pretrain.probe_every << "\n";
    s << "pretrain.prefix_prob = " << format_double(pretrain.prefix_prob) << "\n";
    s << "setting = " << to_string(setting) << "\n";
    s << "ratio = " << format_double(split_params.ratio) << "\n";
    s << "agents = " << split_params.n_agents << "\n";
    s << "filter.threshold = " << format_double(filter_threshold) << "\n";
    s << "unlearn.method = " << to_string(unlearn.method) << "\n";
    s << "unlearn.lambda_utility = " << format_double(unlearn.lambda_utility) << "\n";
    s << "unlearn.beta_gd = " << format_double(unlearn.beta_gd) << "\n";
    s << "unlearn.gamma_kl = " << format_double(unlearn.gamma_kl) << "\n";
    s << "unlearn.beta_npo = " << format_double(unlearn.beta_npo) << "\n";
    s << "unlearn.margin = " << format_double(unlearn.margin) << "\n";
    s << "unlearn.lambda_f = " << format_double(unlearn.lambda_f) << "\n";
    s << "unlearn.lambda_r = " << format_double(unlearn.lambda_r) << "\n";
    s << "unlearn.lambda_b = " << format_double(unlearn.lambda_b) << "\n";
    s << "unlearn.prune_alpha = " << format_double(unlearn.prune_alpha) << "\n";
    s << "unlearn.epsilon = " << format_double(unlearn.epsilon) << "\n";
    s << "unlearn.mask_ratio = " << format_double(unlearn.mask_ratio) << "\n";
    s << "unlearn.lr = " << format_double(unlearn.lr) << "\n";
    s << "unlearn.epochs = " << unlearn.epochs << "\n";
    s << "unlearn.batch_size = " << unlearn.batch_size << "\n";
    s << "attack.kinds = ";
    for (std::size_t i = 0; i < attack_kinds.size(); ++i)
        s << (i ? "," : "") << to_string(attack_kinds[i]);
    s << "\n";
    s << "attack.n_variants = " << attack_variants << "\n";
    s << "seed = " << master_seed << "\n";
    return s.str();
}

std::string RunConfig::config_hash() const { return hash_hex(fnv1a(canonical_echo())); }

DerivedSeeds DerivedSeeds::from_master(std::uint64_t master) {
    return DerivedSeeds{derive_seed(master, "world"),   derive_seed(master, "model"),
                        derive_seed(master, "pretrain"), derive_seed(master, "split"),
                        derive_seed(master, "unlearn"), derive_seed(master, "attacks")};
}

namespace {

TokenSeq with_filler_prefix(const Sample& s, const TokenSeq& question, const TokenSeq& prefix) {
    TokenSeq q;
    if (s.channel == Channel::identity) {
        q.push_back(question.at(0));
        q.insert(q.end(), prefix.begin(), prefix.end());
        q.insert(q.end(), question.begin() + 1, question.end());
    } else {
        q = prefix;
        q.insert(q.end(), question.begin(), question.end());
    }
    return q;
}

ParamVec params_snapshot(const ModelParams& p) {
    ParamVec v;
    p.for_each([&v](const std::string&, const Tensor& t) { v.slots.push_back(t.value()); });
    return v;
}

double param_drift(const ModelParams& p, const ParamVec& start) {
    double s = 0.0;
    std::size_t idx = 0;
    p.for_each([&](const std::string&, const Tensor& t) {
        const auto& ref = start.slots[idx++];
        for (std::size_t j = 0; j < ref.size(); ++j) {
            const double d = t.value()[j] - ref[j];
            s += d * d;
        }
    });
    return std::sqrt(s);
}

}  // namespace

ModelState pretrain(const World& w, const std::vector<Sample>& samples, const ModelConfig& mcfg,
                    const PretrainConfig& pcfg, std::uint64_t seed, std::ostream* log) {
    ModelConfig mc = mcfg;
    mc.vocab = w.config.vocab_size;
    ModelState m = init_model(mc, derive_seed(seed, "init"));

    // Identity tokens model the frozen image encoder: the four views of a
    // subject start near a shared base vector, stay fixed through pretraining,
    // and the aliases (views 1..3) never appear in any corpus.
    Rng views(derive_seed(seed, "identity-views"));
    const auto width = static_cast<std::size_t>(mc.width);
    for (const auto& s : w.subjects) {
        std::vector<double> base(width);
        for (double& x : base) x = 0.25 * views.next_gaussian();
        for (int k = 0; k < 4; ++k) {
            double* row = m.params.embed.value().data() +
                          static_cast<std::size_t>(s.identity_tokens[static_cast<std::size_t>(k)]) *
                              width;
            for (std::size_t j = 0; j < width; ++j) row[j] = base[j] + 0.12 * views.next_gaussian();
        }
    }
    ParamVec freeze = ParamVec::ones_like(m.params);
    for (const auto& s : w.subjects)
        for (int tok : s.identity_tokens)
            std::fill_n(freeze.slots[0].begin() + static_cast<std::size_t>(tok) * width, width,
                        0.0);

    struct TrainItem {
        const Sample* sample;
        const Subject* subject;
        const Fact* fact;
        TokenSeq target;
    };
    std::vector<TrainItem> items;
    for (const auto& s : samples) {
        const Subject& subj = w.subject(s.subject_id);
        const Fact* fact = subj.find_fact(s.fact_slot);
        if (!fact) throw GenerationError("pretrain: sample references unknown slot " + s.fact_slot);
        TokenSeq target = s.reference;
        target.push_back(SpecialTokens::end_of_answer);
        items.push_back({&s, &subj, fact, std::move(target)});
    }
    if (items.empty()) throw std::invalid_argument("pretrain: empty sample corpus");

    auto probe_f1 = [&]() {
        double sum = 0.0;
        for (const auto& it : items) {
            const TokenSeq decoded = greedy_decode(
                m, it.sample->question, static_cast<int>(it.sample->reference.size()) + 4);
            sum += token_f1(it.sample->reference, decoded);
        }
        return sum / static_cast<double>(items.size());
    };

    double f1 = 0.0;
    int epoch = 0;
    for (; epoch < pcfg.max_epochs; ++epoch) {
        Rng rng(derive_seed(seed, "pretrain-epoch-" + std::to_string(epoch)));
        std::vector<std::size_t> order(items.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(pcfg.batch_size)) {
            Batch batch;
            const std::size_t hi =
                std::min(order.size(), at + static_cast<std::size_t>(pcfg.batch_size));
            for (std::size_t i = at; i < hi; ++i) {
                const TrainItem& it = items[order[i]];
                // first epoch trains the canonical surface form; later epochs mix
                // paraphrase variants and neutral filler prefixes
                TokenSeq q;
                if (epoch == 0) {
                    q = it.sample->question;
                } else {
                    const int variant = static_cast<int>(rng.next_below(kTemplateVariants));
                    q = make_question(w, *it.subject, *it.fact, it.sample->task,
                                      it.sample->channel, variant);
                    if (rng.next_double() < pcfg.prefix_prob) {
                        const int len = rng.next_int(1, 4);
                        TokenSeq prefix;
                        for (int j = 0; j < len; ++j)
                            prefix.push_back(w.layout.filler_begin +
                                             static_cast<int>(rng.next_below(static_cast<std::uint64_t>(
                                                 w.layout.filler_end - w.layout.filler_begin))));
                        q = with_filler_prefix(*it.sample, q, prefix);
                    }
                }
                batch.push_back({std::move(q), it.target});
            }
            double lv = 0.0;
            ParamVec g = grad(
                m, [&] { return batch_mean_nll_node(m.params, m.cfg, batch); }, "pretrain", &lv);
            sgd_step(m, g, pcfg.lr, &freeze);
            epoch_loss += lv;
            ++batches;
        }
        if ((epoch + 1) % pcfg.probe_every == 0 || epoch + 1 == pcfg.max_epochs) {
            f1 = probe_f1();
            if (log)
                *log << "pretrain epoch " << epoch + 1 << " loss "
                     << format_double(epoch_loss / static_cast<double>(batches)) << " probe_f1 "
                     << format_double(f1) << "\n";
            if (f1 >= pcfg.target_f1) break;
        } else if (log) {
            *log << "pretrain epoch " << epoch + 1 << " loss "
                 << format_double(epoch_loss / static_cast<double>(batches)) << "\n";
        }
    }
    if (f1 < 0.5) {
        std::ostringstream msg;
        msg << "pretrain failed: probe token-F1 " << format_double(f1) << " after "
            << std::min(epoch + 1, pcfg.max_epochs) << " epochs (need >= 0.5; target "
            << format_double(pcfg.target_f1) << ")";
        throw GenerationError(msg.str());
    }
    m.take_reference_snapshot();
    return m;
}

UnlearnCorpus build_unlearn_corpus(const ModelState& m, const std::vector<Sample>& samples,
                                   const SplitSpec& split) {
    const std::set<int> forget_ids(split.forget_sample_ids.begin(),
                                   split.forget_sample_ids.end());
    UnlearnCorpus corpus;
    for (const auto& s : samples) {
        if (s.task != Task::generation) continue;
        const TokenSeq answer = greedy_decode(m, s.question, decode_budget(s));
        if (answer.empty()) continue;  // nothing to train on for this item
        CorpusItem item;
        item.sample_id = s.id;
        item.subject_id = s.subject_id;
        item.slot = s.fact_slot;
        item.channel = s.channel;
        item.question = s.question;
        item.answer = answer;
        item.origin = "self-generation";
        (forget_ids.count(s.id) ? corpus.forget : corpus.retain).push_back(std::move(item));
    }
    return corpus;
}

Batch to_batch(const std::vector<CorpusItem>& items) {
    Batch b;
    for (const auto& it : items) b.push_back({it.question, it.answer});
    return b;
}

std::vector<PairedBatch> paired_batches_from_corpus(const UnlearnCorpus& corpus) {
    std::map<int, PairedBatch> by_subject;
    for (const auto& it : corpus.forget) {
        by_subject[it.subject_id].subject_id = it.subject_id;
        by_subject[it.subject_id].forget_items.push_back({it.question, it.answer});
    }
    for (const auto& it : corpus.retain) {
        auto found = by_subject.find(it.subject_id);
        if (found != by_subject.end())
            found->second.retain_items.push_back({it.question, it.answer});
    }
    std::vector<PairedBatch> out;
    for (auto& [subject, pb] : by_subject) {
        (void)subject;
        if (!pb.forget_items.empty() && !pb.retain_items.empty()) out.push_back(std::move(pb));
    }
    return out;
}

MarginStats margin_satisfaction(const ModelState& m, const std::vector<Sample>& samples,
                                const SplitSpec& split, double required_gap) {
    const std::set<int> forget_ids(split.forget_sample_ids.begin(),
                                   split.forget_sample_ids.end());
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_subject;
    for (const auto& s : samples) {
        if (s.task != Task::generation) continue;
        auto& bucket = by_subject[s.subject_id];
        const double l = nll(m, s.question, s.reference);
        (forget_ids.count(s.id) ? bucket.first : bucket.second).push_back(l);
    }
    MarginStats stats;
    double gap_sum = 0.0;
    for (const auto& [subject, bucket] : by_subject) {
        (void)subject;
        for (double lf : bucket.first)
            for (double lr : bucket.second) {
                ++stats.pairs;
                gap_sum += lf - lr;
                if (lf - lr >= required_gap) ++stats.satisfied;
            }
    }
    if (stats.pairs > 0) stats.mean_gap = gap_sum / static_cast<double>(stats.pairs);
    return stats;
}

void ablate_canonical_identity(ModelState& m, const World& w,
                               const std::vector<int>& subject_ids) {
    const auto width = static_cast<std::size_t>(m.cfg.width);
    for (int id : subject_ids) {
        const Subject& s = w.subject(id);
        double* row = m.params.embed.value().data() +
                      static_cast<std::size_t>(s.identity_tokens[0]) * width;
        std::fill_n(row, width, 0.0);
    }
}

void TrainTrace::record(int step, double forget, double retain, double boundary, double kl,
                        double total, double drift) {
    rows.push_back({step, "forget", forget});
    rows.push_back({step, "retain", retain});
    rows.push_back({step, "boundary", boundary});
    rows.push_back({step, "kl", kl});
    rows.push_back({step, "total", total});
    rows.push_back({step, "drift", drift});
    steps = std::max(steps, step + 1);
}

void save_trace(const TrainTrace& trace, const std::string& path) {
    std::ostringstream out;
    out << "step,component,value\n";
    for (const auto& r : trace.rows)
        out << r.step << ',' << r.component << ',' << format_double(r.value) << "\n";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write trace: " + path);
    f << out.str();
}

namespace {

std::vector<Batch> make_minibatches(const Batch& data, int batch_size, Rng& rng) {
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<Batch> out;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
        Batch b;
        const std::size_t hi = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
        for (std::size_t i = at; i < hi; ++i) b.push_back(data[order[i]]);
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace

TrainTrace run_unlearn(ModelState& m, const UnlearnCorpus& corpus, const SplitSpec& split,
                       const UnlearnConfig& cfg, std::uint64_t seed, std::ostream* log) {
    (void)split;
    cfg.validate();
    TrainTrace trace;
    const Batch forget_all = to_batch(corpus.forget);
    const Batch retain_all = to_batch(corpus.retain);
    if (forget_all.empty()) throw std::invalid_argument("run_unlearn: empty forget corpus");
    const bool needs_retain = cfg.method != Method::ga && cfg.method != Method::npo;
    if (needs_retain && retain_all.empty())
        throw std::invalid_argument("run_unlearn: empty retain corpus");
    if (method_uses_reference(cfg.method) && !m.has_reference())
        throw std::invalid_argument("run_unlearn: method requires a reference snapshot");

    const ParamVec start = params_snapshot(m.params);

    if (cfg.method == Method::manu) {
        auto to_seqs = [](const std::vector<CorpusItem>& items) {
            std::vector<TokenSeq> seqs;
            for (const auto& it : items) {
                TokenSeq s = it.question;
                s.insert(s.end(), it.answer.begin(), it.answer.end());
                seqs.push_back(std::move(s));
            }
            return seqs;
        };
        const NeuronStats sf = collect_neuron_stats(m, to_seqs(corpus.forget));
        const NeuronStats sr = collect_neuron_stats(m, to_seqs(corpus.retain));
        const NeuronImportance imp = manu_importance(sf, sr);
        const PruneReport rep = manu_prune(m, imp, cfg.prune_alpha, cfg.epsilon);
        if (log) *log << "manu pruned " << rep.pruned.size() << " neurons\n";
        trace.record(0, loss_ga(m, forget_all), retain_all.empty() ? 0.0 : loss_ga(m, retain_all),
                     0.0, 0.0, 0.0, param_drift(m.params, start));
        return trace;
    }

    ParamVec mask;
    const bool masked = cfg.method == Method::mmu || cfg.method == Method::bao_mmu;
    if (masked) mask = mmu_mask(m, forget_all, retain_all, cfg.mask_ratio, cfg.epsilon);

    const bool paired_method = method_uses_pairs(cfg.method);
    std::vector<PairedBatch> paired;
    if (paired_method) {
        paired = paired_batches_from_corpus(corpus);
        if (paired.empty())
            throw std::invalid_argument("run_unlearn: no subject has both forget and retain items");
    }

    ModelState last_good = m.clone();
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs && !trace.aborted; ++epoch) {
        Rng rng(derive_seed(seed, "unlearn-epoch-" + std::to_string(epoch)));
        try {
            if (paired_method) {
                const double retain_weight = cfg.method == Method::bao_ga_diff ? cfg.beta_gd : 1.0;
                for (const auto& pb : paired) {
                    double fv = 0.0, rv = 0.0, bv = 0.0, total = 0.0;
                    const std::vector<PairedBatch> one = {pb};
                    if (cfg.method == Method::bao_ga_diff) {
                        Tensor f, r, b;
                        ParamVec g = grad(
                            m,
                            [&] {
                                f = batch_mean_nll_node(m.params, m.cfg, pb.forget_items);
                                r = batch_mean_nll_node(m.params, m.cfg, pb.retain_items);
                                b = boundary_loss_node(m, one, cfg.margin);
                                return weighted_sum(
                                    {f, r, b},
                                    {-cfg.lambda_f, cfg.lambda_r * retain_weight, cfg.lambda_b});
                            },
                            "bao step", &total);
                        fv = f.item();
                        rv = r.item();
                        bv = b.item();
                        sgd_step(m, g, cfg.lr);
                    } else {  // bao_mmu: masked forget-term gradient, rest unmasked
                        Tensor f;
                        ParamVec gf = grad(
                            m,
                            [&] {
                                f = batch_mean_nll_node(m.params, m.cfg, pb.forget_items);
                                return scale(f, -cfg.lambda_f);
                            },
                            "bao_mmu forget");
                        gf.hadamard(mask);
                        Tensor r, b;
                        double rest = 0.0;
                        ParamVec gr = grad(
                            m,
                            [&] {
                                r = batch_mean_nll_node(m.params, m.cfg, pb.retain_items);
                                b = boundary_loss_node(m, one, cfg.margin);
                                return weighted_sum(
                                    {r, b}, {cfg.lambda_r * retain_weight, cfg.lambda_b});
                            },
                            "bao_mmu retain+boundary", &rest);
                        fv = f.item();
                        rv = r.item();
                        bv = b.item();
                        total = -cfg.lambda_f * fv + rest;
                        gf.add_scaled(gr, 1.0);
                        sgd_step(m, gf, cfg.lr);
                    }
                    trace.record(step++, fv, rv, bv, 0.0, total, param_drift(m.params, start));
                }
            } else {
                const auto fbatches = make_minibatches(forget_all, cfg.batch_size, rng);
                std::vector<Batch> rbatches;
                if (!retain_all.empty()) rbatches = make_minibatches(retain_all, cfg.batch_size, rng);
                for (std::size_t bi = 0; bi < fbatches.size(); ++bi) {
                    const Batch& fb = fbatches[bi];
                    const Batch* rb = rbatches.empty() ? nullptr : &rbatches[bi % rbatches.size()];
                    double fv = 0.0, rv = 0.0, kv = 0.0, total = 0.0;
                    switch (cfg.method) {
                        case Method::ga: {
                            Tensor f;
                            ParamVec g = grad(
                                m,
                                [&] {
                                    f = loss_ga_node(m, fb);
                                    return scale(f, -1.0);
                                },
                                "ga step", &total);
                            fv = f.item();
                            sgd_step(m, g, cfg.lr);
                            break;
                        }
                        case Method::ga_diff: {
                            Tensor f, r;
                            ParamVec g = grad(
                                m,
                                [&] {
                                    f = batch_mean_nll_node(m.params, m.cfg, fb);
                                    r = batch_mean_nll_node(m.params, m.cfg, *rb);
                                    return weighted_sum({f, r}, {-1.0, cfg.beta_gd});
                                },
                                "ga_diff step", &total);
                            fv = f.item();
                            rv = r.item();
                            sgd_step(m, g, cfg.lr);
                            break;
                        }
                        case Method::kl_min: {
                            Tensor f, kl;
                            ParamVec g = grad(
                                m,
                                [&] {
                                    f = batch_mean_nll_node(m.params, m.cfg, fb);
                                    kl = kl_retain_node(m, *rb);
                                    return weighted_sum({f, kl}, {-1.0, cfg.gamma_kl});
                                },
                                "kl_min step", &total);
                            fv = f.item();
                            kv = kl.item();
                            sgd_step(m, g, cfg.lr);
                            break;
                        }
                        case Method::npo: {
                            ParamVec g = grad(
                                m, [&] { return loss_npo_node(m, fb, cfg.beta_npo); }, "npo step",
                                &total);
                            fv = loss_ga(m, fb);
                            sgd_step(m, g, cfg.lr);
                            break;
                        }
                        case Method::mmu: {
                            ParamVec g;
                            total = loss_mmu(m, mask, fb, *rb, &g);
                            fv = loss_ga(m, fb);
                            rv = loss_ga(m, *rb);
                            sgd_step(m, g, cfg.lr);
                            break;
                        }
                        default:
                            throw std::logic_error("unreachable method branch");
                    }
                    trace.record(step++, fv, rv, 0.0, kv, total, param_drift(m.params, start));
                }
            }
            last_good = m.clone();
            if (log)
                *log << "unlearn " << to_string(cfg.method) << " epoch " << epoch + 1 << "/"
                     << cfg.epochs << " done\n";
        } catch (const NumericError& e) {
            m = last_good.clone();
            trace.aborted = true;
            if (log) *log << "unlearn aborted (restored last-good checkpoint): " << e.what() << "\n";
        }
    }
    return trace;
}

namespace {

struct StageTimer {
    std::vector<std::pair<std::string, double>> entries;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void lap(const std::string& name) {
        const auto t1 = std::chrono::steady_clock::now();
        entries.emplace_back(name, std::chrono::duration<double>(t1 - t0).count());
        t0 = t1;
    }
};

}  // namespace

std::string RunManifest::to_json() const {
    ojson j;
    j["config_hash"] = config_hash;
    j["complete"] = complete;
    ojson echo = ojson::array();
    std::istringstream lines(config_echo);
    std::string line;
    while (std::getline(lines, line)) echo.push_back(line);
    j["config"] = echo;
    ojson st = ojson::array();
    for (const auto& [name, status] : stages) st.push_back({{"name", name}, {"status", status}});
    j["stages"] = st;
    ojson arts = ojson::object();
    for (const auto& [path, hash] : artifacts) arts[path] = hash;
    j["artifacts"] = arts;
    j["timings_path"] = "timings.txt";  // wall-clock sidecar, excluded from hashing
    return j.dump(2) + "\n";
}

RunManifest pipeline(const RunConfig& cfg0, std::ostream* log) {
    RunConfig cfg = cfg0;
    cfg.finalize();
    const DerivedSeeds seeds = DerivedSeeds::from_master(cfg.master_seed);

    RunManifest manifest;
    manifest.config_echo = cfg.canonical_echo();
    manifest.config_hash = cfg.config_hash();

    const fs::path out(cfg.out_dir);
    fs::create_directories(out / "plots");
    StageTimer timer;

    auto artifact = [&](const std::string& rel) {
        manifest.artifacts.emplace_back(rel, hash_file_hex((out / rel).string()));
    };
    auto stage_failed = [&](const std::string& name, const std::exception& e) {
        manifest.stages.emplace_back(name, std::string("failed: ") + e.what());
        manifest.complete = false;
        if (log) *log << "stage " << name << " failed: " << e.what() << "\n";
    };
    auto finish = [&]() {
        std::ofstream mf(out / "manifest.json", std::ios::binary);
        mf << manifest.to_json();
        std::ofstream tf(out / "timings.txt", std::ios::binary);
        for (const auto& [name, secs] : timer.entries)
            tf << name << " " << format_double(secs) << "s\n";
    };

    World world;
    std::vector<Sample> samples;
    ModelState before;
    std::vector<Sample> kept;
    SplitSpec split;
    UnlearnCorpus corpus;
    ModelState after;

    try {
        world = generate_world({cfg.world.n_subjects, cfg.world.facts_per_category,
                                cfg.world.vocab_size, seeds.world});
        samples = build_samples(world);
        save_world(world, (out / "world.json").string());
        save_samples(samples, (out / "samples.jsonl").string());
        manifest.stages.emplace_back("worldgen", "ok");
        artifact("world.json");
        artifact("samples.jsonl");
        timer.lap("worldgen");
    } catch (const std::exception& e) {
        stage_failed("worldgen", e);
        finish();
        return manifest;
    }

    try {
        before = pretrain(world, samples, cfg.model, cfg.pretrain, seeds.pretrain, log);
        save_checkpoint(before, (out / "checkpoint_before.bin").string());
        manifest.stages.emplace_back("pretrain", "ok");
        artifact("checkpoint_before.bin");
        timer.lap("pretrain");
    } catch (const std::exception& e) {
        stage_failed("pretrain", e);
        finish();
        return manifest;
    }

    try {
        FilterResult fr = filter_memorized(before, samples, cfg.filter_threshold);
        kept = std::move(fr.kept);
        save_samples(kept, (out / "samples_filtered.jsonl").string());
        std::ostringstream drops;
        drops << "sample_id,token_f1\n";
        for (const auto& [id, f1] : fr.dropped) drops << id << ',' << format_double(f1) << "\n";
        {
            std::ofstream df(out / "filter_drops.csv", std::ios::binary);
            df << drops.str();
        }
        manifest.stages.emplace_back("filter", "ok");
        artifact("samples_filtered.jsonl");
        artifact("filter_drops.csv");
        timer.lap("filter");
    } catch (const std::exception& e) {
        stage_failed("filter", e);
        finish();
        return manifest;
    }

    try {
        split = make_split(world, kept, cfg.setting, cfg.split_params, seeds.split);
        save_split(split, (out / "split.json").string());
        manifest.stages.emplace_back("split", "ok");
        artifact("split.json");
        timer.lap("split");
    } catch (const std::exception& e) {
        stage_failed("split", e);
        finish();
        return manifest;
    }

    try {
        corpus = build_unlearn_corpus(before, kept, split);
        save_corpus(corpus.forget, (out / "corpus_forget.jsonl").string());
        save_corpus(corpus.retain, (out / "corpus_retain.jsonl").string());
        manifest.stages.emplace_back("corpus", "ok");
        artifact("corpus_forget.jsonl");
        artifact("corpus_retain.jsonl");
        timer.lap("corpus");
    } catch (const std::exception& e) {
        stage_failed("corpus", e);
        finish();
        return manifest;
    }

    EvalReport eval_before;
    try {
        eval_before = evaluate(before, kept, split);
        eval_before.method_id = "before";
        eval_before.config_hash = manifest.config_hash;
        save_eval_report(eval_before, (out / "eval_before.json").string(),
                         (out / "eval_before.csv").string());
        save_memorization_profile(memorization_profile(before, kept),
                                  (out / "memorization_before.csv").string());
        manifest.stages.emplace_back("eval_before", "ok");
        artifact("eval_before.json");
        artifact("eval_before.csv");
        artifact("memorization_before.csv");
        timer.lap("eval_before");
    } catch (const std::exception& e) {
        stage_failed("eval_before", e);
        finish();
        return manifest;
    }

    try {
        after = before.clone();
        TrainTrace trace = run_unlearn(after, corpus, split, cfg.unlearn, seeds.unlearn, log);
        save_checkpoint(after, (out / "checkpoint_after.bin").string());
        save_trace(trace, (out / "trace.csv").string());
        manifest.stages.emplace_back("unlearn",
                                     trace.aborted ? "aborted_non_finite_loss" : "ok");
        artifact("checkpoint_after.bin");
        artifact("trace.csv");
        timer.lap("unlearn");
    } catch (const std::exception& e) {
        stage_failed("unlearn", e);
        finish();
        return manifest;
    }

    EvalReport eval_after;
    try {
        eval_after = evaluate(after, kept, split);
        eval_after.method_id = to_string(cfg.unlearn.method);
        eval_after.config_hash = manifest.config_hash;
        save_eval_report(eval_after, (out / "eval_after.json").string(),
                         (out / "eval_after.csv").string());
        manifest.stages.emplace_back("eval_after", "ok");
        artifact("eval_after.json");
        artifact("eval_after.csv");
        timer.lap("eval_after");
    } catch (const std::exception& e) {
        stage_failed("eval_after", e);
        finish();
        return manifest;
    }

    AttackReport attack_report;
    std::vector<Sample> forget_gen;
    try {
        const std::set<int> forget_ids(split.forget_sample_ids.begin(),
                                       split.forget_sample_ids.end());
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
        attack_report = run_attacks(after, baseline, forget_gen, specs, world);
        save_attack_report(attack_report, to_string(cfg.unlearn.method),
                           (out / "attacks.csv").string(), (out / "attacks_detail.csv").string());
        manifest.stages.emplace_back("attacks", "ok");
        artifact("attacks.csv");
        artifact("attacks_detail.csv");
        timer.lap("attacks");
    } catch (const std::exception& e) {
        stage_failed("attacks", e);
        finish();
        return manifest;
    }

    try {
        std::vector<ScatterPoint> points;
        if (eval_before.forget_efficiency && eval_before.utility)
            points.push_back({*eval_before.forget_efficiency, *eval_before.utility, "before",
                              "#718096"});
        if (eval_after.forget_efficiency && eval_after.utility)
            points.push_back({*eval_after.forget_efficiency, *eval_after.utility,
                              to_string(cfg.unlearn.method), "#c53030"});
        write_scatter_svg((out / "plots" / "tradeoff.svg").string(),
                          "forget efficiency vs utility", "forget efficiency", "utility", points);

        std::vector<std::string> cols;
        std::vector<std::optional<double>> row;
        for (const auto& s : attack_report.summaries) {
            cols.push_back(to_string(s.kind));
            row.push_back(s.asr);
        }
        write_heatmap_svg((out / "plots" / "asr_heatmap.svg").string(), "attack success rate",
                          {to_string(cfg.unlearn.method)}, cols, {row});

        // per-group mean forget generation score of the unlearned model
        std::vector<double> group_sum(8, 0.0);
        std::vector<int> group_n(8, 0);
        for (std::size_t i = 0; i < forget_gen.size(); ++i) {
            const int g = world.subject(forget_gen[i].subject_id).group;
            group_sum[static_cast<std::size_t>(g)] += rouge_l_recall(
                forget_gen[i].reference,
                greedy_decode(after, forget_gen[i].question, decode_budget(forget_gen[i])));
            ++group_n[static_cast<std::size_t>(g)];
        }
        std::vector<std::string> labels;
        std::vector<double> values;
        for (int g = 0; g < 8; ++g) {
            labels.push_back("G" + std::to_string(g));
            values.push_back(group_n[static_cast<std::size_t>(g)] > 0
                                 ? group_sum[static_cast<std::size_t>(g)] /
                                       group_n[static_cast<std::size_t>(g)]
                                 : 0.0);
        }
        write_bars_svg((out / "plots" / "category_bars.svg").string(),
                       "forget generation score by group", labels, values);
        manifest.stages.emplace_back("plots", "ok");
        artifact("plots/tradeoff.svg");
        artifact("plots/asr_heatmap.svg");
        artifact("plots/category_bars.svg");
        timer.lap("plots");
    } catch (const std::exception& e) {
        stage_failed("plots", e);
        finish();
        return manifest;
    }

    manifest.complete = true;
    finish();
    return manifest;
}

}  // namespace unlab
