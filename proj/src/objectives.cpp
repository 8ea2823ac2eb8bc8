#include "unlab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "unlab/errors.hpp"
#include "unlab/rng.hpp"

namespace unlab {

const char* to_string(Method m) {
    switch (m) {
        case Method::ga: return "ga";
        case Method::ga_diff: return "ga_diff";
        case Method::kl_min: return "kl_min";
        case Method::npo: return "npo";
        case Method::mmu: return "mmu";
        case Method::manu: return "manu";
        case Method::bao_ga_diff: return "bao_ga_diff";
        default: return "bao_mmu";
    }
}

Method method_from_string(const std::string& s) {
    for (Method m : {Method::ga, Method::ga_diff, Method::kl_min, Method::npo, Method::mmu,
                     Method::manu, Method::bao_ga_diff, Method::bao_mmu})
        if (s == to_string(m)) return m;
    throw ConfigError("unknown unlearning method: " + s);
}

bool method_uses_reference(Method m) { return m == Method::kl_min || m == Method::npo; }
bool method_uses_pairs(Method m) { return m == Method::bao_ga_diff || m == Method::bao_mmu; }

void UnlearnConfig::validate() const {
    if (method_uses_pairs(method) && margin <= 0.0)
        throw ConfigError("unlearn: margin must be > 0 for boundary-aware methods");
    if (beta_npo <= 0.0) throw ConfigError("unlearn: beta_npo must be > 0");
    if (prune_alpha <= 0.0 || prune_alpha >= 1.0)
        throw ConfigError("unlearn: prune_alpha must be in (0, 1)");
    if (epsilon <= 0.0) throw ConfigError("unlearn: epsilon must be > 0");
    if (mask_ratio <= 0.0 || mask_ratio > 1.0)
        throw ConfigError("unlearn: mask_ratio must be in (0, 1]");
    if (lr <= 0.0) throw ConfigError("unlearn: lr must be > 0");
    if (epochs < 1) throw ConfigError("unlearn: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("unlearn: batch_size must be >= 1");
}

void PairedBatch::validate() const {
    if (forget_items.empty() || retain_items.empty())
        throw std::invalid_argument("PairedBatch: forget and retain items must be non-empty");
}

namespace {

struct BatchLayout {
    Tensor log_probs;               // all answer rows of the batch
    std::vector<std::size_t> row0;  // first row of each item
    std::vector<std::size_t> len;   // answer length of each item
};

BatchLayout batch_log_probs(const ModelParams& p, const ModelConfig& cfg, const Batch& batch) {
    if (batch.empty()) throw std::invalid_argument("objective: empty batch");
    BatchLayout out;
    std::vector<Tensor> state_rows;
    std::size_t row = 0;
    for (const auto& item : batch) {
        if (item.answer.empty()) throw std::invalid_argument("objective: empty answer in batch");
        if (item.question.empty())
            throw std::invalid_argument("objective: empty question in batch");
        TokenSeq full = item.question;
        full.insert(full.end(), item.answer.begin(), item.answer.end());
        std::vector<int> positions(item.answer.size());
        for (std::size_t j = 0; j < item.answer.size(); ++j)
            positions[j] = static_cast<int>(item.question.size() - 1 + j);
        state_rows.push_back(states_at(p, cfg, full, positions));
        out.row0.push_back(row);
        out.len.push_back(item.answer.size());
        row += item.answer.size();
    }
    Tensor logits = add_rowvec(matmul(concat_rows(state_rows), p.w_out), p.b_out);
    out.log_probs = log_softmax_rows(logits);
    return out;
}

}  // namespace

Tensor batch_mean_nll_node(const ModelParams& p, const ModelConfig& cfg, const Batch& batch) {
    BatchLayout lay = batch_log_probs(p, cfg, batch);
    std::vector<int> targets;
    std::vector<double> weights;
    const double bw = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const double w = bw / static_cast<double>(batch[i].answer.size());
        for (int tok : batch[i].answer) {
            targets.push_back(tok);
            weights.push_back(w);
        }
    }
    return picked_nll(lay.log_probs, targets, weights);
}

std::vector<Tensor> per_item_nll_nodes(const ModelParams& p, const ModelConfig& cfg,
                                       const Batch& batch) {
    BatchLayout lay = batch_log_probs(p, cfg, batch);
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::vector<double> w(lay.len[i], 1.0 / static_cast<double>(lay.len[i]));
        out.push_back(picked_nll_rows(lay.log_probs, lay.row0[i], batch[i].answer, w));
    }
    return out;
}

Tensor loss_ga_node(const ModelState& m, const Batch& forget) {
    return batch_mean_nll_node(m.params, m.cfg, forget);
}
double loss_ga(const ModelState& m, const Batch& forget) { return loss_ga_node(m, forget).item(); }

Tensor loss_ga_diff_node(const ModelState& m, const Batch& forget, const Batch& retain,
                         double beta_gd) {
    Tensor f = batch_mean_nll_node(m.params, m.cfg, forget);
    if (beta_gd == 0.0) return scale(f, -1.0);
    Tensor r = batch_mean_nll_node(m.params, m.cfg, retain);
    return weighted_sum({f, r}, {-1.0, beta_gd});
}
double loss_ga_diff(const ModelState& m, const Batch& forget, const Batch& retain,
                    double beta_gd) {
    return loss_ga_diff_node(m, forget, retain, beta_gd).item();
}

Tensor kl_retain_node(const ModelState& m, const Batch& retain) {
    if (!m.has_reference()) throw std::invalid_argument("kl_min: missing reference snapshot");
    if (retain.empty()) throw std::invalid_argument("kl_min: empty retain batch");
    const ModelParams& ref = *m.reference;

    std::vector<Tensor> state_rows;
    std::vector<double> targets;          // reference distributions, row-major
    std::vector<double> weights;          // 1/(|x| * |R|) per row
    std::vector<double> entropy_terms;    // sum_v p0 log p0 per row
    const auto vocab = static_cast<std::size_t>(m.cfg.vocab);

    for (const auto& item : retain) {
        TokenSeq full = item.question;
        full.insert(full.end(), item.answer.begin(), item.answer.end());
        if (full.size() < 2) continue;
        std::vector<int> positions(full.size() - 1);
        std::iota(positions.begin(), positions.end(), 0);

        Tensor model_states = seq_states(m.params, m.cfg, full);
        state_rows.push_back(rows_select(model_states, positions));

        // reference forward carries no gradient (its params are frozen leaves)
        Tensor ref_states = seq_states(ref, m.cfg, full);
        Tensor ref_logp = log_softmax_rows(logits_at(ref, ref_states, positions));
        const double w = 1.0 / (static_cast<double>(full.size()) *
                                static_cast<double>(retain.size()));
        for (std::size_t r = 0; r < positions.size(); ++r) {
            double ent = 0.0;
            for (std::size_t v = 0; v < vocab; ++v) {
                const double lp = ref_logp.value()[r * vocab + v];
                const double p0 = std::exp(lp);
                targets.push_back(p0);
                ent += p0 * lp;
            }
            entropy_terms.push_back(ent);
            weights.push_back(w);
        }
    }
    if (state_rows.empty()) throw std::invalid_argument("kl_min: no scoring positions");

    Tensor logits = add_rowvec(matmul(concat_rows(state_rows), m.params.w_out), m.params.b_out);
    Tensor logp = log_softmax_rows(logits);
    Tensor ce = soft_cross_entropy(logp, targets, weights);
    double entropy_const = 0.0;
    for (std::size_t r = 0; r < entropy_terms.size(); ++r)
        entropy_const += weights[r] * entropy_terms[r];
    // KL = cross-entropy(p_ref, p_model) - H(p_ref); exactly zero at theta = theta_0
    return add_const(ce, entropy_const);
}

Tensor loss_kl_min_node(const ModelState& m, const Batch& forget, const Batch& retain,
                        double gamma_kl) {
    Tensor f = batch_mean_nll_node(m.params, m.cfg, forget);
    if (gamma_kl == 0.0) return scale(f, -1.0);
    Tensor kl = kl_retain_node(m, retain);
    return weighted_sum({f, kl}, {-1.0, gamma_kl});
}
double loss_kl_min(const ModelState& m, const Batch& forget, const Batch& retain,
                   double gamma_kl) {
    return loss_kl_min_node(m, forget, retain, gamma_kl).item();
}

Tensor loss_npo_node(const ModelState& m, const Batch& forget, double beta_npo) {
    if (!m.has_reference()) throw std::invalid_argument("npo: missing reference snapshot");
    if (beta_npo <= 0.0) throw std::invalid_argument("npo: beta must be > 0");
    std::vector<Tensor> nlls = per_item_nll_nodes(m.params, m.cfg, forget);
    std::vector<Tensor> terms;
    std::vector<double> coeffs;
    for (std::size_t i = 0; i < forget.size(); ++i) {
        const auto& item = forget[i];
        const double ref_lp =
            -static_cast<double>(item.answer.size()) * nll_with(*m.reference, m.cfg, item.question,
                                                                item.answer);
        // log ratio = log pi_theta - log pi_ref, in log space throughout
        Tensor lp = scale(nlls[i], -static_cast<double>(item.answer.size()));
        Tensor z = add_const(lp, -ref_lp);
        terms.push_back(softplus(scale(z, beta_npo)));
        coeffs.push_back(2.0 / (beta_npo * static_cast<double>(forget.size())));
    }
    return weighted_sum(terms, coeffs);
}
double loss_npo(const ModelState& m, const Batch& forget, double beta_npo) {
    return loss_npo_node(m, forget, beta_npo).item();
}

ParamVec mmu_mask(ModelState& m, const Batch& forget, const Batch& retain, double mask_ratio,
                  double epsilon) {
    if (forget.empty() || retain.empty())
        throw std::invalid_argument("mmu_mask: batches must be non-empty");
    if (mask_ratio <= 0.0 || mask_ratio > 1.0)
        throw std::invalid_argument("mmu_mask: mask_ratio must be in (0, 1]");
    ParamVec gf = grad(m, [&] { return loss_ga_node(m, forget); }, "mmu forget saliency");
    ParamVec gr = grad(m, [&] { return loss_ga_node(m, retain); }, "mmu retain saliency");

    struct Entry {
        double saliency;
        std::size_t slot, idx;
    };
    std::vector<Entry> entries;
    entries.reserve(gf.total_size());
    for (std::size_t s = 0; s < gf.slots.size(); ++s)
        for (std::size_t j = 0; j < gf.slots[s].size(); ++j)
            entries.push_back({std::abs(gf.slots[s][j]) / (std::abs(gr.slots[s][j]) + epsilon),
                               s, j});
    const auto take = static_cast<std::size_t>(
        mask_ratio * static_cast<double>(entries.size()));
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return a.saliency > b.saliency;  // stable keeps parameter-index order on ties
    });
    ParamVec mask = ParamVec::zeros_like(m.params);
    for (std::size_t i = 0; i < take && i < entries.size(); ++i)
        mask.slots[entries[i].slot][entries[i].idx] = 1.0;
    return mask;
}

double loss_mmu(ModelState& m, const ParamVec& mask, const Batch& forget, const Batch& retain,
                ParamVec* grad_out) {
    if (mask.slots.size() != ParamVec::zeros_like(m.params).slots.size())
        throw std::invalid_argument("loss_mmu: mask shape mismatch");
    double f_val = 0.0, r_val = 0.0;
    ParamVec gf = grad(m, [&] { return loss_ga_node(m, forget); }, "mmu forget", &f_val);
    ParamVec gr = grad(m, [&] { return loss_ga_node(m, retain); }, "mmu retain", &r_val);
    if (grad_out) {
        gf.scale_by(-1.0);
        gf.hadamard(mask);       // masked ascent on the forget term
        gf.add_scaled(gr, 1.0);  // unmasked retain descent
        *grad_out = std::move(gf);
    }
    return -f_val + r_val;
}

NeuronImportance manu_importance(const NeuronStats& stats_f, const NeuronStats& stats_r) {
    if (stats_f.count == 0 || stats_r.count == 0)
        throw std::invalid_argument("manu_importance: unpopulated stats");
    if (stats_f.neurons != stats_r.neurons)
        throw std::invalid_argument("manu_importance: neuron count mismatch");
    const std::size_t n = stats_f.neurons;

    auto normalized_sum = [n](const NeuronStats& st) {
        std::vector<double> total(n, 0.0);
        const std::vector<std::vector<double>> raw = [&] {
            std::vector<std::vector<double>> r(4, std::vector<double>(n));
            for (std::size_t i = 0; i < n; ++i) {
                r[0][i] = st.mean_abs(i);
                r[1][i] = st.freq(i);
                r[2][i] = st.variance(i);
                r[3][i] = st.rms(i);
            }
            return r;
        }();
        for (const auto& stat : raw) {
            const double lo = *std::min_element(stat.begin(), stat.end());
            const double hi = *std::max_element(stat.begin(), stat.end());
            if (hi > lo)  // degenerate min == max normalizes to 0 by convention
                for (std::size_t i = 0; i < n; ++i) total[i] += (stat[i] - lo) / (hi - lo);
        }
        return total;
    };

    NeuronImportance imp;
    imp.forget = normalized_sum(stats_f);
    imp.retain = normalized_sum(stats_r);
    return imp;
}

PruneReport manu_prune(ModelState& m, const NeuronImportance& importance, double alpha,
                       double epsilon) {
    if (alpha <= 0.0 || alpha >= 1.0)
        throw std::invalid_argument("manu_prune: alpha must be in (0, 1)");
    const std::size_t n = importance.forget.size();
    if (n != static_cast<std::size_t>(neuron_count(m.cfg)))
        throw std::invalid_argument("manu_prune: importance size mismatch");
    std::vector<std::pair<int, double>> scored(n);
    for (std::size_t i = 0; i < n; ++i)
        scored[i] = {static_cast<int>(i),
                     importance.forget[i] / (importance.retain[i] + epsilon)};
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    const auto count = static_cast<std::size_t>(
        std::ceil(alpha * static_cast<double>(n)));
    PruneReport rep;
    std::vector<int> ids;
    for (std::size_t i = 0; i < count; ++i) {
        rep.pruned.push_back(scored[i]);
        ids.push_back(scored[i].first);
    }
    prune_neurons(m, ids);
    return rep;
}

Tensor boundary_loss_node(const ModelState& m, const std::vector<PairedBatch>& paired,
                          double margin) {
    if (paired.empty()) throw std::invalid_argument("boundary_loss: empty pairing");
    if (margin <= 0.0) throw std::invalid_argument("boundary_loss: margin must be > 0");
    std::vector<Tensor> subject_means;
    for (const auto& pb : paired) {
        pb.validate();
        Batch all = pb.forget_items;
        all.insert(all.end(), pb.retain_items.begin(), pb.retain_items.end());
        std::vector<Tensor> nlls = per_item_nll_nodes(m.params, m.cfg, all);
        const std::size_t nf = pb.forget_items.size();
        const std::size_t nr = pb.retain_items.size();

        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        pairs.reserve(nf * nr);
        for (std::size_t fi = 0; fi < nf; ++fi)
            for (std::size_t ri = 0; ri < nr; ++ri) pairs.emplace_back(fi, nf + ri);
        if (pairs.size() > static_cast<std::size_t>(kMaxPairsPerSubject)) {
            Rng rng(derive_seed(0x9aab5u, "bao-pairs-" + std::to_string(pb.subject_id)));
            rng.shuffle(pairs);
            pairs.resize(static_cast<std::size_t>(kMaxPairsPerSubject));
        }
        std::vector<Tensor> hinges;
        std::vector<double> coeffs;
        for (const auto& [fi, ri] : pairs) {
            // max(0, margin - (nll_f - nll_r))
            Tensor diff = weighted_sum({nlls[fi], nlls[ri]}, {-1.0, 1.0});
            hinges.push_back(relu(add_const(diff, margin)));
            coeffs.push_back(1.0 / static_cast<double>(pairs.size()));
        }
        subject_means.push_back(weighted_sum(hinges, coeffs));
    }
    std::vector<double> sc(subject_means.size(), 1.0 / static_cast<double>(subject_means.size()));
    return weighted_sum(subject_means, sc);
}
double boundary_loss(const ModelState& m, const std::vector<PairedBatch>& paired, double margin) {
    return boundary_loss_node(m, paired, margin).item();
}

Tensor loss_bao_node(const ModelState& m, const Batch& forget, const Batch& retain,
                     const std::vector<PairedBatch>& paired, const UnlearnConfig& cfg) {
    const double retain_weight = cfg.method == Method::bao_ga_diff ? cfg.beta_gd : 1.0;
    Tensor f = batch_mean_nll_node(m.params, m.cfg, forget);
    Tensor r = batch_mean_nll_node(m.params, m.cfg, retain);
    if (cfg.lambda_b == 0.0)
        return weighted_sum({f, r}, {-cfg.lambda_f, cfg.lambda_r * retain_weight});
    Tensor b = boundary_loss_node(m, paired, cfg.margin);
    return weighted_sum({f, r, b},
                        {-cfg.lambda_f, cfg.lambda_r * retain_weight, cfg.lambda_b});
}
double loss_bao(const ModelState& m, const Batch& forget, const Batch& retain,
                const std::vector<PairedBatch>& paired, const UnlearnConfig& cfg) {
    return loss_bao_node(m, forget, retain, paired, cfg).item();
}

}  // namespace unlab
