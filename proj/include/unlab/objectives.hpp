#pragma once

#include <optional>
#include <string>
#include <vector>

#include "unlab/model.hpp"
#include "unlab/tensor.hpp"

namespace unlab {

// All objectives are normalized to "minimize": the forget term enters with a
// negative sign (ascent on forget NLL) and retain-side terms enter as plain
// mean NLL, so minimizing lowers retain NLL. The mapping from each published
// sign convention is covered in the README.
enum class Method { ga, ga_diff, kl_min, npo, mmu, manu, bao_ga_diff, bao_mmu };

const char* to_string(Method m);
Method method_from_string(const std::string& s);
bool method_uses_reference(Method m);
bool method_uses_pairs(Method m);

struct UnlearnConfig {
    Method method = Method::bao_ga_diff;
    double lambda_utility = 1.0;  // global forget/retain balance, echoed for provenance
    double beta_gd = 1.0;         // GA_diff retain weight
    double gamma_kl = 1.0;        // KL retain weight
    double beta_npo = 0.1;
    double margin = 1.5;
    double lambda_f = 1.0;
    double lambda_r = 1.0;
    double lambda_b = 1.0;
    double prune_alpha = 0.5;     // MANU pruning ratio
    double epsilon = 1e-6;
    double mask_ratio = 0.35;     // MMU updatable-parameter fraction
    double lr = 0.05;
    int epochs = 4;
    int batch_size = 8;

    void validate() const;
};

struct BatchItem {
    TokenSeq question;
    TokenSeq answer;
};
using Batch = std::vector<BatchItem>;

struct PairedBatch {
    int subject_id = -1;
    Batch forget_items;
    Batch retain_items;

    void validate() const;
};

// mean over the batch of per-sequence mean answer-token NLL, one batched
// output projection for the whole batch
Tensor batch_mean_nll_node(const ModelParams& p, const ModelConfig& cfg, const Batch& batch);
// per-item NLL scalars sharing the same batched projection
std::vector<Tensor> per_item_nll_nodes(const ModelParams& p, const ModelConfig& cfg,
                                       const Batch& batch);

Tensor loss_ga_node(const ModelState& m, const Batch& forget);
double loss_ga(const ModelState& m, const Batch& forget);

Tensor loss_ga_diff_node(const ModelState& m, const Batch& forget, const Batch& retain,
                         double beta_gd);
double loss_ga_diff(const ModelState& m, const Batch& forget, const Batch& retain, double beta_gd);

// KL(p_ref || p_model) per prediction position, averaged 1/|x| within a
// sequence and 1/|R| across the batch
Tensor kl_retain_node(const ModelState& m, const Batch& retain);
Tensor loss_kl_min_node(const ModelState& m, const Batch& forget, const Batch& retain,
                        double gamma_kl);
double loss_kl_min(const ModelState& m, const Batch& forget, const Batch& retain, double gamma_kl);

Tensor loss_npo_node(const ModelState& m, const Batch& forget, double beta_npo);
double loss_npo(const ModelState& m, const Batch& forget, double beta_npo);

// per-parameter saliency |grad forget| / (|grad retain| + eps); top mask_ratio
// fraction marked updatable (1.0), deterministic ties by parameter index
ParamVec mmu_mask(ModelState& m, const Batch& forget, const Batch& retain, double mask_ratio,
                  double epsilon = 1e-6);

// value of -E_F[nll] + E_R[nll]; gradient composed in two passes with the
// forget-side gradient masked. grad_out may be null when only the value is needed.
double loss_mmu(ModelState& m, const ParamVec& mask, const Batch& forget, const Batch& retain,
                ParamVec* grad_out);

struct NeuronImportance {
    std::vector<double> forget;  // I(D_f, n)
    std::vector<double> retain;  // I(D_r, n)
};

NeuronImportance manu_importance(const NeuronStats& stats_f, const NeuronStats& stats_r);

struct PruneReport {
    std::vector<std::pair<int, double>> pruned;  // (neuron id, score), highest first
};

PruneReport manu_prune(ModelState& m, const NeuronImportance& importance, double alpha,
                       double epsilon);

Tensor boundary_loss_node(const ModelState& m, const std::vector<PairedBatch>& paired,
                          double margin);
double boundary_loss(const ModelState& m, const std::vector<PairedBatch>& paired, double margin);

Tensor loss_bao_node(const ModelState& m, const Batch& forget, const Batch& retain,
                     const std::vector<PairedBatch>& paired, const UnlearnConfig& cfg);
double loss_bao(const ModelState& m, const Batch& forget, const Batch& retain,
                const std::vector<PairedBatch>& paired, const UnlearnConfig& cfg);

// per-subject forget x retain cross product, capped by deterministic subsampling
constexpr int kMaxPairsPerSubject = 64;

}  // namespace unlab
