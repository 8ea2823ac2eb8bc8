#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "unlab/attacks.hpp"
#include "unlab/config.hpp"
#include "unlab/metrics.hpp"
#include "unlab/model.hpp"
#include "unlab/objectives.hpp"
#include "unlab/serialize.hpp"
#include "unlab/world.hpp"

namespace unlab {

struct PretrainConfig {
    double target_f1 = 0.9;
    double lr = 0.3;
    int max_epochs = 60;
    int batch_size = 16;
    int probe_every = 2;
    double prefix_prob = 0.25;  // filler-prefix augmentation rate
};

struct RunConfig {
    WorldConfig world;
    ModelConfig model;
    PretrainConfig pretrain;
    Setting setting = Setting::personalized;
    SplitParams split_params;
    UnlearnConfig unlearn;
    std::vector<AttackKind> attack_kinds = {AttackKind::cross_identity,
                                            AttackKind::random_prefix, AttackKind::paraphrase,
                                            AttackKind::jailbreak};
    int attack_variants = 3;
    double filter_threshold = 0.5;
    std::string out_dir = "out";
    std::uint64_t master_seed = 7;

    bool lr_explicit = false;
    bool epochs_explicit = false;
    bool beta_explicit = false;
    bool gamma_explicit = false;
    bool beta_npo_explicit = false;
    bool mask_ratio_explicit = false;

    static RunConfig defaults();
    static RunConfig from_file(const std::string& path);
    void load_kv(KvConfig& kv);
    // fills the per-method lr/epochs defaults unless explicitly configured
    void finalize();
    std::string canonical_echo() const;
    std::string config_hash() const;
};

// seeds every stage derives from the master seed (see derive_seed)
struct DerivedSeeds {
    std::uint64_t world, model, pretrain, split, unlearn, attacks;
    static DerivedSeeds from_master(std::uint64_t master);
};

ModelState pretrain(const World& w, const std::vector<Sample>& samples, const ModelConfig& mcfg,
                    const PretrainConfig& pcfg, std::uint64_t seed, std::ostream* log = nullptr);

struct UnlearnCorpus {
    std::vector<CorpusItem> forget;
    std::vector<CorpusItem> retain;
};

UnlearnCorpus build_unlearn_corpus(const ModelState& m, const std::vector<Sample>& samples,
                                   const SplitSpec& split);

struct TrainTrace {
    struct Row {
        int step;
        std::string component;
        double value;
    };
    std::vector<Row> rows;
    int steps = 0;
    bool aborted = false;

    void record(int step, double forget, double retain, double boundary, double kl, double total,
                double drift);
};

void save_trace(const TrainTrace& trace, const std::string& path);

TrainTrace run_unlearn(ModelState& m, const UnlearnCorpus& corpus, const SplitSpec& split,
                       const UnlearnConfig& cfg, std::uint64_t seed, std::ostream* log = nullptr);

struct RunManifest {
    std::string config_echo;
    std::string config_hash;
    std::vector<std::pair<std::string, std::string>> stages;     // (name, status)
    std::vector<std::pair<std::string, std::string>> artifacts;  // (relative path, fnv hash)
    bool complete = false;

    std::string to_json() const;
};

RunManifest pipeline(const RunConfig& cfg, std::ostream* log = nullptr);

// per-subject paired batches assembled from the corpus (boundary objective input)
std::vector<PairedBatch> paired_batches_from_corpus(const UnlearnCorpus& corpus);

// intra-subject forget/retain NLL gaps over generation samples: the fraction
// of (forget, retain) pairs with nll(f) - nll(r) >= required_gap
struct MarginStats {
    std::size_t pairs = 0;
    std::size_t satisfied = 0;
    double mean_gap = 0.0;

    double fraction() const {
        return pairs == 0 ? 0.0 : static_cast<double>(satisfied) / static_cast<double>(pairs);
    }
};

MarginStats margin_satisfaction(const ModelState& m, const std::vector<Sample>& samples,
                                const SplitSpec& split, double required_gap);

// zero the canonical identity-token embedding of the given subjects: a
// constructed edit that severs the grounding of the trained view while the
// unseen alias views keep their embeddings
void ablate_canonical_identity(ModelState& m, const World& w,
                               const std::vector<int>& subject_ids);

Batch to_batch(const std::vector<CorpusItem>& items);

}  // namespace unlab
