#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unlab/model.hpp"
#include "unlab/rng.hpp"
#include "unlab/world.hpp"

namespace unlab {

enum class AttackKind { cross_identity, random_prefix, paraphrase, jailbreak };

const char* to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

// prompt pools, byte-for-byte
const std::vector<std::string>& default_random_prefix_pool();
const std::vector<std::string>& default_jailbreak_pool();

struct AttackSpec {
    AttackKind kind = AttackKind::random_prefix;
    std::vector<std::string> prefix_pool;  // random_prefix / jailbreak
    int n_variants = 3;                    // paraphrase
    std::uint64_t seed = 0;

    static AttackSpec make(AttackKind kind, std::uint64_t seed);
    void validate() const;
};

// prefix strings are carried into the token world as deterministic filler
// sequences (hash of the string selects filler tokens)
TokenSeq prefix_tokens(const World& w, const std::string& prefix);

std::vector<Sample> perturb(const Sample& sample, const AttackSpec& spec, const World& w,
                            Rng& rng);

// (R_attack - R_before) / R_before; nullopt when R_before == 0
std::optional<double> asr(double r_before, double r_attack);

struct AttackDetailRow {
    AttackKind kind;
    int sample_id = -1;
    Channel channel = Channel::identity;
    int variants = 0;          // 0 = attack not applicable to this sample
    double r_before = 0.0;     // unattacked score of the sample
    double r_attack = 0.0;     // mean over variants (= r_before when not applicable)
};

struct AttackSummary {
    AttackKind kind;
    double r_before = 0.0;
    double r_attack = 0.0;
    std::optional<double> asr;
};

struct AttackReport {
    std::vector<AttackSummary> summaries;
    std::vector<AttackDetailRow> details;
};

// baseline_scores: unattacked per-sample forget ROUGE of the same model,
// aligned with forget_samples
AttackReport run_attacks(const ModelState& model_after,
                         const std::vector<double>& baseline_scores,
                         const std::vector<Sample>& forget_samples,
                         const std::vector<AttackSpec>& specs, const World& w);

}  // namespace unlab
