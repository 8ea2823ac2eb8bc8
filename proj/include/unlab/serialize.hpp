#pragma once

#include <string>
#include <vector>

#include "unlab/attacks.hpp"
#include "unlab/metrics.hpp"
#include "unlab/model.hpp"
#include "unlab/world.hpp"

namespace unlab {

// World and split files are single JSON documents; samples and corpora are
// line-delimited records with a fixed field order, so reruns are byte-identical.
void save_world(const World& w, const std::string& path);
World load_world(const std::string& path);

void save_samples(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> load_samples(const World& w, const std::string& path);

void save_split(const SplitSpec& split, const std::string& path);
SplitSpec load_split(const std::string& path);

struct CorpusItem {
    int sample_id = -1;
    int subject_id = -1;
    std::string slot;
    Channel channel = Channel::identity;
    TokenSeq question;
    TokenSeq answer;
    std::string origin;  // provenance, e.g. "self-generation"
};

void save_corpus(const std::vector<CorpusItem>& items, const std::string& path);
std::vector<CorpusItem> load_corpus(const std::string& path);

// binary checkpoint with embedded config, seed and optional reference
// snapshot; save -> load round-trips bit-exactly
void save_checkpoint(const ModelState& m, const std::string& path);
ModelState load_checkpoint(const std::string& path);

void save_eval_report(const EvalReport& rep, const std::string& json_path,
                      const std::string& csv_path);
void save_memorization_profile(const std::vector<MemorizationRow>& rows, const std::string& path);
void save_attack_report(const AttackReport& rep, const std::string& method,
                        const std::string& csv_path, const std::string& detail_csv_path);

std::string format_double(double v);

}  // namespace unlab
