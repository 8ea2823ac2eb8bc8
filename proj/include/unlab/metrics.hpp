#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "unlab/model.hpp"
#include "unlab/world.hpp"

namespace unlab {

// LCS(reference, hypothesis) / |reference|
double rouge_l_recall(const TokenSeq& reference, const TokenSeq& hypothesis);

// multiset token-overlap F1; 0 when either side is empty or overlap is zero
double token_f1(const TokenSeq& reference, const TokenSeq& hypothesis);

// options scored by sequence log-probability; ties resolved in label order A<B<C<D
double classification_accuracy(const ModelState& m, const std::vector<Sample>& class_samples);

struct MemorizationRow {
    int sample_id = -1;
    double nll = 0.0;
    double decode_f1 = 0.0;
};

std::vector<MemorizationRow> memorization_profile(const ModelState& m,
                                                  const std::vector<Sample>& samples);

struct EvalReport {
    // [split: 0 forget, 1 retain][task: 0 class, 1 gen, 2 cloze][channel: 0 identity, 1 text]
    std::array<std::array<std::array<std::optional<double>, 2>, 3>, 2> cells;
    std::optional<double> forget_efficiency;  // 1 - mean of forget cells
    std::optional<double> utility;            // mean of retain cells
    std::string method_id;
    std::string config_hash;

    std::optional<double>& cell(int split, Task task, Channel channel);
    const std::optional<double>& cell(int split, Task task, Channel channel) const;
};

EvalReport evaluate(const ModelState& m, const std::vector<Sample>& samples,
                    const SplitSpec& split);

int decode_budget(const Sample& s);

}  // namespace unlab
