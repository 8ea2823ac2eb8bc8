#include "unlab/metrics.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

namespace unlab {

double rouge_l_recall(const TokenSeq& reference, const TokenSeq& hypothesis) {
    if (reference.empty()) throw std::invalid_argument("rouge_l_recall: empty reference");
    if (hypothesis.empty()) return 0.0;
    const std::size_t n = reference.size(), m = hypothesis.size();
    // rolling single-row LCS table
    std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            if (reference[i - 1] == hypothesis[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[m]) / static_cast<double>(n);
}

double token_f1(const TokenSeq& reference, const TokenSeq& hypothesis) {
    if (reference.empty() || hypothesis.empty()) return 0.0;
    std::map<int, std::size_t> counts;
    for (int t : reference) ++counts[t];
    std::size_t overlap = 0;
    for (int t : hypothesis) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    return 2.0 * static_cast<double>(overlap) /
           static_cast<double>(reference.size() + hypothesis.size());
}

double classification_accuracy(const ModelState& m, const std::vector<Sample>& class_samples) {
    if (class_samples.empty())
        throw std::invalid_argument("classification_accuracy: empty sample list");
    std::size_t correct = 0;
    for (const auto& s : class_samples) {
        if (!s.is_classification() || s.option_tokens.size() != 4)
            throw std::invalid_argument("classification_accuracy: sample " + std::to_string(s.id) +
                                        " is not a classification sample");
        int best = 0;
        double best_score = 0.0;
        for (int k = 0; k < 4; ++k) {
            const double score =
                sequence_logprob(m, s.question, s.option_tokens[static_cast<std::size_t>(k)]);
            if (k == 0 || score > best_score) {
                best = k;
                best_score = score;
            }
        }
        if (best == s.correct_option) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(class_samples.size());
}

int decode_budget(const Sample& s) { return static_cast<int>(s.reference.size()) + 4; }

std::vector<MemorizationRow> memorization_profile(const ModelState& m,
                                                  const std::vector<Sample>& samples) {
    std::vector<MemorizationRow> rows;
    for (const auto& s : samples) {
        if (s.task != Task::generation) continue;
        MemorizationRow r;
        r.sample_id = s.id;
        r.nll = nll(m, s.question, s.reference);
        r.decode_f1 = token_f1(s.reference, greedy_decode(m, s.question, decode_budget(s)));
        rows.push_back(r);
    }
    std::sort(rows.begin(), rows.end(),
              [](const MemorizationRow& a, const MemorizationRow& b) {
                  return a.sample_id < b.sample_id;
              });
    return rows;
}

std::optional<double>& EvalReport::cell(int split, Task task, Channel channel) {
    return cells[static_cast<std::size_t>(split)][static_cast<std::size_t>(task)]
                [static_cast<std::size_t>(channel)];
}
const std::optional<double>& EvalReport::cell(int split, Task task, Channel channel) const {
    return cells[static_cast<std::size_t>(split)][static_cast<std::size_t>(task)]
                [static_cast<std::size_t>(channel)];
}

EvalReport evaluate(const ModelState& m, const std::vector<Sample>& samples,
                    const SplitSpec& split) {
    const std::set<int> forget_ids(split.forget_sample_ids.begin(),
                                   split.forget_sample_ids.end());

    EvalReport rep;
    for (int sp = 0; sp < 2; ++sp) {
        for (Task task : {Task::classification, Task::generation, Task::cloze}) {
            for (Channel ch : {Channel::identity, Channel::text}) {
                std::vector<Sample> group;
                for (const auto& s : samples)
                    if (s.task == task && s.channel == ch &&
                        (forget_ids.count(s.id) > 0) == (sp == 0))
                        group.push_back(s);
                if (group.empty()) continue;
                double score = 0.0;
                if (task == Task::classification) {
                    score = classification_accuracy(m, group);
                } else {
                    double sum = 0.0;
                    for (const auto& s : group)
                        sum += rouge_l_recall(s.reference,
                                              greedy_decode(m, s.question, decode_budget(s)));
                    score = sum / static_cast<double>(group.size());
                }
                rep.cell(sp, task, ch) = score;
            }
        }
    }

    auto mean_cells = [&rep](int sp) -> std::optional<double> {
        double sum = 0.0;
        int n = 0;
        for (const auto& by_task : rep.cells[static_cast<std::size_t>(sp)])
            for (const auto& c : by_task)
                if (c) {
                    sum += *c;
                    ++n;
                }
        if (n == 0) return std::nullopt;
        return sum / n;
    };
    if (auto f = mean_cells(0)) rep.forget_efficiency = 1.0 - *f;
    rep.utility = mean_cells(1);
    return rep;
}

}  // namespace unlab
