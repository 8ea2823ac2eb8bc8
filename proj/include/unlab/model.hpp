#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "unlab/tensor.hpp"

namespace unlab {

using TokenSeq = std::vector<int>;

// Tiny autoregressive token model. Per position t the input embedding is
// mixed with two exponential prefix averages, plus a running prefix mean that
// keeps early tokens (the subject reference) visible at answer positions,
// projected to the model width and passed through `depth` residual
// feed-forward blocks.
// The feed-forward hidden axis is the "neuron" axis that activation statistics
// and pruning operate on.
struct ModelConfig {
    int vocab = 2048;
    int width = 64;
    int depth = 2;
    int ff_width = 64;   // neuron axis, >= 32
    int context = 64;
    int end_token = 1;   // decode stops after emitting this
    double decay_short = 0.5;
    double decay_long = 0.9;
};

struct ModelParams {
    Tensor embed;     // vocab x width
    Tensor pos;       // context x width
    Tensor w_in;      // 4*width x width
    Tensor b_in;      // 1 x width
    struct Block {
        Tensor norm_gain;  // 1 x width
        Tensor w1;         // width x ff
        Tensor b1;         // 1 x ff
        Tensor w2;         // ff x width
        Tensor b2;         // 1 x width
    };
    std::vector<Block> blocks;
    Tensor out_gain;  // 1 x width
    Tensor w_out;     // width x vocab
    Tensor b_out;     // 1 x vocab

    ModelParams() = default;
    ModelParams(const ModelParams&) = delete;
    ModelParams& operator=(const ModelParams&) = delete;
    ModelParams(ModelParams&&) = default;
    ModelParams& operator=(ModelParams&&) = default;

    // fixed iteration order; checkpoint layout and gradient flattening rely on it
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
    std::size_t param_count() const;
    ModelParams clone(bool requires_grad) const;
    std::uint64_t content_hash() const;
};

struct ModelState {
    ModelConfig cfg;
    ModelParams params;
    std::shared_ptr<const ModelParams> reference;  // frozen snapshot, never mutated once set
    std::uint64_t rng_seed = 0;

    ModelState() = default;
    ModelState(const ModelState&) = delete;
    ModelState& operator=(const ModelState&) = delete;
    ModelState(ModelState&&) = default;
    ModelState& operator=(ModelState&&) = default;

    ModelState clone() const;
    void take_reference_snapshot();
    bool has_reference() const { return reference != nullptr; }
};

// Structure congruent to ModelParams; used for gradients and parameter masks.
struct ParamVec {
    std::vector<std::vector<double>> slots;

    static ParamVec zeros_like(const ModelParams& p);
    static ParamVec ones_like(const ModelParams& p);
    std::size_t total_size() const;
    double dot(const ParamVec& other) const;
    double norm() const;
    void scale_by(double c);
    void add_scaled(const ParamVec& other, double c);
    void hadamard(const ParamVec& mask);
    std::size_t count_nonzero() const;
};

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed);

// Graph forward: normalized states for every position of `tokens` (T x width).
Tensor seq_states(const ModelParams& p, const ModelConfig& cfg, const TokenSeq& tokens);

// Same, but the feed-forward blocks run only on the requested positions
// (prefix mixing still spans the whole sequence).
Tensor states_at(const ModelParams& p, const ModelConfig& cfg, const TokenSeq& tokens,
                 const std::vector<int>& positions);

// Log-probability rows for predicting tokens[pos+1] at each requested state
// index. `states` must come from seq_states on the same params.
Tensor logits_at(const ModelParams& p, const Tensor& states, const std::vector<int>& positions);

// mean negative log-likelihood of `answer` given `question` (answer tokens only)
double nll(const ModelState& m, const TokenSeq& question, const TokenSeq& answer);
double nll_with(const ModelParams& p, const ModelConfig& cfg, const TokenSeq& question,
                const TokenSeq& answer);
// log pi(answer | question) = -|answer| * nll
double sequence_logprob(const ModelState& m, const TokenSeq& question, const TokenSeq& answer);

TokenSeq greedy_decode(const ModelState& m, const TokenSeq& question, int max_len);

ParamVec grad(ModelState& m, const std::function<Tensor()>& loss_thunk,
              const std::string& label = "loss", double* loss_value = nullptr);

void sgd_step(ModelState& m, const ParamVec& gradient, double lr,
              const ParamVec* param_mask = nullptr);

// Per-neuron activation accumulators (neuron = depth-major feed-forward unit).
struct NeuronStats {
    std::size_t neurons = 0;
    std::uint64_t count = 0;  // positions accumulated
    std::vector<double> sum_abs;
    std::vector<double> sum;
    std::vector<double> sum_sq;
    std::vector<std::uint64_t> pos_count;  // strictly positive activations

    double mean_abs(std::size_t n) const;
    double freq(std::size_t n) const;           // P(a > 0)
    double variance(std::size_t n) const;
    double rms(std::size_t n) const;
};

NeuronStats collect_neuron_stats(const ModelState& m, const std::vector<TokenSeq>& dataset);

int neuron_count(const ModelConfig& cfg);
void prune_neurons(ModelState& m, const std::vector<int>& neuron_ids);

}  // namespace unlab
