#include "unlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "unlab/errors.hpp"
#include "unlab/rng.hpp"

namespace unlab {

namespace {

Tensor gaussian_tensor(std::size_t rows, std::size_t cols, double stdev, Rng& rng) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = stdev * rng.next_gaussian();
    return Tensor::from_values(rows, cols, std::move(v), true);
}

Tensor const_tensor(std::size_t rows, std::size_t cols, double fill) {
    return Tensor::from_values(rows, cols, std::vector<double>(rows * cols, fill), true);
}

}  // namespace

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("embed", embed);
    fn("pos", pos);
    fn("w_in", w_in);
    fn("b_in", b_in);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        fn(prefix + "norm_gain", blocks[b].norm_gain);
        fn(prefix + "w1", blocks[b].w1);
        fn(prefix + "b1", blocks[b].b1);
        fn(prefix + "w2", blocks[b].w2);
        fn(prefix + "b2", blocks[b].b2);
    }
    fn("out_gain", out_gain);
    fn("w_out", w_out);
    fn("b_out", b_out);
}

void ModelParams::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    auto* self = const_cast<ModelParams*>(this);
    self->for_each([&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

std::size_t ModelParams::param_count() const {
    std::size_t n = 0;
    for_each([&n](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

ModelParams ModelParams::clone(bool requires_grad) const {
    ModelParams out;
    auto copy = [requires_grad](const Tensor& t) {
        return Tensor::from_values(t.rows(), t.cols(), t.value(), requires_grad);
    };
    out.embed = copy(embed);
    out.pos = copy(pos);
    out.w_in = copy(w_in);
    out.b_in = copy(b_in);
    for (const auto& b : blocks)
        out.blocks.push_back({copy(b.norm_gain), copy(b.w1), copy(b.b1), copy(b.w2), copy(b.b2)});
    out.out_gain = copy(out_gain);
    out.w_out = copy(w_out);
    out.b_out = copy(b_out);
    return out;
}

std::uint64_t ModelParams::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for_each([&h](const std::string& name, const Tensor& t) {
        h = fnv1a(name, h);
        h = fnv1a(t.value().data(), t.value().size() * sizeof(double), h);
    });
    return h;
}

ModelState ModelState::clone() const {
    ModelState out;
    out.cfg = cfg;
    out.params = params.clone(true);
    out.reference = reference;  // snapshot is immutable, sharing is safe
    out.rng_seed = rng_seed;
    return out;
}

void ModelState::take_reference_snapshot() {
    reference = std::make_shared<const ModelParams>(params.clone(false));
}

ParamVec ParamVec::zeros_like(const ModelParams& p) {
    ParamVec v;
    p.for_each([&v](const std::string&, const Tensor& t) {
        v.slots.emplace_back(t.size(), 0.0);
    });
    return v;
}

ParamVec ParamVec::ones_like(const ModelParams& p) {
    ParamVec v;
    p.for_each([&v](const std::string&, const Tensor& t) {
        v.slots.emplace_back(t.size(), 1.0);
    });
    return v;
}

std::size_t ParamVec::total_size() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.size();
    return n;
}

double ParamVec::dot(const ParamVec& other) const {
    double s = 0.0;
    for (std::size_t i = 0; i < slots.size(); ++i)
        for (std::size_t j = 0; j < slots[i].size(); ++j) s += slots[i][j] * other.slots[i][j];
    return s;
}

double ParamVec::norm() const { return std::sqrt(dot(*this)); }

void ParamVec::scale_by(double c) {
    for (auto& s : slots)
        for (double& x : s) x *= c;
}

void ParamVec::add_scaled(const ParamVec& other, double c) {
    for (std::size_t i = 0; i < slots.size(); ++i)
        for (std::size_t j = 0; j < slots[i].size(); ++j) slots[i][j] += c * other.slots[i][j];
}

void ParamVec::hadamard(const ParamVec& mask) {
    for (std::size_t i = 0; i < slots.size(); ++i)
        for (std::size_t j = 0; j < slots[i].size(); ++j) slots[i][j] *= mask.slots[i][j];
}

std::size_t ParamVec::count_nonzero() const {
    std::size_t n = 0;
    for (const auto& s : slots)
        for (double x : s)
            if (x != 0.0) ++n;
    return n;
}

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.vocab < 2) throw ConfigError("init_model: vocab must be >= 2");
    if (cfg.width < 1 || cfg.depth < 1) throw ConfigError("init_model: width and depth must be >= 1");
    if (cfg.ff_width < 32) throw ConfigError("init_model: neuron axis (ff_width) must be >= 32");
    if (cfg.context < 1) throw ConfigError("init_model: context must be >= 1");

    Rng rng(derive_seed(seed, "model-init"));
    const auto V = static_cast<std::size_t>(cfg.vocab);
    const auto W = static_cast<std::size_t>(cfg.width);
    const auto F = static_cast<std::size_t>(cfg.ff_width);
    const auto C = static_cast<std::size_t>(cfg.context);

    ModelState m;
    m.cfg = cfg;
    m.rng_seed = seed;
    m.params.embed = gaussian_tensor(V, W, 0.25, rng);
    m.params.pos = gaussian_tensor(C, W, 0.1, rng);
    m.params.w_in = gaussian_tensor(4 * W, W, 1.0 / std::sqrt(4.0 * static_cast<double>(W)), rng);
    m.params.b_in = const_tensor(1, W, 0.0);
    for (int b = 0; b < cfg.depth; ++b) {
        ModelParams::Block blk;
        blk.norm_gain = const_tensor(1, W, 1.0);
        blk.w1 = gaussian_tensor(W, F, 1.0 / std::sqrt(static_cast<double>(W)), rng);
        blk.b1 = const_tensor(1, F, 0.0);
        blk.w2 = gaussian_tensor(F, W, 0.5 / std::sqrt(static_cast<double>(F)), rng);
        blk.b2 = const_tensor(1, W, 0.0);
        m.params.blocks.push_back(std::move(blk));
    }
    m.params.out_gain = const_tensor(1, W, 1.0);
    m.params.w_out = gaussian_tensor(W, V, 0.5 / std::sqrt(static_cast<double>(W)), rng);
    m.params.b_out = const_tensor(1, V, 0.0);
    return m;
}

namespace {

Tensor mixed_inputs(const ModelParams& p, const ModelConfig& cfg, const TokenSeq& tokens) {
    if (tokens.empty()) throw std::invalid_argument("seq_states: empty token sequence");
    std::vector<int> pos_ids(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t)
        pos_ids[t] = static_cast<int>(std::min<std::size_t>(t, static_cast<std::size_t>(cfg.context - 1)));
    Tensor x = add(rows_select(p.embed, tokens), rows_select(p.pos, pos_ids));
    Tensor cs = ema_scan(x, cfg.decay_short);
    Tensor cl = ema_scan(x, cfg.decay_long);
    Tensor cm = prefix_mean(x);
    return concat_cols({x, cs, cl, cm});
}

Tensor blocks_and_norm(const ModelParams& p, Tensor u) {
    for (const auto& blk : p.blocks) {
        Tensor nrm = rmsnorm_rows(u, blk.norm_gain);
        Tensor a = gelu(add_rowvec(matmul(nrm, blk.w1), blk.b1));
        u = add(u, add_rowvec(matmul(a, blk.w2), blk.b2));
    }
    return rmsnorm_rows(u, p.out_gain);
}

}  // namespace

Tensor seq_states(const ModelParams& p, const ModelConfig& cfg, const TokenSeq& tokens) {
    Tensor mixed = mixed_inputs(p, cfg, tokens);
    Tensor u = add_rowvec(matmul(mixed, p.w_in), p.b_in);
    return blocks_and_norm(p, u);
}

Tensor states_at(const ModelParams& p, const ModelConfig& cfg, const TokenSeq& tokens,
                 const std::vector<int>& positions) {
    Tensor mixed = mixed_inputs(p, cfg, tokens);
    Tensor u = add_rowvec(matmul(rows_select(mixed, positions), p.w_in), p.b_in);
    return blocks_and_norm(p, u);
}

Tensor logits_at(const ModelParams& p, const Tensor& states, const std::vector<int>& positions) {
    return add_rowvec(matmul(rows_select(states, positions), p.w_out), p.b_out);
}

namespace {

// positions whose logits predict each answer token of question+answer
std::vector<int> answer_positions(const TokenSeq& question, const TokenSeq& answer) {
    std::vector<int> pos(answer.size());
    for (std::size_t j = 0; j < answer.size(); ++j)
        pos[j] = static_cast<int>(question.size() - 1 + j);
    return pos;
}

}  // namespace

double nll_with(const ModelParams& p, const ModelConfig& cfg, const TokenSeq& question,
                const TokenSeq& answer) {
    if (answer.empty()) throw std::invalid_argument("nll: empty answer");
    if (question.empty()) throw std::invalid_argument("nll: empty question");
    TokenSeq full = question;
    full.insert(full.end(), answer.begin(), answer.end());
    Tensor states = states_at(p, cfg, full, answer_positions(question, answer));
    Tensor logp = log_softmax_rows(add_rowvec(matmul(states, p.w_out), p.b_out));
    std::vector<double> w(answer.size(), 1.0 / static_cast<double>(answer.size()));
    return picked_nll(logp, answer, w).item();
}

double nll(const ModelState& m, const TokenSeq& question, const TokenSeq& answer) {
    return nll_with(m.params, m.cfg, question, answer);
}

double sequence_logprob(const ModelState& m, const TokenSeq& question, const TokenSeq& answer) {
    return -static_cast<double>(answer.size()) * nll(m, question, answer);
}

// ---- incremental no-grad forward (decode, neuron statistics) ----

namespace {

class SeqRunner {
public:
    SeqRunner(const ModelParams& p, const ModelConfig& cfg)
        : p_(p),
          cfg_(cfg),
          w_(static_cast<std::size_t>(cfg.width)),
          ff_(static_cast<std::size_t>(cfg.ff_width)),
          cs_(w_, 0.0),
          cl_(w_, 0.0),
          csum_(w_, 0.0),
          u_(w_, 0.0),
          acts_(static_cast<std::size_t>(cfg.depth) * ff_, 0.0),
          scratch_in_(4 * w_),
          scratch_row_(w_),
          scratch_ff_(ff_) {}

    void feed(int token) {
        const double* er = p_.embed.value().data() + static_cast<std::size_t>(token) * w_;
        const std::size_t pidx =
            std::min<std::size_t>(t_, static_cast<std::size_t>(cfg_.context - 1));
        const double* pr = p_.pos.value().data() + pidx * w_;
        const double inv = 1.0 / static_cast<double>(t_ + 1);
        for (std::size_t j = 0; j < w_; ++j) {
            const double x = er[j] + pr[j];
            cs_[j] = cfg_.decay_short * cs_[j] + (1.0 - cfg_.decay_short) * x;
            cl_[j] = cfg_.decay_long * cl_[j] + (1.0 - cfg_.decay_long) * x;
            csum_[j] += x;
            scratch_in_[j] = x;
            scratch_in_[w_ + j] = cs_[j];
            scratch_in_[2 * w_ + j] = cl_[j];
            scratch_in_[3 * w_ + j] = csum_[j] * inv;
        }
        kern::gemm_nn(scratch_in_.data(), p_.w_in.value().data(), u_.data(), 1, 4 * w_, w_, false);
        for (std::size_t j = 0; j < w_; ++j) u_[j] += p_.b_in.value()[j];
        for (std::size_t b = 0; b < p_.blocks.size(); ++b) {
            const auto& blk = p_.blocks[b];
            kern::rmsnorm_row(u_.data(), blk.norm_gain.value().data(), scratch_row_.data(), w_,
                              1e-8);
            kern::gemm_nn(scratch_row_.data(), blk.w1.value().data(), scratch_ff_.data(), 1, w_,
                          ff_, false);
            double* act = acts_.data() + b * ff_;
            for (std::size_t j = 0; j < ff_; ++j)
                act[j] = kern::gelu_scalar(scratch_ff_[j] + blk.b1.value()[j]);
            kern::gemm_nn(act, blk.w2.value().data(), scratch_row_.data(), 1, ff_, w_, false);
            for (std::size_t j = 0; j < w_; ++j) u_[j] += scratch_row_[j] + blk.b2.value()[j];
        }
        ++t_;
    }

    void logits(std::vector<double>& out) const {
        std::vector<double> s(w_);
        kern::rmsnorm_row(u_.data(), p_.out_gain.value().data(), s.data(), w_, 1e-8);
        out.resize(static_cast<std::size_t>(cfg_.vocab));
        kern::gemm_nn(s.data(), p_.w_out.value().data(), out.data(), 1, w_,
                      static_cast<std::size_t>(cfg_.vocab), false);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += p_.b_out.value()[j];
    }

    const std::vector<double>& activations() const { return acts_; }

private:
    const ModelParams& p_;
    const ModelConfig& cfg_;
    std::size_t w_, ff_;
    std::vector<double> cs_, cl_, csum_, u_, acts_, scratch_in_, scratch_row_, scratch_ff_;
    std::size_t t_ = 0;
};

int argmax_lowest_id(const std::vector<double>& v) {
    int best = 0;
    for (std::size_t j = 1; j < v.size(); ++j)
        if (v[j] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    return best;
}

}  // namespace

TokenSeq greedy_decode(const ModelState& m, const TokenSeq& question, int max_len) {
    if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
    if (question.empty()) throw std::invalid_argument("greedy_decode: empty question");
    SeqRunner runner(m.params, m.cfg);
    for (int tok : question) runner.feed(tok);
    TokenSeq out;
    std::vector<double> lg;
    for (int step = 0; step < max_len; ++step) {
        runner.logits(lg);
        const int tok = argmax_lowest_id(lg);
        if (tok == m.cfg.end_token) break;
        out.push_back(tok);
        runner.feed(tok);
    }
    return out;
}

ParamVec grad(ModelState& m, const std::function<Tensor()>& loss_thunk, const std::string& label,
              double* loss_value) {
    m.params.for_each([](const std::string&, Tensor& t) {
        t.node()->ensure_grad();
        std::fill(t.grad().begin(), t.grad().end(), 0.0);
    });
    Tensor loss = loss_thunk();
    if (loss.size() != 1) throw std::invalid_argument("grad: loss thunk must return a scalar");
    if (!std::isfinite(loss.item()))
        throw NumericError("non-finite loss in " + label);
    if (loss_value) *loss_value = loss.item();
    backward(loss);
    ParamVec g;
    m.params.for_each([&g](const std::string&, Tensor& t) {
        t.node()->ensure_grad();
        g.slots.push_back(t.grad());
    });
    return g;
}

void sgd_step(ModelState& m, const ParamVec& gradient, double lr, const ParamVec* param_mask) {
    if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be > 0");
    std::size_t idx = 0;
    m.params.for_each([&](const std::string& name, Tensor& t) {
        if (idx >= gradient.slots.size() || gradient.slots[idx].size() != t.size())
            throw std::invalid_argument("sgd_step: gradient shape mismatch at " + name);
        const auto& g = gradient.slots[idx];
        if (param_mask) {
            if (param_mask->slots.size() != gradient.slots.size() ||
                param_mask->slots[idx].size() != t.size())
                throw std::invalid_argument("sgd_step: mask shape mismatch at " + name);
            const auto& mk = param_mask->slots[idx];
            for (std::size_t j = 0; j < g.size(); ++j)
                if (mk[j] != 0.0) t.value()[j] -= lr * mk[j] * g[j];
        } else {
            for (std::size_t j = 0; j < g.size(); ++j) t.value()[j] -= lr * g[j];
        }
        ++idx;
    });
}

double NeuronStats::mean_abs(std::size_t n) const {
    return sum_abs[n] / static_cast<double>(count);
}
double NeuronStats::freq(std::size_t n) const {
    return static_cast<double>(pos_count[n]) / static_cast<double>(count);
}
double NeuronStats::variance(std::size_t n) const {
    const double mean = sum[n] / static_cast<double>(count);
    const double msq = sum_sq[n] / static_cast<double>(count);
    return std::max(0.0, msq - mean * mean);
}
double NeuronStats::rms(std::size_t n) const {
    return std::sqrt(sum_sq[n] / static_cast<double>(count));
}

NeuronStats collect_neuron_stats(const ModelState& m, const std::vector<TokenSeq>& dataset) {
    if (dataset.empty()) throw std::invalid_argument("collect_neuron_stats: empty dataset");
    const std::size_t n = static_cast<std::size_t>(neuron_count(m.cfg));
    NeuronStats st;
    st.neurons = n;
    st.sum_abs.assign(n, 0.0);
    st.sum.assign(n, 0.0);
    st.sum_sq.assign(n, 0.0);
    st.pos_count.assign(n, 0);
    for (const auto& seq : dataset) {
        if (seq.empty()) continue;
        SeqRunner runner(m.params, m.cfg);
        for (int tok : seq) {
            runner.feed(tok);
            const auto& a = runner.activations();
            for (std::size_t j = 0; j < n; ++j) {
                st.sum_abs[j] += std::abs(a[j]);
                st.sum[j] += a[j];
                st.sum_sq[j] += a[j] * a[j];
                if (a[j] > 0.0) ++st.pos_count[j];
            }
            ++st.count;
        }
    }
    if (st.count == 0) throw std::invalid_argument("collect_neuron_stats: no positions accumulated");
    return st;
}

int neuron_count(const ModelConfig& cfg) { return cfg.depth * cfg.ff_width; }

void prune_neurons(ModelState& m, const std::vector<int>& neuron_ids) {
    const int total = neuron_count(m.cfg);
    const auto W = static_cast<std::size_t>(m.cfg.width);
    const auto F = static_cast<std::size_t>(m.cfg.ff_width);
    for (int id : neuron_ids) {
        if (id < 0 || id >= total)
            throw std::invalid_argument("prune_neurons: neuron id out of range: " +
                                        std::to_string(id));
        auto& blk = m.params.blocks[static_cast<std::size_t>(id) / F];
        const std::size_t unit = static_cast<std::size_t>(id) % F;
        for (std::size_t i = 0; i < W; ++i) blk.w1.value()[i * F + unit] = 0.0;  // incoming
        blk.b1.value()[unit] = 0.0;
        for (std::size_t j = 0; j < W; ++j) blk.w2.value()[unit * W + j] = 0.0;  // outgoing
    }
}

}  // namespace unlab
