#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

namespace unlab {

// Eager reverse-mode autodiff over row-major 2D tensors (vectors are 1xN,
// scalars 1x1). Ops compute values immediately and record a backward closure;
// backward() runs the tape in reverse topological order. Double precision
// throughout: the gradient and reduction test tolerances (1e-10 .. 1e-12)
// rule out float.
struct TensorNode {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::size_t size() const { return rows * cols; }
    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
    static Tensor from_values(std::size_t rows, std::size_t cols, std::vector<double> v,
                              bool requires_grad = false);
    static Tensor scalar_const(double v);

    bool valid() const { return node_ != nullptr; }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->size(); }
    std::vector<double>& value() { return node_->val; }
    const std::vector<double>& value() const { return node_->val; }
    std::vector<double>& grad() { return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }
    double item() const { return node_->val[0]; }
    TensorNode* node() const { return node_.get(); }
    std::shared_ptr<TensorNode> shared() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

// Runs reverse-mode accumulation from a scalar loss. Zeroes the grads of all
// reachable nodes first, then seeds d(loss)/d(loss) = 1.
void backward(const Tensor& loss);

// ---- ops ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);          // same shape
Tensor add_rowvec(const Tensor& a, const Tensor& b);   // b is 1 x cols, broadcast over rows
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor mul(const Tensor& a, const Tensor& b);          // elementwise
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);                      // log(1 + e^x), overflow-safe
Tensor gelu(const Tensor& a);                          // tanh approximation
Tensor rmsnorm_rows(const Tensor& a, const Tensor& gain, double eps = 1e-8);
Tensor log_softmax_rows(const Tensor& a);
Tensor rows_select(const Tensor& table, const std::vector<int>& ids);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor ema_scan(const Tensor& x, double decay);        // c_t = decay*c_{t-1} + (1-decay)*x_t
Tensor prefix_mean(const Tensor& x);                   // c_t = mean(x_0 .. x_t)
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_squares(const Tensor& a);
// weighted negative log-likelihood of picked entries: -sum_i w_i * logp[i, target_i]
Tensor picked_nll(const Tensor& log_probs, const std::vector<int>& targets,
                  const std::vector<double>& weights);
// same, restricted to the row range [row0, row0 + targets.size())
Tensor picked_nll_rows(const Tensor& log_probs, std::size_t row0, const std::vector<int>& targets,
                       const std::vector<double>& weights);
// soft-target cross entropy: -sum_i w_i * sum_v targets[i,v] * logp[i,v]
Tensor soft_cross_entropy(const Tensor& log_probs, const std::vector<double>& targets,
                          const std::vector<double>& weights);
// weighted sum of scalar tensors: sum_i coeffs_i * terms_i (shapes must all be 1x1)
Tensor weighted_sum(const std::vector<Tensor>& terms, const std::vector<double>& coeffs);

// ---- raw kernels (shared by the tape ops and no-grad forward paths) ----
namespace kern {
// C[m x n] = A[m x k] * B[k x n]   (accumulate: +=)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
// C[m x n] = A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
// C[m x n] = A[k x m]^T * B[k x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
double gelu_scalar(double x);
double gelu_deriv_scalar(double x);
void rmsnorm_row(const double* x, const double* gain, double* y, std::size_t n, double eps);
void log_softmax_row(const double* x, double* y, std::size_t n);
}  // namespace kern

}  // namespace unlab
