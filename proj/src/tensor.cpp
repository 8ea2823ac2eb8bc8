#include "unlab/tensor.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace unlab {

namespace kern {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            if (av == 0.0) continue;
            const double* brow = b + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t l = 0; l < k; ++l) s += arow[l] * brow[l];
            if (accumulate)
                crow[j] += s;
            else
                crow[j] = s;
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    for (std::size_t l = 0; l < k; ++l) {
        const double* arow = a + l * m;
        const double* brow = b + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu_scalar(double x) {
    const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
    return 0.5 * x * (1.0 + t);
}

double gelu_deriv_scalar(double x) {
    const double inner = kGeluC * (x + kGeluA * x * x * x);
    const double t = std::tanh(inner);
    const double dinner = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

void rmsnorm_row(const double* x, const double* gain, double* y, std::size_t n, double eps) {
    double ms = 0.0;
    for (std::size_t j = 0; j < n; ++j) ms += x[j] * x[j];
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(n) + eps);
    for (std::size_t j = 0; j < n; ++j) y[j] = gain[j] * x[j] * inv;
}

void log_softmax_row(const double* x, double* y, std::size_t n) {
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
}

}  // namespace kern

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->rows = rows;
    n->cols = cols;
    n->val.assign(rows * cols, 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_values(std::size_t rows, std::size_t cols, std::vector<double> v,
                           bool requires_grad) {
    assert(v.size() == rows * cols);
    auto n = std::make_shared<TensorNode>();
    n->rows = rows;
    n->cols = cols;
    n->val = std::move(v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar_const(double v) { return from_values(1, 1, {v}, false); }

namespace {

Tensor make_node(std::size_t rows, std::size_t cols, std::vector<std::shared_ptr<TensorNode>> parents,
                 std::function<void(TensorNode&)> back) {
    auto n = std::make_shared<TensorNode>();
    n->rows = rows;
    n->cols = cols;
    n->val.assign(rows * cols, 0.0);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(back);
    }
    return Tensor(std::move(n));
}

void topo_visit(TensorNode* node, std::unordered_set<TensorNode*>& seen,
                std::vector<TensorNode*>& order) {
    if (!node->requires_grad || seen.count(node)) return;
    seen.insert(node);
    for (const auto& p : node->parents) topo_visit(p.get(), seen, order);
    order.push_back(node);
}

}  // namespace

void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    std::unordered_set<TensorNode*> seen;
    std::vector<TensorNode*> order;
    topo_visit(loss.node(), seen, order);
    for (TensorNode* n : order) {
        n->ensure_grad();
        std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
    if (order.empty()) return;
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    auto pa = a.shared();
    auto pb = b.shared();
    Tensor out = make_node(a.rows(), b.cols(), {pa, pb}, [pa, pb](TensorNode& n) {
        const std::size_t m = pa->rows, k = pa->cols, cols = pb->cols;
        if (pa->requires_grad) {
            pa->ensure_grad();
            kern::gemm_nt(n.grad.data(), pb->val.data(), pa->grad.data(), m, cols, k, true);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            kern::gemm_tn(pa->val.data(), n.grad.data(), pb->grad.data(), k, m, cols, true);
        }
    });
    kern::gemm_nn(pa->val.data(), pb->val.data(), out.value().data(), a.rows(), a.cols(), b.cols(),
                  false);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("add: shape mismatch");
    auto pa = a.shared();
    auto pb = b.shared();
    Tensor out = make_node(a.rows(), a.cols(), {pa, pb}, [pa, pb](TensorNode& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i];
        }
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = pa->val[i] + pb->val[i];
    return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    if (b.rows() != 1 || b.cols() != a.cols())
        throw std::invalid_argument("add_rowvec: bias must be 1 x cols");
    auto pa = a.shared();
    auto pb = b.shared();
    Tensor out = make_node(a.rows(), a.cols(), {pa, pb}, [pa, pb](TensorNode& n) {
        const std::size_t cols = n.cols;
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t r = 0; r < n.rows; ++r)
                for (std::size_t j = 0; j < cols; ++j) pb->grad[j] += n.grad[r * cols + j];
        }
    });
    const std::size_t cols = a.cols();
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t j = 0; j < cols; ++j)
            out.value()[r * cols + j] = pa->val[r * cols + j] + pb->val[j];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    auto pa = a.shared();
    Tensor out = make_node(a.rows(), a.cols(), {pa}, [pa, c](TensorNode& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += c * n.grad[i];
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = c * pa->val[i];
    return out;
}

Tensor add_const(const Tensor& a, double c) {
    auto pa = a.shared();
    Tensor out = make_node(a.rows(), a.cols(), {pa}, [pa](TensorNode& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = pa->val[i] + c;
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("mul: shape mismatch");
    auto pa = a.shared();
    auto pb = b.shared();
    Tensor out = make_node(a.rows(), a.cols(), {pa, pb}, [pa, pb](TensorNode& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += pb->val[i] * n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += pa->val[i] * n.grad[i];
        }
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = pa->val[i] * pb->val[i];
    return out;
}

Tensor relu(const Tensor& a) {
    auto pa = a.shared();
    Tensor out = make_node(a.rows(), a.cols(), {pa}, [pa](TensorNode& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (pa->val[i] > 0.0) pa->grad[i] += n.grad[i];
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = std::max(0.0, pa->val[i]);
    return out;
}

Tensor softplus(const Tensor& a) {
    auto pa = a.shared();
    Tensor out = make_node(a.rows(), a.cols(), {pa}, [pa](TensorNode& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double x = pa->val[i];
            const double sig = 1.0 / (1.0 + std::exp(-x));
            pa->grad[i] += sig * n.grad[i];
        }
    });
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = pa->val[i];
        out.value()[i] = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    return out;
}

Tensor gelu(const Tensor& a) {
    auto pa = a.shared();
    Tensor out = make_node(a.rows(), a.cols(), {pa}, [pa](TensorNode& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] += kern::gelu_deriv_scalar(pa->val[i]) * n.grad[i];
    });
    for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = kern::gelu_scalar(pa->val[i]);
    return out;
}

Tensor rmsnorm_rows(const Tensor& a, const Tensor& gain, double eps) {
    if (gain.rows() != 1 || gain.cols() != a.cols())
        throw std::invalid_argument("rmsnorm_rows: gain must be 1 x cols");
    auto pa = a.shared();
    auto pg = gain.shared();
    Tensor out = make_node(a.rows(), a.cols(), {pa, pg}, [pa, pg, eps](TensorNode& n) {
        const std::size_t cols = n.cols;
        const double dn = static_cast<double>(cols);
        for (std::size_t r = 0; r < n.rows; ++r) {
            const double* x = pa->val.data() + r * cols;
            const double* dy = n.grad.data() + r * cols;
            double ms = 0.0;
            for (std::size_t j = 0; j < cols; ++j) ms += x[j] * x[j];
            const double inv = 1.0 / std::sqrt(ms / dn + eps);
            if (pg->requires_grad) {
                pg->ensure_grad();
                for (std::size_t j = 0; j < cols; ++j) pg->grad[j] += dy[j] * x[j] * inv;
            }
            if (pa->requires_grad) {
                pa->ensure_grad();
                double dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * pg->val[j] * x[j];
                const double coef = inv * inv * inv / dn * dot;
                double* dx = pa->grad.data() + r * cols;
                for (std::size_t j = 0; j < cols; ++j)
                    dx[j] += dy[j] * pg->val[j] * inv - coef * x[j];
            }
        }
    });
    const std::size_t cols = a.cols();
    for (std::size_t r = 0; r < a.rows(); ++r)
        kern::rmsnorm_row(pa->val.data() + r * cols, pg->val.data(), out.value().data() + r * cols,
                          cols, eps);
    return out;
}

Tensor log_softmax_rows(const Tensor& a) {
    auto pa = a.shared();
    Tensor out = make_node(a.rows(), a.cols(), {pa}, [pa](TensorNode& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const std::size_t cols = n.cols;
        for (std::size_t r = 0; r < n.rows; ++r) {
            const double* y = n.val.data() + r * cols;
            const double* dy = n.grad.data() + r * cols;
            double* dx = pa->grad.data() + r * cols;
            double gsum = 0.0;
            for (std::size_t j = 0; j < cols; ++j) gsum += dy[j];
            for (std::size_t j = 0; j < cols; ++j) dx[j] += dy[j] - std::exp(y[j]) * gsum;
        }
    });
    const std::size_t cols = a.cols();
    for (std::size_t r = 0; r < a.rows(); ++r)
        kern::log_softmax_row(pa->val.data() + r * cols, out.value().data() + r * cols, cols);
    return out;
}

Tensor rows_select(const Tensor& table, const std::vector<int>& ids) {
    auto pt = table.shared();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= table.rows())
            throw std::invalid_argument("rows_select: index out of range");
    auto ids_copy = ids;
    Tensor out = make_node(ids.size(), table.cols(), {pt}, [pt, ids_copy](TensorNode& n) {
        if (!pt->requires_grad) return;
        pt->ensure_grad();
        const std::size_t cols = n.cols;
        for (std::size_t r = 0; r < ids_copy.size(); ++r) {
            double* dst = pt->grad.data() + static_cast<std::size_t>(ids_copy[r]) * cols;
            const double* src = n.grad.data() + r * cols;
            for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
        }
    });
    const std::size_t cols = table.cols();
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const double* src = pt->val.data() + static_cast<std::size_t>(ids[r]) * cols;
        std::copy(src, src + cols, out.value().data() + r * cols);
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const std::size_t rows = parts[0].rows();
    std::size_t total = 0;
    std::vector<std::shared_ptr<TensorNode>> ps;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        total += p.cols();
        ps.push_back(p.shared());
    }
    Tensor out = make_node(rows, total, ps, [ps](TensorNode& n) {
        std::size_t off = 0;
        for (const auto& p : ps) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t r = 0; r < n.rows; ++r)
                    for (std::size_t j = 0; j < p->cols; ++j)
                        p->grad[r * p->cols + j] += n.grad[r * n.cols + off + j];
            }
            off += p->cols;
        }
    });
    std::size_t off = 0;
    for (const auto& p : ps) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < p->cols; ++j)
                out.value()[r * total + off + j] = p->val[r * p->cols + j];
        off += p->cols;
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    const std::size_t cols = parts[0].cols();
    std::size_t total = 0;
    std::vector<std::shared_ptr<TensorNode>> ps;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
        total += p.rows();
        ps.push_back(p.shared());
    }
    Tensor out = make_node(total, cols, ps, [ps](TensorNode& n) {
        std::size_t off = 0;
        for (const auto& p : ps) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < p->val.size(); ++i)
                    p->grad[i] += n.grad[off * n.cols + i];
            }
            off += p->rows;
        }
    });
    std::size_t off = 0;
    for (const auto& p : ps) {
        std::copy(p->val.begin(), p->val.end(), out.value().begin() + off * cols);
        off += p->rows;
    }
    return out;
}

Tensor ema_scan(const Tensor& x, double decay) {
    auto px = x.shared();
    Tensor out = make_node(x.rows(), x.cols(), {px}, [px, decay](TensorNode& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const std::size_t cols = n.cols;
        // reverse recurrence: g_t = dc_t + decay * g_{t+1}; dx_t = (1-decay) * g_t
        std::vector<double> g(cols, 0.0);
        for (std::size_t t = n.rows; t-- > 0;) {
            const double* dc = n.grad.data() + t * cols;
            double* dx = px->grad.data() + t * cols;
            for (std::size_t j = 0; j < cols; ++j) {
                g[j] = dc[j] + decay * g[j];
                dx[j] += (1.0 - decay) * g[j];
            }
        }
    });
    const std::size_t cols = x.cols();
    std::vector<double> c(cols, 0.0);
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const double* xt = px->val.data() + t * cols;
        double* ot = out.value().data() + t * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            c[j] = decay * c[j] + (1.0 - decay) * xt[j];
            ot[j] = c[j];
        }
    }
    return out;
}

Tensor prefix_mean(const Tensor& x) {
    auto px = x.shared();
    Tensor out = make_node(x.rows(), x.cols(), {px}, [px](TensorNode& n) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const std::size_t cols = n.cols;
        // dx_j = sum_{t >= j} dc_t / (t+1): reverse cumulative sum
        std::vector<double> acc(cols, 0.0);
        for (std::size_t t = n.rows; t-- > 0;) {
            const double inv = 1.0 / static_cast<double>(t + 1);
            const double* dc = n.grad.data() + t * cols;
            double* dx = px->grad.data() + t * cols;
            for (std::size_t j = 0; j < cols; ++j) {
                acc[j] += dc[j] * inv;
                dx[j] += acc[j];
            }
        }
    });
    const std::size_t cols = x.cols();
    std::vector<double> run(cols, 0.0);
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const double* xt = px->val.data() + t * cols;
        double* ot = out.value().data() + t * cols;
        const double inv = 1.0 / static_cast<double>(t + 1);
        for (std::size_t j = 0; j < cols; ++j) {
            run[j] += xt[j];
            ot[j] = run[j] * inv;
        }
    }
    return out;
}

Tensor sum_all(const Tensor& a) {
    auto pa = a.shared();
    Tensor out = make_node(1, 1, {pa}, [pa](TensorNode& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (double& g : pa->grad) g += n.grad[0];
    });
    double s = 0.0;
    for (double v : pa->val) s += v;
    out.value()[0] = s;
    return out;
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_squares(const Tensor& a) {
    auto pa = a.shared();
    Tensor out = make_node(1, 1, {pa}, [pa](TensorNode& n) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < pa->val.size(); ++i)
            pa->grad[i] += 2.0 * pa->val[i] * n.grad[0];
    });
    double s = 0.0;
    for (double v : pa->val) s += v * v;
    out.value()[0] = s;
    return out;
}

Tensor picked_nll_rows(const Tensor& log_probs, std::size_t row0, const std::vector<int>& targets,
                       const std::vector<double>& weights) {
    if (weights.size() != targets.size() || row0 + targets.size() > log_probs.rows())
        throw std::invalid_argument("picked_nll_rows: row range out of bounds");
    auto pl = log_probs.shared();
    auto t = targets;
    auto w = weights;
    Tensor out = make_node(1, 1, {pl}, [pl, row0, t, w](TensorNode& n) {
        if (!pl->requires_grad) return;
        pl->ensure_grad();
        for (std::size_t r = 0; r < t.size(); ++r)
            pl->grad[(row0 + r) * pl->cols + static_cast<std::size_t>(t[r])] -= w[r] * n.grad[0];
    });
    double s = 0.0;
    for (std::size_t r = 0; r < t.size(); ++r)
        s -= w[r] * pl->val[(row0 + r) * pl->cols + static_cast<std::size_t>(t[r])];
    out.value()[0] = s;
    return out;
}

Tensor picked_nll(const Tensor& log_probs, const std::vector<int>& targets,
                  const std::vector<double>& weights) {
    if (targets.size() != log_probs.rows())
        throw std::invalid_argument("picked_nll: row count mismatch");
    return picked_nll_rows(log_probs, 0, targets, weights);
}

Tensor soft_cross_entropy(const Tensor& log_probs, const std::vector<double>& targets,
                          const std::vector<double>& weights) {
    if (targets.size() != log_probs.size() || weights.size() != log_probs.rows())
        throw std::invalid_argument("soft_cross_entropy: size mismatch");
    auto pl = log_probs.shared();
    auto t = targets;
    auto w = weights;
    Tensor out = make_node(1, 1, {pl}, [pl, t, w](TensorNode& n) {
        if (!pl->requires_grad) return;
        pl->ensure_grad();
        const std::size_t cols = pl->cols;
        for (std::size_t r = 0; r < pl->rows; ++r)
            for (std::size_t j = 0; j < cols; ++j)
                pl->grad[r * cols + j] -= w[r] * t[r * cols + j] * n.grad[0];
    });
    double s = 0.0;
    const std::size_t cols = log_probs.cols();
    for (std::size_t r = 0; r < log_probs.rows(); ++r) {
        double row = 0.0;
        for (std::size_t j = 0; j < cols; ++j) row += t[r * cols + j] * pl->val[r * cols + j];
        s -= w[r] * row;
    }
    out.value()[0] = s;
    return out;
}

Tensor weighted_sum(const std::vector<Tensor>& terms, const std::vector<double>& coeffs) {
    if (terms.empty() || terms.size() != coeffs.size())
        throw std::invalid_argument("weighted_sum: size mismatch");
    std::vector<std::shared_ptr<TensorNode>> ps;
    for (const auto& t : terms) {
        if (t.size() != 1) throw std::invalid_argument("weighted_sum: terms must be scalar");
        ps.push_back(t.shared());
    }
    auto c = coeffs;
    Tensor out = make_node(1, 1, ps, [ps, c](TensorNode& n) {
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (!ps[i]->requires_grad) continue;
            ps[i]->ensure_grad();
            ps[i]->grad[0] += c[i] * n.grad[0];
        }
    });
    double s = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) s += c[i] * ps[i]->val[0];
    out.value()[0] = s;
    return out;
}

}  // namespace unlab
