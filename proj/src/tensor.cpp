#include "bet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "bet/errors.hpp"

namespace bet {

namespace {

thread_local bool g_grad_enabled = true;

using detail::Node;

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " + to_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
}

// c[m×n] += a[m×k] · b[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m×k] += a[m×n] · b[k×n]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            c[i * k + p] += acc;
        }
    }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

std::shared_ptr<Node> new_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + to_string(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << "x";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::span<double> detail::Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    return Tensor(new_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    const auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
    return from({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return from({r, c}, std::move(data), requires_grad);
}

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
    std::vector<double> data(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) data[i * n + i] = 1.0;
    return from({n, n}, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw ContractViolation("use of an undefined tensor");
    return node_->shape;
}

std::size_t Tensor::size() const { return numel(shape()); }

std::size_t Tensor::rows() const {
    const auto& s = shape();
    return s.size() == 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const {
    const auto& s = shape();
    if (s.size() == 2) return s[1];
    if (s.size() == 1) return s[0];
    return 1;
}

std::span<const double> Tensor::data() const {
    shape();
    return node_->value;
}

std::span<double> Tensor::mutable_data() {
    shape();
    if (!node_->parents.empty() || node_->backward) {
        throw ContractViolation("cannot write into a tensor produced by an operation");
    }
    return node_->value;
}

double Tensor::at(std::size_t i, std::size_t j) const { return data()[i * cols() + j]; }

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    shape();
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

Tensor Tensor::detach(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }

void Tensor::backward() const {
    if (size() != 1) {
        throw ContractViolation("backward() requires a scalar loss, got shape " + to_string(shape()));
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS over nodes that carry gradients.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* node : order) {
        if (!node->parents.empty()) node->grad.assign(node->value.size(), 0.0);
    }
    node_->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

Tensor make_op_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                      std::function<void(detail::Node&)> backward) {
    return make_op_result(std::move(shape), std::move(value), std::vector<Tensor>(inputs), std::move(backward));
}

Tensor make_op_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                      std::function<void(detail::Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
        const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            for (const auto& t : inputs) node->parents.push_back(t.node());
            node->backward = std::move(backward);
        }
    }
    return Tensor(std::move(node));
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// BoolMask

BoolMask::BoolMask(std::size_t rows, std::size_t cols, bool value)
    : rows_(rows), cols_(cols), bits_(rows * cols, value ? 1 : 0) {}

BoolMask BoolMask::causal(std::size_t n) {
    BoolMask mask(n, n, false);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) mask.set(i, j, true);
    return mask;
}

std::size_t BoolMask::visible_in_row(std::size_t i) const {
    std::size_t count = 0;
    for (std::size_t j = 0; j < cols_; ++j) count += bits_[i * cols_ + j];
    return count;
}

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " · " +
                             to_string(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) gemm_nt(self.grad.data(), pb.value.data(), pa.grad_buffer().data(), m, n, k);
        if (pb.requires_grad) gemm_tn(pa.value.data(), self.grad.data(), pb.grad_buffer().data(), m, k, n);
    });
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    const auto in = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
    return make_op_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    }
    const auto in = a.data();
    return make_op_result(std::move(shape), std::vector<double>(in.begin(), in.end()), {a}, [](Node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (auto& parent : self.parents) {
            if (!parent->requires_grad) continue;
            auto g = parent->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_rank2(x, "add_bias");
    const std::size_t n = x.rows(), d = x.cols();
    if (bias.size() != d) {
        throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " vs input " + to_string(x.shape()));
    }
    const auto xv = x.data(), bv = bias.data();
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] + bv[j];
    return make_op_result(x.shape(), std::move(out), {x, bias}, [n, d](Node& self) {
        Node& px = *self.parents[0];
        Node& pb = *self.parents[1];
        if (px.requires_grad) {
            auto g = px.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto g = pb.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return make_op_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            auto g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    const auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    return make_op_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Tensor sum(const Tensor& a) {
    const auto x = a.data();
    const double total = std::accumulate(x.begin(), x.end(), 0.0);
    return make_op_result({}, {total}, {a}, [](Node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (double& v : g) v += self.grad[0];
    });
}

Tensor mean_of(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractViolation("mean_of: no inputs");
    for (const auto& p : parts) require_same_shape(parts.front(), p, "mean_of");
    const double inv = 1.0 / static_cast<double>(parts.size());
    std::vector<double> out(parts.front().size(), 0.0);
    for (const auto& p : parts) {
        const auto x = p.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
    }
    for (double& v : out) v *= inv;
    return make_op_result(parts.front().shape(), std::move(out), parts, [inv](Node& self) {
        for (auto& parent : self.parents) {
            if (!parent->requires_grad) continue;
            auto g = parent->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * inv;
        }
    });
}

Tensor sigmoid(const Tensor& a) {
    const auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        // Branch keeps exp() argument non-positive.
        out[i] = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
    }
    return make_op_result(a.shape(), std::move(out), {a}, [](Node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = self.value[i];
            g[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Tensor gelu(const Tensor& a) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    const auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
    }
    return make_op_result(a.shape(), std::move(out), {a}, [](Node& self) {
        Node& p = *self.parents[0];
        auto g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = p.value[i];
            const double t = std::tanh(kC * (v + kA * v * v * v));
            const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
            g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
        }
    });
}

Tensor masked_row_softmax(const Tensor& logits, const BoolMask& mask) {
    require_rank2(logits, "masked_row_softmax");
    const std::size_t n = logits.rows(), m = logits.cols();
    if (mask.rows() != n || mask.cols() != m) {
        throw DimensionError("masked_row_softmax: mask " + std::to_string(mask.rows()) + "x" +
                             std::to_string(mask.cols()) + " vs logits " + to_string(logits.shape()));
    }
    const auto z = logits.data();
    std::vector<double> out(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        bool any = false;
        double mx = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (!mask.visible(i, j)) continue;
            mx = any ? std::max(mx, z[i * m + j]) : z[i * m + j];
            any = true;
        }
        if (!any) {
            throw ContractViolation("masked_row_softmax: row " + std::to_string(i) + " is fully masked");
        }
        double total = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (!mask.visible(i, j)) continue;
            out[i * m + j] = std::exp(z[i * m + j] - mx);
            total += out[i * m + j];
        }
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= total;
    }
    return make_op_result(logits.shape(), std::move(out), {logits}, [n, m](Node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = self.value.data() + i * m;
            const double* dy = self.grad.data() + i * m;
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += p[j] * dy[j];
            // Masked entries have p = 0 so they receive no gradient.
            for (std::size_t j = 0; j < m; ++j) g[i * m + j] += p[j] * (dy[j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_rank2(x, "layer_norm");
    const std::size_t n = x.rows(), d = x.cols();
    if (d == 0) throw DimensionError("layer_norm: feature dimension is zero");
    if (gain.size() != d || bias.size() != d) {
        throw DimensionError("layer_norm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                             " vs input " + to_string(x.shape()));
    }
    if (!(eps > 0)) throw ContractViolation("layer_norm: eps must be positive");
    const auto xv = x.data(), gv = gain.data(), bv = bias.data();
    std::vector<double> xhat(n * d), rstd(n), out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = xv.data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[i * d + j] = (row[j] - mean) * rstd[i];
            out[i * d + j] = gv[j] * xhat[i * d + j] + bv[j];
        }
    }
    return make_op_result(x.shape(), std::move(out), {x, gain, bias},
                          [n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pg.requires_grad) {
            auto g = pg.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j] * xhat[i * d + j];
        }
        if (pb.requires_grad) {
            auto g = pb.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
        }
        if (px.requires_grad) {
            auto g = px.grad_buffer();
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t i = 0; i < n; ++i) {
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dxhat = self.grad[i * d + j] * pg.value[j];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xhat[i * d + j];
                }
                mean_dxhat *= inv_d;
                mean_dxhat_xhat *= inv_d;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dxhat = self.grad[i * d + j] * pg.value[j];
                    g[i * d + j] += rstd[i] * (dxhat - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
                }
            }
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
    const std::size_t n = parts.front().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.rows() != n) {
            throw DimensionError("concat_cols: row counts differ, " + to_string(parts.front().shape()) + " vs " +
                                 to_string(p.shape()));
        }
        widths.push_back(p.cols());
        total += p.cols();
    }
    std::vector<double> out(n * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto x = parts[k].data();
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(x.begin() + i * widths[k], widths[k], out.begin() + i * total + offset);
        offset += widths[k];
    }
    return make_op_result({n, total}, std::move(out), parts, [n, total, widths](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            Node& p = *self.parents[k];
            if (p.requires_grad) {
                auto g = p.grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
            }
            off += widths[k];
        }
    });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    require_rank2(table, "embedding");
    const std::size_t vocab = table.rows(), d = table.cols(), n = ids.size();
    std::vector<int> idx(ids.begin(), ids.end());
    for (int id : idx) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw DimensionError("embedding: id " + std::to_string(id) + " outside table " + to_string(table.shape()));
        }
    }
    const auto tv = table.data();
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i) std::copy_n(tv.begin() + idx[i] * d, d, out.begin() + i * d);
    return make_op_result({n, d}, std::move(out), {table}, [d, idx = std::move(idx)](Node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
    require_rank2(logits, "cross_entropy");
    const std::size_t n = logits.rows(), v = logits.cols();
    if (targets.size() != n) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                             to_string(logits.shape()));
    }
    if (n == 0) throw ContractViolation("cross_entropy: no rows");
    std::vector<int> tgt(targets.begin(), targets.end());
    const auto z = logits.data();
    std::vector<double> probs(n * v);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= v) {
            throw DimensionError("cross_entropy: target " + std::to_string(tgt[i]) + " outside " + std::to_string(v));
        }
        const double* row = z.data() + i * v;
        const double mx = *std::max_element(row, row + v);
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - lse);
        total += lse - row[tgt[i]];
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    return make_op_result({}, {total * inv_n}, {logits},
                          [v, inv_n, tgt = std::move(tgt), probs = std::move(probs)](Node& self) {
        auto g = self.parents[0]->grad_buffer();
        const double up = self.grad[0] * inv_n;
        for (std::size_t i = 0; i < tgt.size(); ++i) {
            for (std::size_t j = 0; j < v; ++j) g[i * v + j] += up * probs[i * v + j];
            g[i * v + tgt[i]] -= up;
        }
    });
}

Tensor diag_scale(const Tensor& d, double factor) {
    require_rank2(d, "diag_scale");
    const std::size_t n = d.rows();
    if (d.cols() != n) throw DimensionError("diag_scale: matrix is not square, " + to_string(d.shape()));
    const auto in = d.data();
    std::vector<double> out(in.begin(), in.end());
    for (std::size_t i = 0; i < n; ++i) out[i * n + i] *= factor;
    return make_op_result(d.shape(), std::move(out), {d}, [n, factor](Node& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        for (std::size_t i = 0; i < n; ++i) g[i * n + i] += self.grad[i * n + i] * (factor - 1.0);
    });
}

Tensor column_gate(const Tensor& d, const BoolMask& mask, const Tensor& gate) {
    require_rank2(d, "column_gate");
    const std::size_t n = d.rows(), m = d.cols();
    if (mask.rows() != n || mask.cols() != m) throw DimensionError("column_gate: mask does not match " + to_string(d.shape()));
    if (gate.size() != m) {
        throw DimensionError("column_gate: gate " + to_string(gate.shape()) + " vs matrix " + to_string(d.shape()));
    }
    const auto dv = d.data(), rv = gate.data();
    std::vector<double> out(dv.begin(), dv.end());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (mask.visible(i, j)) out[i * m + j] = dv[i * m + j] * rv[j];
    return make_op_result(d.shape(), std::move(out), {d, gate}, [n, m, mask](Node& self) {
        Node& pd = *self.parents[0];
        Node& pr = *self.parents[1];
        if (pd.requires_grad) {
            auto g = pd.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j)
                    g[i * m + j] += mask.visible(i, j) ? self.grad[i * m + j] * pr.value[j] : self.grad[i * m + j];
        }
        if (pr.requires_grad) {
            auto g = pr.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j)
                    if (mask.visible(i, j)) g[j] += self.grad[i * m + j] * pd.value[i * m + j];
        }
    });
}

Tensor selected_log_loss(const Tensor& a, std::span<const std::size_t> target, const std::vector<bool>& valid,
                         double eps_log) {
    require_rank2(a, "selected_log_loss");
    const std::size_t n = a.rows(), m = a.cols();
    if (target.size() != n || valid.size() != n) {
        throw DimensionError("selected_log_loss: " + std::to_string(target.size()) + " targets for " +
                             to_string(a.shape()));
    }
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    for (std::size_t i = 0; i < n; ++i) {
        if (!valid[i]) continue;
        if (target[i] >= m) throw DimensionError("selected_log_loss: target column out of range");
        picks.emplace_back(i, target[i]);
    }
    if (picks.empty()) return Tensor::scalar(0.0);
    const auto av = a.data();
    const double inv = 1.0 / static_cast<double>(picks.size());
    double total = 0.0;
    for (auto [i, j] : picks) total -= std::log(av[i * m + j] + eps_log);
    return make_op_result({}, {total * inv}, {a}, [m, inv, eps_log, picks = std::move(picks)](Node& self) {
        Node& pa = *self.parents[0];
        auto g = pa.grad_buffer();
        for (auto [i, j] : picks) g[i * m + j] -= self.grad[0] * inv / (pa.value[i * m + j] + eps_log);
    });
}

}  // namespace bet
