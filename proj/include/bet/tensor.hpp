#pragma once

// Dense 64-bit tensors with tape-free reverse-mode differentiation.
//
// Every operation produces a new node that remembers its inputs and a closure
// that pushes the output gradient back into them. backward() walks the graph
// in reverse topological order from a scalar loss. Masking is carried by a
// separate BoolMask and never encoded as infinities in tensor data.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first touched by backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::span<double> grad_buffer();
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);
    static Tensor identity(std::size_t n, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    // Rows/cols of a rank-2 tensor; a rank-1 tensor is treated as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const;
    // Only leaves (tensors not produced by an operation) may be written.
    std::span<double> mutable_data();
    double at(std::size_t i, std::size_t j) const;
    double operator[](std::size_t flat) const { return data()[flat]; }
    double item() const;

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    // Populates grad of every requires_grad tensor reachable from this scalar.
    void backward() const;

    // Copy of the values as a fresh leaf, detached from any graph.
    Tensor detach(bool requires_grad = false) const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op_result(Shape, std::vector<double>, std::initializer_list<Tensor>,
                                 std::function<void(detail::Node&)>);
    friend Tensor make_op_result(Shape, std::vector<double>, const std::vector<Tensor>&,
                                 std::function<void(detail::Node&)>);
};

// Builds the output node of an operation. The backward closure receives the
// output node; inputs are reachable through node.parents in the given order.
Tensor make_op_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                      std::function<void(detail::Node&)> backward);
Tensor make_op_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                      std::function<void(detail::Node&)> backward);

bool grad_enabled() noexcept;

// Disables graph recording for its lifetime (evaluation, analysis).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Row-major boolean visibility pattern; true = visible.
class BoolMask {
public:
    BoolMask() = default;
    BoolMask(std::size_t rows, std::size_t cols, bool value);

    static BoolMask causal(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool visible(std::size_t i, std::size_t j) const { return bits_[i * cols_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool value) { bits_[i * cols_ + j] = value ? 1 : 0; }
    std::size_t visible_in_row(std::size_t i) const;

    bool operator==(const BoolMask&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> bits_;
};

// ---------------------------------------------------------------------------
// Operations. All are differentiable w.r.t. every Tensor argument.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
// x[n×d] + bias[d] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
// Elementwise mean of equally shaped tensors.
Tensor mean_of(const std::vector<Tensor>& parts);

Tensor sigmoid(const Tensor& a);
// tanh approximation of GELU.
Tensor gelu(const Tensor& a);

// Softmax over each row restricted to visible entries; masked entries are 0.
// Throws ContractViolation if any row has no visible entry.
Tensor masked_row_softmax(const Tensor& logits, const BoolMask& mask);

inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps);

// Concatenation along the feature (column) axis.
Tensor concat_cols(const std::vector<Tensor>& parts);

// Gathers rows of table[V×d] for each id.
Tensor embedding(const Tensor& table, std::span<const int> ids);

// Mean negative log-likelihood of targets under row-softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// D[i][i] *= factor for every i.
Tensor diag_scale(const Tensor& d, double factor);

// out[i][j] = d[i][j] * gate[j] where mask is visible; masked entries copied.
Tensor column_gate(const Tensor& d, const BoolMask& mask, const Tensor& gate);

// -(1/|rows|) Σ_rows log(a[row][target[row]] + eps_log), rows with valid=false skipped.
Tensor selected_log_loss(const Tensor& a, std::span<const std::size_t> target,
                         const std::vector<bool>& valid, double eps_log);

}  // namespace bet
