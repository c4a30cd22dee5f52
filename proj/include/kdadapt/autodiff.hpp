#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace kdadapt {
class Rng;
}

namespace kdadapt::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

// Dense float64 parameter with its gradient buffer. One- and two-dimensional
// shapes are stored as 1 x n and rows x cols matrices respectively.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);

    const std::vector<std::size_t> &shape() const { return shape_; }
    std::size_t size() const { return static_cast<std::size_t>(value.size()); }

    Matrix value;
    Matrix grad;

  private:
    std::vector<std::size_t> shape_;
};

// Handle to a node on a Tape.
struct Var {
    int id = -1;
};

// Records a computation for one reverse sweep. Parameter leaves alias the
// caller's Tensor: reading goes to Tensor::value and backward() accumulates
// into Tensor::grad.
class Tape {
  public:
    Var constant(Matrix value);
    Var parameter(Tensor &tensor);

    const Matrix &value(Var v) const;
    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Seeds d(output)/d(output) = 1 for a 1 x 1 output and sweeps backwards.
    void backward(Var output);

    // Adds to the gradient of v; no-op when v does not need a gradient.
    void accumulate(Var v, const Matrix &delta);
    Matrix &grad(Var v);

    Var record(Matrix value, bool needs_grad, std::function<void(Tape &, const Matrix &)> backward);

  private:
    struct Node {
        Matrix value;
        Matrix grad;
        Tensor *param = nullptr;
        bool needs_grad = false;
        std::function<void(Tape &, const Matrix &)> backward;
    };
    std::vector<Node> nodes_;
};

// A contiguous block of query rows attending to a contiguous block of key rows.
struct AttentionSegment {
    int q_begin = 0;
    int q_len = 0;
    int k_begin = 0;
    int k_len = 0;
};

namespace ops {

Var matmul(Tape &t, Var a, Var b);
// x * w + b with b a 1 x out row broadcast over rows.
Var linear(Tape &t, Var x, Var w, Var b);
Var add(Tape &t, Var a, Var b);
Var scale(Tape &t, Var a, double factor);
Var relu(Tape &t, Var a);
Var gelu(Tape &t, Var a);
Var softmax_rows(Tape &t, Var a);
Var layer_norm(Tape &t, Var x, Var gamma, Var beta, double eps = 1e-6);
Var embedding(Tape &t, Var table, std::span<const std::int32_t> ids);
Var dropout(Tape &t, Var a, double rate, Rng &rng);
// Multi-head scaled dot-product attention over packed variable-length
// segments. q is Nq x d, k and v are Nk x d; heads split d evenly.
Var attention(Tape &t, Var q, Var k, Var v, std::shared_ptr<const std::vector<AttentionSegment>> segments,
              int heads, bool causal);
// Mean label-smoothed cross-entropy over rows whose target is not
// ignore_id. Plain cross-entropy of the same rows is written to *nll_out.
Var cross_entropy(Tape &t, Var logits, std::span<const std::int32_t> targets, double label_smoothing,
                  std::int32_t ignore_id, double *nll_out = nullptr);
// Sum of elementwise product with a constant matrix; handy as a scalar probe.
Var dot_constant(Tape &t, Var a, const Matrix &weights);

} // namespace ops

// Numerically stable row-wise log-softmax.
Matrix log_softmax_rows(const Matrix &logits);

} // namespace kdadapt::nn
