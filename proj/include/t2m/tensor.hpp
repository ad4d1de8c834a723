#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace t2m::ad {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense 64-bit tensor participating in reverse-mode differentiation.
// `grad` is allocated lazily on first accumulation.
struct TensorData {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    bool on_tape = false;  // produced by a taped op (reset between backward passes)
    std::string name;

    TensorData(Shape s, std::vector<double> v, bool rg);
    ~TensorData();
    TensorData(const TensorData&) = delete;
    TensorData& operator=(const TensorData&) = delete;

    int64_t size() const { return static_cast<int64_t>(values.size()); }
    int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
    int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    void ensure_grad();
    void zero_grad();
    double scalar() const;  // value of a 1-element tensor
};

using Tensor = std::shared_ptr<TensorData>;

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
Tensor zeros(Shape shape, bool requires_grad = false);
Tensor full(Shape shape, double value, bool requires_grad = false);
Tensor scalar_tensor(double value);

// Tensor-buffer allocation accounting (values + grads), for the bench harness.
struct MemStats {
    static int64_t live_bytes();
    static int64_t peak_bytes();
    static void reset_peak();
};

// Ordered record of operations; topological by construction. One tape per
// training step, never shared across concurrent steps.
class Tape {
public:
    // Registers `out` as the product of `inputs`. Records a backward closure
    // only when some input requires grad.
    Tensor track(Tensor out, std::vector<Tensor> inputs, std::function<void()> backward);

    // Accumulates grads of every requires_grad tensor reachable from `loss`.
    // Grads of on-tape intermediates are reset per call; leaf grads accumulate
    // across calls until zeroed. Throws if loss is not scalar.
    void backward(const Tensor& loss);

    size_t node_count() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        std::vector<Tensor> inputs;
        Tensor output;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------
// All ops validate input shapes and throw std::runtime_error naming the op
// and offending shapes.

Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor scale(Tape& t, const Tensor& a, double s);
Tensor sum_all(Tape& t, const Tensor& a);
Tensor reshape(Tape& t, const Tensor& a, Shape shape);

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);
// y = x * w + b with row-broadcast bias; x (r,in), w (in,out), b (out).
Tensor linear(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(Tape& t, const Tensor& a);
Tensor elu(Tape& t, const Tensor& a);  // alpha = 1

// Concatenate 2-D tensors with equal row counts along columns.
Tensor concat_cols(Tape& t, const std::vector<Tensor>& parts);

// out[r] = x[idx[r]] (rows); grads scatter-add back.
Tensor gather_rows(Tape& t, const Tensor& x, const std::vector<int>& idx);
// Copy of base with rows[t] written at idx[t] (idx entries unique).
Tensor scatter_rows(Tape& t, const Tensor& base, const std::vector<int>& idx, const Tensor& rows);
// out[seg[r]] += x[r]; addends combined in value order (sum-over-set).
Tensor segment_sum(Tape& t, const Tensor& x, const std::vector<int>& seg, int64_t n_out);

// 3-D convolution; x (C,D,H,W), w (OC,IC,K,K,K), b (OC).
Tensor conv3d(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b, int kernel, int stride,
              int pad);

// (C,D,H,W) -> (D*H*W, C): one row per spatial cell, channels as columns.
Tensor channels_to_rows(Tape& t, const Tensor& x);

// Batch norm over rows of a 2-D tensor. Train mode normalizes with batch
// statistics and updates running buffers in place; eval mode uses the
// running buffers. momentum 0.1, eps 1e-5 defaults live at the layer level.
Tensor batch_norm(Tape& t, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const Tensor& running_mean, const Tensor& running_var, double momentum,
                  double eps, bool train);

// Inverted dropout; eval mode is the identity.
Tensor dropout(Tape& t, const Tensor& x, double p, bool train, std::mt19937_64& rng);

// Two-class softmax cross entropy, weighted mean over rows:
// sum_r w[y_r] ce_r / sum_r w[y_r]. logits (r,2).
Tensor softmax_ce2(Tape& t, const Tensor& logits, const std::vector<int>& labels,
                   double weight_neg = 1.0, double weight_pos = 1.0);
// Probability of class 1 per row, (r,1).
Tensor softmax2_prob(Tape& t, const Tensor& logits);

// Sum of elementwise |a - b|; subgradient at 0 is 0.
Tensor l1(Tape& t, const Tensor& a, const Tensor& b);

// Points from barycentric coordinates on mesh faces:
// out[s] = sum_c bary[s][c] * verts[face_idx[s][c]]. verts (n,3), out (k,3).
Tensor bary_points(Tape& t, const Tensor& verts, const std::vector<std::array<int, 3>>& face_idx,
                   const std::vector<std::array<double, 3>>& bary);

// Symmetric squared-distance chamfer between point sets p (k,3) and q (m,3):
//   weighted_mean_i min_j |p_i-q_j|^2 + mean_j min_i |q_j-p_i|^2
// with optional per-point weights on p (pass nullptr for uniform).
// Nearest-neighbor correspondences are fixed at forward time.
Tensor chamfer_points(Tape& t, const Tensor& p, const Tensor* p_weights, const Tensor& q);

// ---- optimizer -------------------------------------------------------------

// ADAM with bias correction; one state slot per parameter.
class Adam {
public:
    Adam(std::vector<Tensor> params, double lr = 0.0005, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    // Applies one update from accumulated grads. Throws if any parameter has
    // no grad populated.
    void step();
    void zero_grad();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    int64_t step_count() const { return step_count_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t step_count_ = 0;
};

}  // namespace t2m::ad
