#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mixforge/tensor.hpp"

namespace mixforge {

struct ValueNode;
/// Handle to one node of a dynamically built computation graph.
using Value = std::shared_ptr<ValueNode>;

/// A node holds the forward result, the (lazily allocated) gradient
/// accumulator, and a closure that pushes gradients into its parents.
/// Graphs are built per step and freed when the root handle drops;
/// parameters are long-lived leaves that survive across graphs.
struct ValueNode {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Value> parents;
    std::function<void(ValueNode&)> backward_fn;

    void ensure_grad() {
        if (grad.numel() != val.numel()) grad = Tensor(val.shape());
    }
    void zero_grad() {
        if (grad.numel() == val.numel()) grad.fill(0);
    }
};

Value make_value(Tensor t, bool requires_grad = false);
/// Trainable leaf (parameter).
Value make_leaf(Tensor t);
/// Copy of `a`'s tensor with the graph cut off.
Value detach(const Value& a);

/// Reverse-mode accumulation from a rank-0 root. Seeds the root gradient
/// with 1 and visits the graph in reverse topological order. Gradients
/// accumulate, so callers zero parameter grads between steps.
void backward(const Value& root);

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, Scalar c);
/// Broadcast-multiply by a rank-0 value (e.g. an inverse temperature).
Value mul_scalar_value(const Value& x, const Value& s);
Value vexp(const Value& a);
Value vsigmoid(const Value& a);
Value add_scalar(const Value& a, Scalar c);
Value relu(const Value& a);
Value reshape(const Value& a, std::vector<int> shape);
/// Slice along dimension 1 (channels of NCHW, columns of a matrix).
Value slice_dim1(const Value& a, int start, int len);
/// Concatenate along dimension 1.
Value concat_dim1(const std::vector<Value>& xs);
Value mean_all(const Value& x);

// ---------------------------------------------------------------------------
// Neural-network ops
// ---------------------------------------------------------------------------
/// x:(B,D) w:(O,D) b:(O) -> (B,O)
Value linear(const Value& x, const Value& w, const Value& b);
/// x:(B,C,H,W) w:(O,C,kh,kw) b:(O); zero padding `pad`, square stride.
Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad);
/// 2x2 max pooling with stride 2 (floor semantics on odd sizes).
Value maxpool2(const Value& x);
/// (B,C,H,W) -> (B,C)
Value global_avg_pool(const Value& x);
/// Softmax over dimension 1 of (B,K,H,W), independently per pixel.
Value softmax_channels(const Value& x);
/// x:(B,C,H,W) times a per-pixel map m:(B,1,H,W), broadcast over channels.
Value mul_channels(const Value& x, const Value& m);

/// Batch norm over (B,C,H,W). In training mode uses batch statistics and
/// updates the caller-owned running stats in place; in eval mode normalizes
/// with the running stats. Gradients flow to x, gamma and beta either way.
Value batch_norm2d(const Value& x, const Value& gamma, const Value& beta,
                   Tensor* running_mean, Tensor* running_var, bool training,
                   double momentum = 0.1, double eps = 1e-5);

// ---------------------------------------------------------------------------
// Differentiable affine warping
// ---------------------------------------------------------------------------
enum class WarpPadding { kZeros, kReflect };

/// Backward-warps x:(B,C,H,W) by per-sample affine maps theta:(B,2,3) acting
/// on normalized coordinates in [-1,1]^2 (corner-aligned). Each output pixel
/// reads the input bilinearly at theta * (xn, yn, 1); samples outside the
/// source read 0 (kZeros) or mirror back inside (kReflect). Differentiable in
/// both x and theta.
Value grid_sample_affine(const Value& x, const Value& theta,
                         WarpPadding padding = WarpPadding::kZeros);

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------
/// Mean over the batch of -sum_c y_c log softmax(logits)_c for soft labels
/// on the class simplex. Throws InputError if a label row is off the simplex
/// by more than 1e-6.
Value soft_cross_entropy_loss(const Value& logits, const Tensor& soft_labels);

/// Numerically stable row softmax of a (B,C) tensor (plain, not tracked).
Tensor softmax_rows(const Tensor& logits);

}  // namespace mixforge
