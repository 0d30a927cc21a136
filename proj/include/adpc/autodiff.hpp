#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "adpc/errors.hpp"
#include "adpc/rng.hpp"

namespace adpc::ag {

using Mat = Eigen::MatrixXd;

// One tape node. Graphs are built per forward pass; parameter leaves alias
// the owning store's matrix, so no parameter data is copied at graph build.
struct Node {
    std::shared_ptr<const Mat> val;
    Mat grad;                   // allocated lazily by grad_ref()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // pulls this->grad into parents

    Mat& grad_ref() {
        if (grad.size() == 0) grad = Mat::Zero(val->rows(), val->cols());
        return grad;
    }
};

using NodeRef = std::shared_ptr<Node>;

// Value-semantic handle to a tape node.
class Var {
public:
    Var() = default;

    static Var constant(Mat m);
    static Var leaf(std::shared_ptr<const Mat> v, bool requires_grad = true);
    static Var leaf(Mat m, bool requires_grad = true);

    bool defined() const { return static_cast<bool>(n_); }
    const Mat& value() const { return *n_->val; }
    const Mat& grad() const { return n_->grad; }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    Eigen::Index rows() const { return n_->val->rows(); }
    Eigen::Index cols() const { return n_->val->cols(); }
    NodeRef node() const { return n_; }

    static Var wrap(NodeRef n) {
        Var v;
        v.n_ = std::move(n);
        return v;
    }

private:
    NodeRef n_;
};

// --- arithmetic ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& row);   // row is 1 x d, broadcast over rows
Var mul_rowvec(const Var& a, const Var& row);   // elementwise, row broadcast
Var scale(const Var& a, double c);
Var scale(const Var& a, const Var& s);          // s is 1 x 1
Var matmul(const Var& a, const Var& b);         // A * B
Var matmul_nt(const Var& a, const Var& b);      // A * B^T
Var clamp(const Var& a, double lo, double hi);

// --- nonlinearities / normalization ---
Var gelu(const Var& a);
// Row-wise softmax with max-subtraction. Throws NonFiniteInput on NaN/Inf.
Var softmax_rows(const Var& a);
// Masked keys receive weight exactly 0; a row whose keys are all masked
// comes out as an all-zero row.
Var softmax_rows_masked(const Var& a, const std::vector<uint8_t>& key_mask);
// Per-row standardization (mean 0, variance 1 up to epsilon); affine is
// composed separately via mul_rowvec / add_rowvec.
Var normalize_rows(const Var& a, double eps);

// --- structure ---
Var concat_rows(const Var& a, const Var& b);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index n);
Var embedding(const Var& table, const std::vector<int>& ids);
// 3D volume (flattened z-major into an N x 1 Var) to (tokens x patch^3)
// patch rows; token order is a z-major raster over the patch grid.
Var patchify3d(const Var& vol, int h, int w, int d, int patch);
Var mean_rows_masked(const Var& a, const std::vector<uint8_t>& mask);
Var pick(const Var& a, Eigen::Index i, Eigen::Index j);     // 1 x 1
Var weighted_sum(const Var& a, const Mat& w);               // 1 x 1, w constant

// --- losses / training-only ---
Var cross_entropy_logits(const Var& logits, int label);     // logits 1 x C
Var dropout(const Var& a, double rate, Rng& rng);

// Reverse pass from a 1 x 1 loss node. Seeds d(loss)/d(loss) = seed.
void backward(const Var& loss, double seed = 1.0);

}  // namespace adpc::ag
