#include "adpc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace adpc::ag {

namespace {

NodeRef make_node(Mat value, std::vector<NodeRef> parents,
                  std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->val = std::make_shared<Mat>(std::move(value));
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeMismatch(std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                            "x" + std::to_string(b.cols()));
}

}  // namespace

Var Var::constant(Mat m) {
    auto n = std::make_shared<Node>();
    n->val = std::make_shared<Mat>(std::move(m));
    n->requires_grad = false;
    return Var::wrap(n);
}

Var Var::leaf(std::shared_ptr<const Mat> v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->requires_grad = requires_grad;
    return Var::wrap(n);
}

Var Var::leaf(Mat m, bool requires_grad) {
    return leaf(std::make_shared<const Mat>(std::move(m)), requires_grad);
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    auto an = a.node(), bn = b.node();
    return Var::wrap(make_node(a.value() + b.value(), {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) an->grad_ref() += n.grad;
        if (bn->requires_grad) bn->grad_ref() += n.grad;
    }));
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    auto an = a.node(), bn = b.node();
    return Var::wrap(make_node(a.value() - b.value(), {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) an->grad_ref() += n.grad;
        if (bn->requires_grad) bn->grad_ref() -= n.grad;
    }));
}

Var add_rowvec(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeMismatch("add_rowvec");
    auto an = a.node(), rn = row.node();
    Mat out = a.value().rowwise() + row.value().row(0);
    return Var::wrap(make_node(std::move(out), {an, rn}, [an, rn](Node& n) {
        if (an->requires_grad) an->grad_ref() += n.grad;
        if (rn->requires_grad) rn->grad_ref() += n.grad.colwise().sum();
    }));
}

Var mul_rowvec(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeMismatch("mul_rowvec");
    auto an = a.node(), rn = row.node();
    Mat out = a.value().array().rowwise() * row.value().row(0).array();
    return Var::wrap(make_node(std::move(out), {an, rn}, [an, rn](Node& n) {
        if (an->requires_grad)
            an->grad_ref().array() += n.grad.array().rowwise() * rn->val->row(0).array();
        if (rn->requires_grad)
            rn->grad_ref() += (n.grad.array() * an->val->array()).colwise().sum().matrix();
    }));
}

Var scale(const Var& a, double c) {
    auto an = a.node();
    return Var::wrap(make_node(a.value() * c, {an}, [an, c](Node& n) {
        if (an->requires_grad) an->grad_ref() += c * n.grad;
    }));
}

Var scale(const Var& a, const Var& s) {
    if (s.rows() != 1 || s.cols() != 1) throw ShapeMismatch("scale: gain must be 1x1");
    auto an = a.node(), sn = s.node();
    return Var::wrap(make_node(a.value() * s.value()(0, 0), {an, sn}, [an, sn](Node& n) {
        if (an->requires_grad) an->grad_ref() += sn->val->coeff(0, 0) * n.grad;
        if (sn->requires_grad)
            sn->grad_ref()(0, 0) += (n.grad.array() * an->val->array()).sum();
    }));
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw ShapeMismatch("matmul");
    auto an = a.node(), bn = b.node();
    return Var::wrap(make_node(a.value() * b.value(), {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) an->grad_ref().noalias() += n.grad * bn->val->transpose();
        if (bn->requires_grad) bn->grad_ref().noalias() += an->val->transpose() * n.grad;
    }));
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw ShapeMismatch("matmul_nt");
    auto an = a.node(), bn = b.node();
    return Var::wrap(make_node(a.value() * b.value().transpose(), {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) an->grad_ref().noalias() += n.grad * (*bn->val);
        if (bn->requires_grad) bn->grad_ref().noalias() += n.grad.transpose() * (*an->val);
    }));
}

Var clamp(const Var& a, double lo, double hi) {
    auto an = a.node();
    Mat out = a.value().array().max(lo).min(hi);
    return Var::wrap(make_node(std::move(out), {an}, [an, lo, hi](Node& n) {
        if (!an->requires_grad) return;
        Mat& g = an->grad_ref();
        const Mat& x = *an->val;
        g.array() +=
            n.grad.array() * ((x.array() >= lo) && (x.array() <= hi)).cast<double>();
    }));
}

Var gelu(const Var& a) {
    auto an = a.node();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    Mat out = a.value().unaryExpr(
        [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
    return Var::wrap(make_node(std::move(out), {an}, [an](Node& n) {
        if (!an->requires_grad) return;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        Mat d = an->val->unaryExpr([](double x) {
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
        an->grad_ref().array() += n.grad.array() * d.array();
    }));
}

namespace {

Mat softmax_impl(const Mat& a, const std::vector<uint8_t>* key_mask) {
    if (!a.allFinite()) throw NonFiniteInput("softmax: non-finite input");
    if (key_mask && static_cast<Eigen::Index>(key_mask->size()) != a.cols())
        throw ShapeMismatch("softmax: key mask length");
    Mat out = Mat::Zero(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            if (!key_mask || (*key_mask)[j]) mx = std::max(mx, a(i, j));
        if (!std::isfinite(mx)) continue;  // all keys masked: leave row at 0
        double z = 0.0;
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            if (key_mask && !(*key_mask)[j]) continue;
            out(i, j) = std::exp(a(i, j) - mx);
            z += out(i, j);
        }
        for (Eigen::Index j = 0; j < a.cols(); ++j) out(i, j) /= z;
    }
    return out;
}

Var softmax_node(const Var& a, std::vector<uint8_t> key_mask, bool masked) {
    auto an = a.node();
    Mat out = softmax_impl(a.value(), masked ? &key_mask : nullptr);
    auto yv = std::make_shared<Mat>(std::move(out));
    auto n = std::make_shared<Node>();
    n->val = yv;
    n->parents = {an};
    n->requires_grad = an->requires_grad;
    if (n->requires_grad) {
        n->backprop = [an, yv](Node& n_) {
            // dS_ij = y_ij * (g_ij - sum_k g_ik y_ik); exact 0 stays 0.
            const Mat& y = *yv;
            Mat& g = an->grad_ref();
            for (Eigen::Index i = 0; i < y.rows(); ++i) {
                double dot = n_.grad.row(i).cwiseProduct(y.row(i)).sum();
                g.row(i).array() += y.row(i).array() * (n_.grad.row(i).array() - dot);
            }
        };
    }
    return Var::wrap(n);
}

}  // namespace

Var softmax_rows(const Var& a) { return softmax_node(a, {}, false); }

Var softmax_rows_masked(const Var& a, const std::vector<uint8_t>& key_mask) {
    return softmax_node(a, key_mask, true);
}

Var normalize_rows(const Var& a, double eps) {
    auto an = a.node();
    const Mat& x = a.value();
    const double d = static_cast<double>(x.cols());
    Eigen::VectorXd mu = x.rowwise().mean();
    Mat centered = x.colwise() - mu;
    Eigen::VectorXd var = centered.array().square().rowwise().mean();
    Eigen::VectorXd inv_sd = (var.array() + eps).rsqrt();
    Mat y = centered.array().colwise() * inv_sd.array();
    auto yv = std::make_shared<Mat>(std::move(y));
    auto isd = std::make_shared<Eigen::VectorXd>(std::move(inv_sd));
    auto n = std::make_shared<Node>();
    n->val = yv;
    n->parents = {an};
    n->requires_grad = an->requires_grad;
    if (n->requires_grad) {
        n->backprop = [an, yv, isd, d](Node& n_) {
            const Mat& y = *yv;
            Mat& g = an->grad_ref();
            for (Eigen::Index i = 0; i < y.rows(); ++i) {
                double gmean = n_.grad.row(i).mean();
                double gydot = n_.grad.row(i).cwiseProduct(y.row(i)).sum() / d;
                g.row(i).array() += (*isd)(i) * (n_.grad.row(i).array() - gmean -
                                                 y.row(i).array() * gydot);
            }
        };
    }
    return Var::wrap(n);
}

Var concat_rows(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw ShapeMismatch("concat_rows");
    auto an = a.node(), bn = b.node();
    Mat out(a.rows() + b.rows(), a.cols());
    out.topRows(a.rows()) = a.value();
    out.bottomRows(b.rows()) = b.value();
    Eigen::Index na = a.rows();
    return Var::wrap(make_node(std::move(out), {an, bn}, [an, bn, na](Node& n) {
        if (an->requires_grad) an->grad_ref() += n.grad.topRows(na);
        if (bn->requires_grad) bn->grad_ref() += n.grad.bottomRows(n.grad.rows() - na);
    }));
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: empty");
    Eigen::Index rows = parts[0].rows(), cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw ShapeMismatch("concat_cols");
        cols += p.cols();
    }
    Mat out(rows, cols);
    std::vector<NodeRef> ps;
    std::vector<Eigen::Index> offs;
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        ps.push_back(p.node());
        offs.push_back(c);
        c += p.cols();
    }
    return Var::wrap(make_node(std::move(out), ps, [ps, offs](Node& n) {
        for (size_t k = 0; k < ps.size(); ++k)
            if (ps[k]->requires_grad)
                ps[k]->grad_ref() += n.grad.middleCols(offs[k], ps[k]->val->cols());
    }));
}

Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index nc) {
    if (c0 < 0 || c0 + nc > a.cols()) throw ShapeMismatch("slice_cols");
    auto an = a.node();
    return Var::wrap(
        make_node(a.value().middleCols(c0, nc), {an}, [an, c0, nc](Node& n) {
            if (an->requires_grad) an->grad_ref().middleCols(c0, nc) += n.grad;
        }));
}

Var embedding(const Var& table, const std::vector<int>& ids) {
    auto tn = table.node();
    Mat out(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows())
            throw ShapeMismatch("embedding: id out of range");
        out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
    }
    return Var::wrap(make_node(std::move(out), {tn}, [tn, ids](Node& n) {
        if (!tn->requires_grad) return;
        Mat& g = tn->grad_ref();
        for (size_t i = 0; i < ids.size(); ++i)
            g.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    }));
}

Var patchify3d(const Var& vol, int h, int w, int d, int patch) {
    if (h % patch || w % patch || d % patch)
        throw IndivisibleVolume("patchify3d: dims " + std::to_string(h) + "x" +
                                std::to_string(w) + "x" + std::to_string(d) +
                                " not divisible by patch " + std::to_string(patch));
    const Eigen::Index n_vox = static_cast<Eigen::Index>(h) * w * d;
    if (vol.rows() != n_vox || vol.cols() != 1)
        throw ShapeMismatch("patchify3d: expected flattened volume column");
    const int gh = h / patch, gw = w / patch, gd = d / patch;
    const Eigen::Index tokens = static_cast<Eigen::Index>(gh) * gw * gd;
    const Eigen::Index plen = static_cast<Eigen::Index>(patch) * patch * patch;
    // voxel index = (z * h + y) * w + x; patch raster is z-major as well.
    auto voxel = [h, w](int x, int y, int z) {
        return (static_cast<Eigen::Index>(z) * h + y) * w + x;
    };
    auto idx = std::make_shared<std::vector<Eigen::Index>>();
    idx->reserve(static_cast<size_t>(tokens * plen));
    for (int pz = 0; pz < gd; ++pz)
        for (int py = 0; py < gh; ++py)
            for (int px = 0; px < gw; ++px)
                for (int z = 0; z < patch; ++z)
                    for (int y = 0; y < patch; ++y)
                        for (int x = 0; x < patch; ++x)
                            idx->push_back(voxel(px * patch + x, py * patch + y,
                                                 pz * patch + z));
    Mat out(tokens, plen);
    const Mat& v = vol.value();
    for (Eigen::Index t = 0; t < tokens; ++t)
        for (Eigen::Index k = 0; k < plen; ++k)
            out(t, k) = v((*idx)[static_cast<size_t>(t * plen + k)], 0);
    auto vn = vol.node();
    return Var::wrap(make_node(std::move(out), {vn}, [vn, idx, plen](Node& n) {
        if (!vn->requires_grad) return;
        Mat& g = vn->grad_ref();
        for (Eigen::Index t = 0; t < n.grad.rows(); ++t)
            for (Eigen::Index k = 0; k < plen; ++k)
                g((*idx)[static_cast<size_t>(t * plen + k)], 0) += n.grad(t, k);
    }));
}

Var mean_rows_masked(const Var& a, const std::vector<uint8_t>& mask) {
    if (static_cast<Eigen::Index>(mask.size()) != a.rows())
        throw ShapeMismatch("mean_rows_masked: mask length");
    double count = 0;
    for (uint8_t m : mask) count += m ? 1.0 : 0.0;
    if (count == 0) throw AllTokensMasked("mean_rows_masked: no real tokens");
    auto an = a.node();
    Mat out = Mat::Zero(1, a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        if (mask[static_cast<size_t>(i)]) out.row(0) += a.value().row(i);
    out /= count;
    return Var::wrap(make_node(std::move(out), {an}, [an, mask, count](Node& n) {
        if (!an->requires_grad) return;
        Mat& g = an->grad_ref();
        for (Eigen::Index i = 0; i < g.rows(); ++i)
            if (mask[static_cast<size_t>(i)]) g.row(i) += n.grad.row(0) / count;
    }));
}

Var pick(const Var& a, Eigen::Index i, Eigen::Index j) {
    if (i >= a.rows() || j >= a.cols()) throw ShapeMismatch("pick");
    auto an = a.node();
    Mat out(1, 1);
    out(0, 0) = a.value()(i, j);
    return Var::wrap(make_node(std::move(out), {an}, [an, i, j](Node& n) {
        if (an->requires_grad) an->grad_ref()(i, j) += n.grad(0, 0);
    }));
}

Var weighted_sum(const Var& a, const Mat& w) {
    if (w.rows() != a.rows() || w.cols() != a.cols())
        throw ShapeMismatch("weighted_sum");
    auto an = a.node();
    Mat out(1, 1);
    out(0, 0) = (a.value().array() * w.array()).sum();
    return Var::wrap(make_node(std::move(out), {an}, [an, w](Node& n) {
        if (an->requires_grad) an->grad_ref() += n.grad(0, 0) * w;
    }));
}

Var cross_entropy_logits(const Var& logits, int label) {
    if (logits.rows() != 1) throw ShapeMismatch("cross_entropy_logits: expected 1 x C");
    if (label < 0 || label >= logits.cols())
        throw ShapeMismatch("cross_entropy_logits: label out of range");
    const Mat& l = logits.value();
    if (!l.allFinite()) throw NonFiniteInput("cross_entropy_logits");
    double mx = l.maxCoeff();
    double z = (l.array() - mx).exp().sum();
    Mat out(1, 1);
    out(0, 0) = mx + std::log(z) - l(0, label);
    auto probs = std::make_shared<Mat>(((l.array() - mx).exp() / z).matrix());
    auto ln = logits.node();
    return Var::wrap(make_node(std::move(out), {ln}, [ln, probs, label](Node& n) {
        if (!ln->requires_grad) return;
        Mat d = *probs;
        d(0, label) -= 1.0;
        ln->grad_ref() += n.grad(0, 0) * d;
    }));
}

Var dropout(const Var& a, double rate, Rng& rng) {
    if (rate <= 0.0) return a;
    if (rate >= 1.0) throw ShapeMismatch("dropout: rate must be < 1");
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<Mat>(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            (*mask)(i, j) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    auto an = a.node();
    Mat out = a.value().cwiseProduct(*mask);
    return Var::wrap(make_node(std::move(out), {an}, [an, mask](Node& n) {
        if (an->requires_grad) an->grad_ref() += n.grad.cwiseProduct(*mask);
    }));
}

void backward(const Var& loss, double seed) {
    if (loss.rows() != 1 || loss.cols() != 1)
        throw ShapeMismatch("backward: loss must be 1 x 1");
    if (!loss.requires_grad()) return;
    // Iterative post-order DFS, then replay in reverse.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->grad_ref()(0, 0) += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad.size() != 0) n->backprop(*n);
    }
}

}  // namespace adpc::ag
