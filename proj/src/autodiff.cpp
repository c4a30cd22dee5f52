#include "kdadapt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "kdadapt/error.hpp"
#include "kdadapt/random.hpp"

namespace kdadapt::nn {

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 2)
        fail(ErrorCategory::validation, "tensor rank must be 1 or 2");
    const auto rows = shape_.size() == 1 ? 1 : static_cast<Eigen::Index>(shape_[0]);
    const auto cols = static_cast<Eigen::Index>(shape_.back());
    value = Matrix::Zero(rows, cols);
    grad = Matrix::Zero(rows, cols);
}

Var Tape::constant(Matrix value) {
    Node node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Tensor &tensor) {
    Node node;
    node.param = &tensor;
    node.needs_grad = true;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Matrix &Tape::value(Var v) const {
    const auto &node = nodes_[v.id];
    return node.param ? node.param->value : node.value;
}

Matrix &Tape::grad(Var v) {
    auto &node = nodes_[v.id];
    if (node.param)
        return node.param->grad;
    if (node.grad.size() == 0)
        node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
    return node.grad;
}

void Tape::accumulate(Var v, const Matrix &delta) {
    auto &node = nodes_[v.id];
    if (!node.needs_grad)
        return;
    if (node.param) {
        node.param->grad += delta;
    } else if (node.grad.size() == 0) {
        node.grad = delta;
    } else {
        node.grad += delta;
    }
}

Var Tape::record(Matrix value, bool needs_grad, std::function<void(Tape &, const Matrix &)> backward) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad)
        node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var output) {
    const auto &out = value(output);
    if (out.rows() != 1 || out.cols() != 1)
        fail(ErrorCategory::validation, "backward() needs a scalar output");
    accumulate(output, Matrix::Ones(1, 1));
    for (int i = output.id; i >= 0; --i) {
        auto &node = nodes_[i];
        if (!node.backward || node.grad.size() == 0)
            continue;
        node.backward(*this, node.grad);
        node.grad = Matrix();
    }
}

Matrix log_softmax_rows(const Matrix &logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
        out.row(r) = logits.row(r).array() - lse;
    }
    return out;
}

namespace ops {

Var matmul(Tape &t, Var a, Var b) {
    Matrix out = t.value(a) * t.value(b);
    const bool needs = t.needs_grad(a) || t.needs_grad(b);
    return t.record(std::move(out), needs, [a, b](Tape &tape, const Matrix &g) {
        if (tape.needs_grad(a))
            tape.grad(a).noalias() += g * tape.value(b).transpose();
        if (tape.needs_grad(b))
            tape.grad(b).noalias() += tape.value(a).transpose() * g;
    });
}

Var linear(Tape &t, Var x, Var w, Var b) {
    Matrix out = t.value(x) * t.value(w);
    out.rowwise() += t.value(b).row(0);
    const bool needs = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
    return t.record(std::move(out), needs, [x, w, b](Tape &tape, const Matrix &g) {
        if (tape.needs_grad(x))
            tape.grad(x).noalias() += g * tape.value(w).transpose();
        if (tape.needs_grad(w))
            tape.grad(w).noalias() += tape.value(x).transpose() * g;
        if (tape.needs_grad(b))
            tape.grad(b).row(0) += g.colwise().sum();
    });
}

Var add(Tape &t, Var a, Var b) {
    Matrix out = t.value(a) + t.value(b);
    return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape &tape, const Matrix &g) {
        tape.accumulate(a, g);
        tape.accumulate(b, g);
    });
}

Var scale(Tape &t, Var a, double factor) {
    Matrix out = t.value(a) * factor;
    return t.record(std::move(out), t.needs_grad(a),
                    [a, factor](Tape &tape, const Matrix &g) { tape.accumulate(a, g * factor); });
}

Var relu(Tape &t, Var a) {
    Matrix out = t.value(a).cwiseMax(0.0);
    return t.record(std::move(out), t.needs_grad(a), [a](Tape &tape, const Matrix &g) {
        tape.grad(a).array() += (tape.value(a).array() > 0.0).select(g.array(), 0.0);
    });
}

Var gelu(Tape &t, Var a) {
    const Matrix &x = t.value(a);
    Matrix out = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2)); });
    return t.record(std::move(out), t.needs_grad(a), [a](Tape &tape, const Matrix &g) {
        Matrix d = tape.value(a).unaryExpr([](double v) {
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + v * pdf;
        });
        tape.accumulate(a, d.cwiseProduct(g));
    });
}

Var softmax_rows(Tape &t, Var a) {
    Matrix out = log_softmax_rows(t.value(a)).array().exp();
    const int self = static_cast<int>(t.size());
    return t.record(std::move(out), t.needs_grad(a), [a, self](Tape &tape, const Matrix &g) {
        const Matrix &y = tape.value(Var{self});
        Eigen::VectorXd dots = (g.cwiseProduct(y)).rowwise().sum();
        Matrix d = y.cwiseProduct(g - dots.replicate(1, g.cols()));
        tape.accumulate(a, d);
    });
}

Var layer_norm(Tape &t, Var x, Var gamma, Var beta, double eps) {
    const Matrix &in = t.value(x);
    const auto rows = in.rows();
    const auto cols = in.cols();
    auto xhat = std::make_shared<Matrix>(rows, cols);
    auto inv_std = std::make_shared<Eigen::VectorXd>(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mean = in.row(r).mean();
        const double var = (in.row(r).array() - mean).square().mean();
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)(r) = inv;
        xhat->row(r) = (in.row(r).array() - mean) * inv;
    }
    Matrix out = xhat->array().rowwise() * t.value(gamma).row(0).array();
    out.rowwise() += t.value(beta).row(0);
    const bool needs = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
    return t.record(std::move(out), needs, [x, gamma, beta, xhat, inv_std](Tape &tape, const Matrix &g) {
        if (tape.needs_grad(gamma))
            tape.grad(gamma).row(0) += g.cwiseProduct(*xhat).colwise().sum();
        if (tape.needs_grad(beta))
            tape.grad(beta).row(0) += g.colwise().sum();
        if (tape.needs_grad(x)) {
            Matrix dxhat = g.array().rowwise() * tape.value(gamma).row(0).array();
            Matrix &dx = tape.grad(x);
            const double n = static_cast<double>(g.cols());
            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                const double mean_d = dxhat.row(r).sum() / n;
                const double mean_dx = dxhat.row(r).dot(xhat->row(r)) / n;
                dx.row(r).array() +=
                    (*inv_std)(r) * (dxhat.row(r).array() - mean_d - xhat->row(r).array() * mean_dx);
            }
        }
    });
}

Var embedding(Tape &t, Var table, std::span<const std::int32_t> ids) {
    const Matrix &tab = t.value(table);
    Matrix out(static_cast<Eigen::Index>(ids.size()), tab.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tab.rows())
            fail(ErrorCategory::validation, "embedding id " + std::to_string(ids[i]) + " out of range");
        out.row(static_cast<Eigen::Index>(i)) = tab.row(ids[i]);
    }
    auto kept = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
    return t.record(std::move(out), t.needs_grad(table), [table, kept](Tape &tape, const Matrix &g) {
        Matrix &dt = tape.grad(table);
        for (std::size_t i = 0; i < kept->size(); ++i)
            dt.row((*kept)[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

Var dropout(Tape &t, Var a, double rate, Rng &rng) {
    if (rate <= 0.0)
        return a;
    const Matrix &in = t.value(a);
    auto mask = std::make_shared<Matrix>(in.rows(), in.cols());
    const double keep_scale = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < mask->size(); ++i)
        mask->data()[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    Matrix out = in.cwiseProduct(*mask);
    return t.record(std::move(out), t.needs_grad(a),
                    [a, mask](Tape &tape, const Matrix &g) { tape.accumulate(a, g.cwiseProduct(*mask)); });
}

Var attention(Tape &t, Var q, Var k, Var v, std::shared_ptr<const std::vector<AttentionSegment>> segments,
              int heads, bool causal) {
    const Matrix &Q = t.value(q);
    const Matrix &K = t.value(k);
    const Matrix &V = t.value(v);
    const auto d = Q.cols();
    if (heads <= 0 || d % heads != 0 || K.cols() != d || V.cols() != d || K.rows() != V.rows())
        fail(ErrorCategory::validation, "attention: inconsistent shapes or head count");
    const auto dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    // Probabilities laid out [segment][query][key][head], masked entries zero.
    std::size_t prob_size = 0;
    for (const auto &seg : *segments) {
        if (causal && seg.q_len != seg.k_len)
            fail(ErrorCategory::validation, "attention: causal segment must be square");
        if (seg.q_begin < 0 || seg.k_begin < 0 || seg.q_begin + seg.q_len > Q.rows() ||
            seg.k_begin + seg.k_len > K.rows())
            fail(ErrorCategory::validation, "attention: segment out of range");
        prob_size += static_cast<std::size_t>(seg.q_len) * static_cast<std::size_t>(seg.k_len) *
                     static_cast<std::size_t>(heads);
    }
    auto probs = std::make_shared<std::vector<double>>(prob_size, 0.0);
    Matrix out = Matrix::Zero(Q.rows(), d);
    std::vector<double> prod(static_cast<std::size_t>(d));
    std::vector<double> expanded(static_cast<std::size_t>(d));
    std::vector<double> row_max(static_cast<std::size_t>(heads));
    std::vector<double> row_sum(static_cast<std::size_t>(heads));
    double *p = probs->data();
    for (const auto &seg : *segments) {
        for (int i = 0; i < seg.q_len; ++i, p += seg.k_len * heads) {
            const double *qi = Q.data() + (seg.q_begin + i) * d;
            const int visible = causal ? i + 1 : seg.k_len;
            std::fill(row_max.begin(), row_max.end(), -std::numeric_limits<double>::infinity());
            for (int j = 0; j < visible; ++j) {
                const double *kj = K.data() + (seg.k_begin + j) * d;
                for (Eigen::Index c = 0; c < d; ++c)
                    prod[c] = qi[c] * kj[c];
                double *pj = p + j * heads;
                for (int h = 0; h < heads; ++h) {
                    double s = 0.0;
                    for (Eigen::Index c = h * dh; c < (h + 1) * dh; ++c)
                        s += prod[c];
                    pj[h] = s * inv_sqrt;
                    row_max[h] = std::max(row_max[h], pj[h]);
                }
            }
            std::fill(row_sum.begin(), row_sum.end(), 0.0);
            for (int j = 0; j < visible; ++j) {
                double *pj = p + j * heads;
                for (int h = 0; h < heads; ++h) {
                    pj[h] = std::exp(pj[h] - row_max[h]);
                    row_sum[h] += pj[h];
                }
            }
            double *oi = out.data() + (seg.q_begin + i) * d;
            for (int j = 0; j < visible; ++j) {
                double *pj = p + j * heads;
                for (int h = 0; h < heads; ++h) {
                    pj[h] /= row_sum[h];
                    std::fill(expanded.begin() + h * dh, expanded.begin() + (h + 1) * dh, pj[h]);
                }
                const double *vj = V.data() + (seg.k_begin + j) * d;
                for (Eigen::Index c = 0; c < d; ++c)
                    oi[c] += expanded[c] * vj[c];
            }
        }
    }
    const bool needs = t.needs_grad(q) || t.needs_grad(k) || t.needs_grad(v);
    return t.record(std::move(out), needs, [q, k, v, segments, heads, dh, inv_sqrt, probs, causal](Tape &tape,
                                                                                                   const Matrix &g) {
        const Matrix &Q = tape.value(q);
        const Matrix &K = tape.value(k);
        const Matrix &V = tape.value(v);
        const auto d = Q.cols();
        Matrix dQ = Matrix::Zero(Q.rows(), d);
        Matrix dK = Matrix::Zero(K.rows(), d);
        Matrix dV = Matrix::Zero(V.rows(), d);
        std::vector<double> prod(static_cast<std::size_t>(d));
        std::vector<double> expanded(static_cast<std::size_t>(d));
        std::vector<double> dots(static_cast<std::size_t>(heads));
        std::vector<double> dp;
        const double *p = probs->data();
        for (const auto &seg : *segments) {
            dp.resize(static_cast<std::size_t>(seg.k_len * heads));
            for (int i = 0; i < seg.q_len; ++i, p += seg.k_len * heads) {
                const int visible = causal ? i + 1 : seg.k_len;
                const double *gi = g.data() + (seg.q_begin + i) * d;
                const double *qi = Q.data() + (seg.q_begin + i) * d;
                double *dqi = dQ.data() + (seg.q_begin + i) * d;
                std::fill(dots.begin(), dots.end(), 0.0);
                for (int j = 0; j < visible; ++j) {
                    const double *pj = p + j * heads;
                    const double *vj = V.data() + (seg.k_begin + j) * d;
                    double *dvj = dV.data() + (seg.k_begin + j) * d;
                    for (int h = 0; h < heads; ++h)
                        std::fill(expanded.begin() + h * dh, expanded.begin() + (h + 1) * dh, pj[h]);
                    for (Eigen::Index c = 0; c < d; ++c) {
                        prod[c] = gi[c] * vj[c];
                        dvj[c] += expanded[c] * gi[c];
                    }
                    for (int h = 0; h < heads; ++h) {
                        double s = 0.0;
                        for (Eigen::Index c = h * dh; c < (h + 1) * dh; ++c)
                            s += prod[c];
                        dp[j * heads + h] = s;
                        dots[h] += s * pj[h];
                    }
                }
                for (int j = 0; j < visible; ++j) {
                    const double *pj = p + j * heads;
                    for (int h = 0; h < heads; ++h) {
                        const double sj = pj[h] * (dp[j * heads + h] - dots[h]) * inv_sqrt;
                        std::fill(expanded.begin() + h * dh, expanded.begin() + (h + 1) * dh, sj);
                    }
                    const double *kj = K.data() + (seg.k_begin + j) * d;
                    double *dkj = dK.data() + (seg.k_begin + j) * d;
                    for (Eigen::Index c = 0; c < d; ++c) {
                        dqi[c] += expanded[c] * kj[c];
                        dkj[c] += expanded[c] * qi[c];
                    }
                }
            }
        }
        tape.accumulate(q, dQ);
        tape.accumulate(k, dK);
        tape.accumulate(v, dV);
    });
}

Var cross_entropy(Tape &t, Var logits, std::span<const std::int32_t> targets, double label_smoothing,
                  std::int32_t ignore_id, double *nll_out) {
    const Matrix &z = t.value(logits);
    if (static_cast<std::size_t>(z.rows()) != targets.size())
        fail(ErrorCategory::validation, "cross_entropy: one target per logit row required");
    const auto vocab = z.cols();
    Matrix logp = log_softmax_rows(z);
    std::size_t counted = 0;
    double loss = 0.0;
    double nll = 0.0;
    const double off = label_smoothing / static_cast<double>(vocab);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] == ignore_id)
            continue;
        if (targets[i] < 0 || targets[i] >= vocab)
            fail(ErrorCategory::validation, "cross_entropy: target id out of range");
        ++counted;
        const auto r = static_cast<Eigen::Index>(i);
        const double target_lp = logp(r, targets[i]);
        nll -= target_lp;
        loss -= (1.0 - label_smoothing) * target_lp + off * logp.row(r).sum();
    }
    if (counted == 0)
        fail(ErrorCategory::validation, "cross_entropy: every target position is padding");
    const double n = static_cast<double>(counted);
    if (nll_out)
        *nll_out = nll / n;
    Matrix out(1, 1);
    out(0, 0) = loss / n;
    auto kept = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
    auto probs = std::make_shared<Matrix>(logp.array().exp());
    return t.record(std::move(out), t.needs_grad(logits),
                    [logits, kept, probs, label_smoothing, off, ignore_id, n](Tape &tape, const Matrix &g) {
                        const double scale_by = g(0, 0) / n;
                        Matrix &dz = tape.grad(logits);
                        for (std::size_t i = 0; i < kept->size(); ++i) {
                            if ((*kept)[i] == ignore_id)
                                continue;
                            const auto r = static_cast<Eigen::Index>(i);
                            dz.row(r).array() += scale_by * (probs->row(r).array() - off);
                            dz(r, (*kept)[i]) -= scale_by * (1.0 - label_smoothing);
                        }
                    });
}

Var dot_constant(Tape &t, Var a, const Matrix &weights) {
    Matrix out(1, 1);
    out(0, 0) = t.value(a).cwiseProduct(weights).sum();
    auto w = std::make_shared<Matrix>(weights);
    return t.record(std::move(out), t.needs_grad(a),
                    [a, w](Tape &tape, const Matrix &g) { tape.accumulate(a, *w * g(0, 0)); });
}

} // namespace ops

} // namespace kdadapt::nn
