#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "regstream/autodiff.hpp"
#include "regstream/dense.hpp"
#include "regstream/layout.hpp"
#include "regstream/rng.hpp"

namespace regstream {

struct LossConfig {
    double alpha = 0.1;  // diversity weight
    double beta = 1.0;   // future prediction weight
    double kappa = 0.1;  // contrastive temperature
    int distractors = 10;

    void validate() const {
        if (!(alpha >= 0.0)) throw std::invalid_argument("LossConfig: alpha must be >= 0");
        if (!(beta >= 0.0)) throw std::invalid_argument("LossConfig: beta must be >= 0");
        if (!(kappa > 0.0)) throw std::invalid_argument("LossConfig: kappa must be > 0");
        if (distractors < 1)
            throw std::invalid_argument("LossConfig: distractors must be >= 1");
    }
};

struct LossBreakdown {
    double l_off = 0.0;
    double l_on = 0.0;
    double l_d = 0.0;
    double l_fp = 0.0;
    double l_dual = 0.0;
    double l_total = 0.0;
    int skipped_utterances = 0;
};

// K distinct distractor indices per anchor, drawn uniformly from the other
// anchors. When fewer than K candidates exist, all of them are used.
inline std::vector<std::vector<int>> sample_distractors(int anchors, int k, Rng& rng) {
    if (anchors < 2)
        throw std::invalid_argument("sample_distractors: need at least two anchors");
    if (k < 1) throw std::invalid_argument("sample_distractors: k must be >= 1");
    const int effective = std::min(k, anchors - 1);
    std::vector<std::vector<int>> out(static_cast<std::size_t>(anchors));
    for (int i = 0; i < anchors; ++i) {
        std::vector<int> pool;
        pool.reserve(static_cast<std::size_t>(anchors) - 1);
        for (int j = 0; j < anchors; ++j)
            if (j != i) pool.push_back(j);
        for (int s = 0; s < effective; ++s) {
            const int j = uniform_int(rng, s, static_cast<int>(pool.size()) - 1);
            std::swap(pool[static_cast<std::size_t>(s)], pool[static_cast<std::size_t>(j)]);
        }
        pool.resize(static_cast<std::size_t>(effective));
        out[static_cast<std::size_t>(i)] = std::move(pool);
    }
    return out;
}

namespace detail {

template <typename Scalar>
MatrixX<Scalar> cosine_matrix(const MatrixX<Scalar>& y, const MatrixX<Scalar>& q) {
    if (y.rows() != q.rows() || y.cols() != q.cols())
        throw std::invalid_argument("cosine_matrix: shape mismatch");
    MatrixX<Scalar> yn = y;
    MatrixX<Scalar> qn = q;
    for (int r = 0; r < y.rows(); ++r) {
        yn.row(r) /= std::sqrt(y.row(r).squaredNorm() + static_cast<Scalar>(1e-16));
        qn.row(r) /= std::sqrt(q.row(r).squaredNorm() + static_cast<Scalar>(1e-16));
    }
    return yn * qn.transpose();
}

}  // namespace detail

// InfoNCE over cosine similarities: each row of y is scored against its own
// quantized target and the targets of its distractors; the result is the sum
// over anchors of -log softmax(self).
template <typename Scalar>
double contrastive_loss(const MatrixX<Scalar>& y, const MatrixX<Scalar>& q,
                        const std::vector<std::vector<int>>& distractors, double kappa) {
    const int n = static_cast<int>(y.rows());
    if (static_cast<int>(distractors.size()) != n)
        throw std::invalid_argument("contrastive_loss: distractor list mismatch");
    MatrixX<Scalar> logits = detail::cosine_matrix<Scalar>(y, q) / static_cast<Scalar>(kappa);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<Scalar> cand;
        cand.push_back(logits(i, i));
        for (int j : distractors[static_cast<std::size_t>(i)]) {
            if (j < 0 || j >= n || j == i)
                throw std::invalid_argument("contrastive_loss: bad distractor index");
            cand.push_back(logits(i, j));
        }
        const Scalar m = *std::max_element(cand.begin(), cand.end());
        Scalar acc = Scalar(0);
        for (Scalar c : cand) acc += std::exp(c - m);
        total += static_cast<double>(m + std::log(acc) - logits(i, i));
    }
    return total;
}

// Fraction of anchors whose self similarity strictly beats every distractor;
// ties count as incorrect.
template <typename Scalar>
double contrastive_accuracy(const MatrixX<Scalar>& y, const MatrixX<Scalar>& q,
                            const std::vector<std::vector<int>>& distractors) {
    const int n = static_cast<int>(y.rows());
    if (static_cast<int>(distractors.size()) != n)
        throw std::invalid_argument("contrastive_accuracy: distractor list mismatch");
    MatrixX<Scalar> cos = detail::cosine_matrix<Scalar>(y, q);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        bool ok = true;
        for (int j : distractors[static_cast<std::size_t>(i)])
            if (!(cos(i, i) > cos(i, j))) ok = false;
        if (ok) ++correct;
    }
    return n > 0 ? static_cast<double>(correct) / n : 0.0;
}

// Tape composition of the same quantity. `sever_targets` cuts the gradient
// into q, which is how the online branch keeps its targets fixed.
template <typename Scalar>
ad::Var<Scalar> contrastive_loss_tape(ad::Tape<Scalar>& tape, ad::Var<Scalar> y,
                                      ad::Var<Scalar> q,
                                      const std::vector<std::vector<int>>& distractors,
                                      double kappa, bool sever_targets) {
    const int n = static_cast<int>(tape.value(y).rows());
    const int d = static_cast<int>(tape.value(y).cols());
    if (tape.value(q).rows() != n || tape.value(q).cols() != d)
        throw std::invalid_argument("contrastive_loss_tape: shape mismatch");
    if (static_cast<int>(distractors.size()) != n)
        throw std::invalid_argument("contrastive_loss_tape: distractor list mismatch");
    if (sever_targets) q = ad::stop_grad(q);

    MatrixX<Scalar> eps = MatrixX<Scalar>::Constant(n, 1, static_cast<Scalar>(1e-16));
    ad::Var<Scalar> ones = tape.constant(MatrixX<Scalar>::Ones(n, 1));
    ad::Var<Scalar> ny = ad::sqrt(ad::add_constant(ad::row_sum(ad::hadamard(y, y)), eps));
    ad::Var<Scalar> nq = ad::sqrt(ad::add_constant(ad::row_sum(ad::hadamard(q, q)), eps));
    ad::Var<Scalar> yn = ad::scale_rows(y, ad::cdiv(ones, ny));
    ad::Var<Scalar> qn = ad::scale_rows(q, ad::cdiv(ones, nq));
    ad::Var<Scalar> logits =
        ad::scale(ad::matmul_nt(yn, qn), static_cast<Scalar>(1.0 / kappa));

    const Scalar ninf = -std::numeric_limits<Scalar>::infinity();
    MatrixX<Scalar> candidate = MatrixX<Scalar>::Constant(n, n, ninf);
    for (int i = 0; i < n; ++i) {
        candidate(i, i) = Scalar(0);
        for (int j : distractors[static_cast<std::size_t>(i)]) {
            if (j < 0 || j >= n || j == i)
                throw std::invalid_argument("contrastive_loss_tape: bad distractor index");
            candidate(i, j) = Scalar(0);
        }
    }
    ad::Var<Scalar> lse = ad::row_logsumexp(ad::add_constant(logits, candidate));
    ad::Var<Scalar> self = ad::diagonal(logits);
    return ad::sum_all(ad::sub(lse, self));
}

// Times predicted by the registers of each chunk: the frames just past that
// chunk's visible range, clipped to the sequence length. Chunks whose whole
// window falls beyond the end contribute nothing.
inline std::vector<std::vector<int>> future_target_times(const StreamConfig& config) {
    config.validate();
    const int n = config.num_chunks();
    std::vector<std::vector<int>> times(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) {
        const int base = i * config.chunk + config.lookahead;
        for (int r = 1; r <= config.registers; ++r)
            if (base + r <= config.frames)
                times[static_cast<std::size_t>(i) - 1].push_back(base + r);
    }
    return times;
}

// Sum over chunks of the mean squared error between register outputs and the
// offline encodings of the frames they are asked to predict.
template <typename Scalar>
double future_prediction_loss(const MatrixX<Scalar>& y_on, const MatrixX<Scalar>& y_off,
                              const ChunkLayout& layout) {
    const StreamConfig& config = layout.config();
    if (y_on.rows() != layout.size())
        throw std::invalid_argument("future_prediction_loss: online rows mismatch");
    if (y_off.rows() != config.frames)
        throw std::invalid_argument("future_prediction_loss: offline rows mismatch");
    const std::vector<std::vector<int>> times = future_target_times(config);
    double total = 0.0;
    for (int i = 1; i <= config.num_chunks(); ++i) {
        const std::vector<int>& chunk_times = times[static_cast<std::size_t>(i) - 1];
        if (chunk_times.empty()) continue;
        const std::vector<int> slots = layout.register_indices(i);
        double sq = 0.0;
        for (std::size_t r = 0; r < chunk_times.size(); ++r) {
            const auto diff = y_on.row(slots[r]) - y_off.row(chunk_times[r] - 1);
            sq += static_cast<double>(diff.squaredNorm());
        }
        total += sq / (static_cast<double>(chunk_times.size()) * y_on.cols());
    }
    return total;
}

// Tape version; the offline targets are severed, so this loss trains the
// registers (and everything upstream of them) only. Passing `frozen_y_off`
// replaces the severed targets with fixed values, which keeps the loss value
// identical when they equal the live offline outputs but makes the function
// literally constant in them; finite-difference checks need that.
template <typename Scalar>
ad::Var<Scalar> future_prediction_loss_tape(ad::Tape<Scalar>& tape, ad::Var<Scalar> y_on,
                                            ad::Var<Scalar> y_off, const ChunkLayout& layout,
                                            const MatrixX<Scalar>* frozen_y_off = nullptr) {
    const StreamConfig& config = layout.config();
    if (tape.value(y_on).rows() != layout.size())
        throw std::invalid_argument("future_prediction_loss_tape: online rows mismatch");
    if (tape.value(y_off).rows() != config.frames)
        throw std::invalid_argument("future_prediction_loss_tape: offline rows mismatch");
    const int d = static_cast<int>(tape.value(y_on).cols());
    const std::vector<std::vector<int>> times = future_target_times(config);
    ad::Var<Scalar> total{};
    bool first = true;
    for (int i = 1; i <= config.num_chunks(); ++i) {
        const std::vector<int>& chunk_times = times[static_cast<std::size_t>(i) - 1];
        if (chunk_times.empty()) continue;
        std::vector<int> slots = layout.register_indices(i);
        slots.resize(chunk_times.size());
        std::vector<int> target_rows;
        target_rows.reserve(chunk_times.size());
        for (int t : chunk_times) target_rows.push_back(t - 1);
        ad::Var<Scalar> pred = ad::gather_rows(y_on, slots);
        ad::Var<Scalar> target{};
        if (frozen_y_off != nullptr) {
            MatrixX<Scalar> rows(static_cast<int>(target_rows.size()), d);
            for (std::size_t k = 0; k < target_rows.size(); ++k)
                rows.row(static_cast<int>(k)) = frozen_y_off->row(target_rows[k]);
            target = tape.constant(std::move(rows));
        } else {
            target = ad::stop_grad(ad::gather_rows(y_off, target_rows));
        }
        ad::Var<Scalar> diff = ad::sub(pred, target);
        ad::Var<Scalar> mse = ad::scale(
            ad::sum_all(ad::hadamard(diff, diff)),
            Scalar(1) / static_cast<Scalar>(chunk_times.size() * static_cast<std::size_t>(d)));
        total = first ? mse : ad::add(total, mse);
        first = false;
    }
    if (first) total = tape.constant(MatrixX<Scalar>::Zero(1, 1));
    return total;
}

// L_dual = (L_off + L_on) / 2 + alpha * L_d, L_total = L_dual + beta * L_fp.
template <typename Scalar>
ad::Var<Scalar> compose_total_loss_tape(ad::Var<Scalar> l_off, ad::Var<Scalar> l_on,
                                        ad::Var<Scalar> l_d, ad::Var<Scalar> l_fp,
                                        const LossConfig& config) {
    config.validate();
    ad::Var<Scalar> dual = ad::add(ad::scale(ad::add(l_off, l_on), Scalar(0.5)),
                                   ad::scale(l_d, static_cast<Scalar>(config.alpha)));
    return ad::add(dual, ad::scale(l_fp, static_cast<Scalar>(config.beta)));
}

inline LossBreakdown make_breakdown(double l_off, double l_on, double l_d, double l_fp,
                                    const LossConfig& config) {
    LossBreakdown b;
    b.l_off = l_off;
    b.l_on = l_on;
    b.l_d = l_d;
    b.l_fp = l_fp;
    b.l_dual = 0.5 * (l_off + l_on) + config.alpha * l_d;
    b.l_total = b.l_dual + config.beta * l_fp;
    const struct {
        const char* name;
        double value;
    } parts[] = {{"L_off", b.l_off}, {"L_on", b.l_on},     {"L_d", b.l_d},
                 {"L_fp", b.l_fp},   {"L_dual", b.l_dual}, {"L_total", b.l_total}};
    for (const auto& part : parts)
        if (!std::isfinite(part.value))
            throw std::runtime_error(std::string("loss is not finite: ") + part.name);
    return b;
}

}  // namespace regstream
