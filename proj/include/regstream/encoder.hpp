#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "regstream/autodiff.hpp"
#include "regstream/dense.hpp"
#include "regstream/positional_encoding.hpp"
#include "regstream/rng.hpp"

namespace regstream {

struct EncoderConfig {
    int layers = 2;
    int heads = 2;
    int width = 16;
    int ff = 32;
    int registers = 0;

    void validate() const {
        if (layers < 0) throw std::invalid_argument("EncoderConfig: layers must be >= 0");
        if (heads < 1) throw std::invalid_argument("EncoderConfig: heads must be >= 1");
        if (width < 1) throw std::invalid_argument("EncoderConfig: width must be >= 1");
        if (width % heads != 0)
            throw std::invalid_argument("EncoderConfig: width must be divisible by heads");
        if (ff < 1) throw std::invalid_argument("EncoderConfig: ff must be >= 1");
        if (registers < 0) throw std::invalid_argument("EncoderConfig: registers must be >= 0");
    }
};

template <typename Scalar>
struct EncoderLayerParams {
    MatrixX<Scalar> ln1_gamma, ln1_beta;
    MatrixX<Scalar> Wq, bq, Wk, bk, Wv, bv, Wo, bo;
    MatrixX<Scalar> ln2_gamma, ln2_beta;
    MatrixX<Scalar> W1, b1, W2, b2;
};

template <typename Scalar>
struct EncoderParams {
    EncoderConfig config;
    std::vector<EncoderLayerParams<Scalar>> layers;
    MatrixX<Scalar> mask_embedding;  // 1 x width
    MatrixX<Scalar> registers;       // registers x width
    MatrixX<Scalar> pad_embedding;   // 1 x width

    std::vector<std::pair<std::string, MatrixX<Scalar>*>> param_refs() {
        std::vector<std::pair<std::string, MatrixX<Scalar>*>> refs;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "encoder.layer" + std::to_string(l) + ".";
            EncoderLayerParams<Scalar>& lp = layers[l];
            refs.emplace_back(p + "ln1_gamma", &lp.ln1_gamma);
            refs.emplace_back(p + "ln1_beta", &lp.ln1_beta);
            refs.emplace_back(p + "Wq", &lp.Wq);
            refs.emplace_back(p + "bq", &lp.bq);
            refs.emplace_back(p + "Wk", &lp.Wk);
            refs.emplace_back(p + "bk", &lp.bk);
            refs.emplace_back(p + "Wv", &lp.Wv);
            refs.emplace_back(p + "bv", &lp.bv);
            refs.emplace_back(p + "Wo", &lp.Wo);
            refs.emplace_back(p + "bo", &lp.bo);
            refs.emplace_back(p + "ln2_gamma", &lp.ln2_gamma);
            refs.emplace_back(p + "ln2_beta", &lp.ln2_beta);
            refs.emplace_back(p + "W1", &lp.W1);
            refs.emplace_back(p + "b1", &lp.b1);
            refs.emplace_back(p + "W2", &lp.W2);
            refs.emplace_back(p + "b2", &lp.b2);
        }
        refs.emplace_back("encoder.mask_embedding", &mask_embedding);
        refs.emplace_back("encoder.registers", &registers);
        refs.emplace_back("encoder.pad_embedding", &pad_embedding);
        return refs;
    }

    std::vector<std::pair<std::string, const MatrixX<Scalar>*>> param_refs() const {
        std::vector<std::pair<std::string, const MatrixX<Scalar>*>> refs;
        for (auto& [name, mat] : const_cast<EncoderParams*>(this)->param_refs())
            refs.emplace_back(name, mat);
        return refs;
    }
};

namespace detail {

template <typename Scalar>
MatrixX<Scalar> xavier_uniform(int rows, int cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    MatrixX<Scalar> m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            m(r, c) = static_cast<Scalar>((2.0 * uniform_real(rng) - 1.0) * limit);
    return m;
}

template <typename Scalar>
MatrixX<Scalar> gaussian(int rows, int cols, double stddev, Rng& rng) {
    MatrixX<Scalar> m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = static_cast<Scalar>(normal(rng) * stddev);
    return m;
}

}  // namespace detail

// Every tensor draws from its own name-derived stream, so models that differ
// only in register count share all remaining initial parameters bit for bit.
template <typename Scalar>
EncoderParams<Scalar> init_encoder(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    const int d = config.width;
    EncoderParams<Scalar> params;
    params.config = config;
    params.layers.resize(config.layers);
    for (auto& [name, mat] : params.param_refs()) {
        Rng rng = seeded_rng(seed, name);
        const std::string leaf = name.substr(name.rfind('.') + 1);
        if (leaf == "ln1_gamma" || leaf == "ln2_gamma")
            *mat = MatrixX<Scalar>::Ones(1, d);
        else if (leaf == "ln1_beta" || leaf == "ln2_beta")
            *mat = MatrixX<Scalar>::Zero(1, d);
        else if (leaf == "Wq" || leaf == "Wk" || leaf == "Wv" || leaf == "Wo")
            *mat = detail::xavier_uniform<Scalar>(d, d, rng);
        else if (leaf == "W1")
            *mat = detail::xavier_uniform<Scalar>(d, config.ff, rng);
        else if (leaf == "W2")
            *mat = detail::xavier_uniform<Scalar>(config.ff, d, rng);
        else if (leaf == "b1")
            *mat = MatrixX<Scalar>::Zero(1, config.ff);
        else if (leaf == "bq" || leaf == "bk" || leaf == "bv" || leaf == "bo" || leaf == "b2")
            *mat = MatrixX<Scalar>::Zero(1, d);
        else if (leaf == "mask_embedding")
            *mat = detail::gaussian<Scalar>(1, d, 0.02, rng);
        else if (leaf == "registers")
            *mat = detail::gaussian<Scalar>(config.registers, d, 0.02, rng);
        else if (leaf == "pad_embedding")
            *mat = MatrixX<Scalar>::Zero(1, d);
        else
            throw std::logic_error("init_encoder: unknown tensor " + name);
    }
    return params;
}

// Time steps chosen for masking: each step starts a span independently, spans
// have fixed length and overlapping spans merge. Times are 1-based.
struct MaskingPlan {
    std::vector<int> masked_steps;
};

inline MaskingPlan sample_masking_plan(int frames, double start_prob, int span, Rng& rng) {
    if (frames < 1) throw std::invalid_argument("sample_masking_plan: frames must be >= 1");
    if (span < 1) throw std::invalid_argument("sample_masking_plan: span must be >= 1");
    std::vector<bool> masked(static_cast<std::size_t>(frames) + 1, false);
    for (int t = 1; t <= frames; ++t)
        if (uniform_real(rng) < start_prob)
            for (int k = t; k < t + span && k <= frames; ++k)
                masked[static_cast<std::size_t>(k)] = true;
    MaskingPlan plan;
    for (int t = 1; t <= frames; ++t)
        if (masked[static_cast<std::size_t>(t)]) plan.masked_steps.push_back(t);
    return plan;
}

// Replaces the selected rows with the learned mask embedding.
template <typename Scalar>
MatrixX<Scalar> apply_time_mask(const MatrixX<Scalar>& frames, const MaskingPlan& plan,
                                const MatrixX<Scalar>& mask_embedding) {
    if (mask_embedding.rows() != 1 || mask_embedding.cols() != frames.cols())
        throw std::invalid_argument("apply_time_mask: embedding width mismatch");
    MatrixX<Scalar> out = frames;
    for (int t : plan.masked_steps) {
        if (t < 1 || t > frames.rows())
            throw std::invalid_argument("apply_time_mask: masked step out of range");
        out.row(t - 1) = mask_embedding.row(0);
    }
    return out;
}

// Row-wise softmax over scores that already include the additive mask. The
// max is taken after masking, so forbidden entries contribute exactly zero.
template <typename Scalar>
MatrixX<Scalar> masked_softmax_rows(const MatrixX<Scalar>& scores) {
    MatrixX<Scalar> out(scores.rows(), scores.cols());
    for (int r = 0; r < scores.rows(); ++r) {
        const Scalar m = scores.row(r).maxCoeff();
        if (!(m > -std::numeric_limits<Scalar>::infinity()))
            throw std::runtime_error("masked_softmax_rows: fully masked row");
        Eigen::Matrix<Scalar, 1, Eigen::Dynamic> e =
            (scores.row(r).array() - m).exp().matrix();
        out.row(r) = e / e.sum();
    }
    return out;
}

template <typename Scalar>
MatrixX<Scalar> layer_norm_rows(const MatrixX<Scalar>& x, const MatrixX<Scalar>& gamma,
                                const MatrixX<Scalar>& beta,
                                Scalar eps = static_cast<Scalar>(1e-5)) {
    MatrixX<Scalar> y(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
        const Scalar mean = x.row(r).mean();
        const Scalar var = (x.row(r).array() - mean).square().sum() / x.cols();
        const Scalar inv = Scalar(1) / std::sqrt(var + eps);
        y.row(r) =
            (((x.row(r).array() - mean) * inv) * gamma.row(0).array() + beta.row(0).array())
                .matrix();
    }
    return y;
}

template <typename Scalar>
MatrixX<Scalar> gelu_exact(const MatrixX<Scalar>& x) {
    const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
    return x.unaryExpr([inv_sqrt2](Scalar v) {
        return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2));
    });
}

// Pre-norm transformer encoder over an already assembled row sequence. The
// additive mask has one row and column per input row; `times` supplies the
// 1-based time step used for the positional encoding of each row, with zero
// (register slots) meaning no positional term. There is no final layer norm:
// with zero layers the output is exactly input plus positional encoding.
template <typename Scalar>
MatrixX<Scalar> encode(const MatrixX<Scalar>& input, const MatrixX<Scalar>& mask,
                       const std::vector<int>& times, const EncoderParams<Scalar>& params) {
    const EncoderConfig& cfg = params.config;
    cfg.validate();
    const int rows = static_cast<int>(input.rows());
    const int d = cfg.width;
    if (input.cols() != d) throw std::invalid_argument("encode: input width mismatch");
    if (mask.rows() != rows || mask.cols() != rows)
        throw std::invalid_argument("encode: mask shape mismatch");
    if (static_cast<int>(times.size()) != rows)
        throw std::invalid_argument("encode: times size mismatch");
    if (!input.allFinite()) throw std::invalid_argument("encode: input is not finite");

    MatrixX<Scalar> x = input + pe_rows<Scalar>(times, d);
    const int heads = cfg.heads;
    const int dh = d / heads;
    const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    for (const EncoderLayerParams<Scalar>& lp : params.layers) {
        MatrixX<Scalar> h = layer_norm_rows<Scalar>(x, lp.ln1_gamma, lp.ln1_beta);
        MatrixX<Scalar> q = (h * lp.Wq).rowwise() + lp.bq.row(0);
        MatrixX<Scalar> k = (h * lp.Wk).rowwise() + lp.bk.row(0);
        MatrixX<Scalar> v = (h * lp.Wv).rowwise() + lp.bv.row(0);
        MatrixX<Scalar> attn(rows, d);
        for (int head = 0; head < heads; ++head) {
            MatrixX<Scalar> scores =
                (q.middleCols(head * dh, dh) * k.middleCols(head * dh, dh).transpose()) *
                inv_sqrt_dh;
            scores += mask;
            attn.middleCols(head * dh, dh) =
                masked_softmax_rows<Scalar>(scores) * v.middleCols(head * dh, dh);
        }
        x += (attn * lp.Wo).rowwise() + lp.bo.row(0);
        MatrixX<Scalar> h2 = layer_norm_rows<Scalar>(x, lp.ln2_gamma, lp.ln2_beta);
        MatrixX<Scalar> ff = gelu_exact<Scalar>((h2 * lp.W1).rowwise() + lp.b1.row(0));
        x += (ff * lp.W2).rowwise() + lp.b2.row(0);
    }
    return x;
}

// Tape-side mirror of EncoderParams, one leaf variable per tensor.
template <typename Scalar>
struct EncoderLayerVars {
    ad::Var<Scalar> ln1_gamma, ln1_beta;
    ad::Var<Scalar> Wq, bq, Wk, bk, Wv, bv, Wo, bo;
    ad::Var<Scalar> ln2_gamma, ln2_beta;
    ad::Var<Scalar> W1, b1, W2, b2;
};

template <typename Scalar>
struct EncoderVars {
    EncoderConfig config;
    std::vector<EncoderLayerVars<Scalar>> layers;
    ad::Var<Scalar> mask_embedding, registers, pad_embedding;
    std::vector<std::pair<std::string, ad::Var<Scalar>>> named;
};

template <typename Scalar>
EncoderVars<Scalar> make_encoder_vars(ad::Tape<Scalar>& tape,
                                      const EncoderParams<Scalar>& params) {
    EncoderVars<Scalar> vars;
    vars.config = params.config;
    vars.layers.resize(params.layers.size());
    std::vector<std::pair<std::string, ad::Var<Scalar>*>> slots;
    for (std::size_t l = 0; l < vars.layers.size(); ++l) {
        const std::string p = "encoder.layer" + std::to_string(l) + ".";
        EncoderLayerVars<Scalar>& lv = vars.layers[l];
        slots.emplace_back(p + "ln1_gamma", &lv.ln1_gamma);
        slots.emplace_back(p + "ln1_beta", &lv.ln1_beta);
        slots.emplace_back(p + "Wq", &lv.Wq);
        slots.emplace_back(p + "bq", &lv.bq);
        slots.emplace_back(p + "Wk", &lv.Wk);
        slots.emplace_back(p + "bk", &lv.bk);
        slots.emplace_back(p + "Wv", &lv.Wv);
        slots.emplace_back(p + "bv", &lv.bv);
        slots.emplace_back(p + "Wo", &lv.Wo);
        slots.emplace_back(p + "bo", &lv.bo);
        slots.emplace_back(p + "ln2_gamma", &lv.ln2_gamma);
        slots.emplace_back(p + "ln2_beta", &lv.ln2_beta);
        slots.emplace_back(p + "W1", &lv.W1);
        slots.emplace_back(p + "b1", &lv.b1);
        slots.emplace_back(p + "W2", &lv.W2);
        slots.emplace_back(p + "b2", &lv.b2);
    }
    slots.emplace_back("encoder.mask_embedding", &vars.mask_embedding);
    slots.emplace_back("encoder.registers", &vars.registers);
    slots.emplace_back("encoder.pad_embedding", &vars.pad_embedding);

    auto refs = params.param_refs();
    if (refs.size() != slots.size()) throw std::logic_error("make_encoder_vars: ref mismatch");
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (refs[i].first != slots[i].first)
            throw std::logic_error("make_encoder_vars: name mismatch at " + slots[i].first);
        *slots[i].second = tape.leaf(*refs[i].second);
        vars.named.emplace_back(slots[i].first, *slots[i].second);
    }
    return vars;
}

// Same arithmetic as encode(), expressed on the tape.
template <typename Scalar>
ad::Var<Scalar> encode_tape(ad::Tape<Scalar>& tape, ad::Var<Scalar> input,
                            const MatrixX<Scalar>& mask, const std::vector<int>& times,
                            const EncoderVars<Scalar>& vars) {
    const EncoderConfig& cfg = vars.config;
    cfg.validate();
    const int rows = static_cast<int>(tape.value(input).rows());
    const int d = cfg.width;
    if (tape.value(input).cols() != d)
        throw std::invalid_argument("encode_tape: input width mismatch");
    if (mask.rows() != rows || mask.cols() != rows)
        throw std::invalid_argument("encode_tape: mask shape mismatch");
    if (static_cast<int>(times.size()) != rows)
        throw std::invalid_argument("encode_tape: times size mismatch");
    if (!tape.value(input).allFinite())
        throw std::invalid_argument("encode_tape: input is not finite");

    ad::Var<Scalar> x = ad::add_constant(input, pe_rows<Scalar>(times, d));
    ad::Var<Scalar> mask_const = tape.constant(mask);
    const int heads = cfg.heads;
    const int dh = d / heads;
    const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    for (const EncoderLayerVars<Scalar>& lv : vars.layers) {
        ad::Var<Scalar> h = ad::layer_norm(x, lv.ln1_gamma, lv.ln1_beta);
        ad::Var<Scalar> q = ad::add_row_broadcast(ad::matmul(h, lv.Wq), lv.bq);
        ad::Var<Scalar> k = ad::add_row_broadcast(ad::matmul(h, lv.Wk), lv.bk);
        ad::Var<Scalar> v = ad::add_row_broadcast(ad::matmul(h, lv.Wv), lv.bv);
        std::vector<ad::Var<Scalar>> head_outs;
        for (int head = 0; head < heads; ++head) {
            ad::Var<Scalar> qh = ad::slice_cols(q, head * dh, dh);
            ad::Var<Scalar> kh = ad::slice_cols(k, head * dh, dh);
            ad::Var<Scalar> vh = ad::slice_cols(v, head * dh, dh);
            ad::Var<Scalar> scores =
                ad::add(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_dh), mask_const);
            head_outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
        }
        ad::Var<Scalar> attn = ad::hcat(head_outs);
        x = ad::add(x, ad::add_row_broadcast(ad::matmul(attn, lv.Wo), lv.bo));
        ad::Var<Scalar> h2 = ad::layer_norm(x, lv.ln2_gamma, lv.ln2_beta);
        ad::Var<Scalar> ff = ad::gelu(ad::add_row_broadcast(ad::matmul(h2, lv.W1), lv.b1));
        x = ad::add(x, ad::add_row_broadcast(ad::matmul(ff, lv.W2), lv.b2));
    }
    return x;
}

}  // namespace regstream
