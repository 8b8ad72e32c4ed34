#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "regstream/autodiff.hpp"
#include "regstream/dense.hpp"
#include "regstream/encoder.hpp"
#include "regstream/rng.hpp"

namespace regstream {

struct QuantizerConfig {
    int groups = 2;
    int entries = 16;
    int code_dim = 8;
    int in_dim = 16;
    int out_dim = 16;
    double temperature = 1.0;

    void validate() const {
        if (groups < 1) throw std::invalid_argument("QuantizerConfig: groups must be >= 1");
        if (entries < 1) throw std::invalid_argument("QuantizerConfig: entries must be >= 1");
        if (code_dim < 1)
            throw std::invalid_argument("QuantizerConfig: code_dim must be >= 1");
        if (in_dim < 1) throw std::invalid_argument("QuantizerConfig: in_dim must be >= 1");
        if (out_dim < 1) throw std::invalid_argument("QuantizerConfig: out_dim must be >= 1");
        if (!(temperature > 0.0))
            throw std::invalid_argument("QuantizerConfig: temperature must be > 0");
    }
};

template <typename Scalar>
struct QuantizerParams {
    QuantizerConfig config;
    MatrixX<Scalar> logit_W;    // in_dim x groups*entries
    MatrixX<Scalar> logit_b;    // 1 x groups*entries
    MatrixX<Scalar> codebooks;  // groups*entries x code_dim, group-major rows
    MatrixX<Scalar> out_W;      // groups*code_dim x out_dim, bias-free so the
                                // targets cannot drift toward a shared offset

    std::vector<std::pair<std::string, MatrixX<Scalar>*>> param_refs() {
        return {{"quantizer.logit_W", &logit_W},
                {"quantizer.logit_b", &logit_b},
                {"quantizer.codebooks", &codebooks},
                {"quantizer.out_W", &out_W}};
    }

    std::vector<std::pair<std::string, const MatrixX<Scalar>*>> param_refs() const {
        std::vector<std::pair<std::string, const MatrixX<Scalar>*>> refs;
        for (auto& [name, mat] : const_cast<QuantizerParams*>(this)->param_refs())
            refs.emplace_back(name, mat);
        return refs;
    }
};

// Each (group, entry) starts from a random unit direction in input space. Its
// logit scores the input's alignment with that direction, scaled well above
// the Gumbel noise so early code assignments are input-driven. When the code
// and output widths match the input width, the codebooks reuse the same
// directions and the output map averages the groups, so the initial quantizer
// approximates direction quantization of its input: nearby inputs get nearby
// targets, which gives the contrastive task a smooth starting geometry.
template <typename Scalar>
QuantizerParams<Scalar> init_quantizer(const QuantizerConfig& config, std::uint64_t seed) {
    config.validate();
    QuantizerParams<Scalar> params;
    params.config = config;
    const int gv = config.groups * config.entries;

    Rng dir_rng = seeded_rng(seed, "quantizer.directions");
    MatrixX<Scalar> directions = detail::gaussian<Scalar>(config.in_dim, gv, 1.0, dir_rng);
    for (int c = 0; c < gv; ++c) directions.col(c).normalize();

    params.logit_W = directions * Scalar(4);
    params.logit_b = MatrixX<Scalar>::Zero(1, gv);
    if (config.code_dim == config.in_dim && config.out_dim == config.in_dim) {
        params.codebooks = directions.transpose();
        params.out_W = MatrixX<Scalar>::Zero(config.groups * config.code_dim, config.out_dim);
        for (int g = 0; g < config.groups; ++g)
            params.out_W.block(g * config.code_dim, 0, config.code_dim, config.out_dim) =
                MatrixX<Scalar>::Identity(config.code_dim, config.out_dim) /
                static_cast<Scalar>(config.groups);
    } else {
        Rng book_rng = seeded_rng(seed, "quantizer.codebooks");
        params.codebooks = detail::gaussian<Scalar>(gv, config.code_dim, 0.02, book_rng);
        Rng out_rng = seeded_rng(seed, "quantizer.out_W");
        params.out_W = detail::xavier_uniform<Scalar>(config.groups * config.code_dim,
                                                      config.out_dim, out_rng);
    }
    return params;
}

template <typename Scalar>
MatrixX<Scalar> gumbel_noise(int rows, int cols, Rng& rng) {
    MatrixX<Scalar> m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = static_cast<Scalar>(gumbel(rng));
    return m;
}

template <typename Scalar>
struct QuantizeResult {
    MatrixX<Scalar> quantized;              // rows x out_dim
    MatrixX<Scalar> probs;                  // rows x groups*entries, noise free
    std::vector<std::vector<int>> indices;  // per row, chosen entry per group
};

// Hard product quantization: per group, the entry with the largest perturbed
// logit is selected and its code vector used. The returned probabilities come
// from the unperturbed logits; they are the ones the diversity loss sees.
template <typename Scalar>
QuantizeResult<Scalar> quantize(const MatrixX<Scalar>& input,
                                const QuantizerParams<Scalar>& params,
                                const MatrixX<Scalar>& noise) {
    const QuantizerConfig& cfg = params.config;
    cfg.validate();
    const int rows = static_cast<int>(input.rows());
    const int gv = cfg.groups * cfg.entries;
    if (input.cols() != cfg.in_dim)
        throw std::invalid_argument("quantize: input width mismatch");
    if (noise.rows() != rows || noise.cols() != gv)
        throw std::invalid_argument("quantize: noise shape mismatch");

    MatrixX<Scalar> logits = (input * params.logit_W).rowwise() + params.logit_b.row(0);
    QuantizeResult<Scalar> result;
    result.probs.resize(rows, gv);
    result.indices.assign(static_cast<std::size_t>(rows),
                          std::vector<int>(static_cast<std::size_t>(cfg.groups), 0));
    MatrixX<Scalar> codes(rows, cfg.groups * cfg.code_dim);
    for (int g = 0; g < cfg.groups; ++g) {
        MatrixX<Scalar> raw = logits.middleCols(g * cfg.entries, cfg.entries);
        result.probs.middleCols(g * cfg.entries, cfg.entries) =
            masked_softmax_rows<Scalar>(raw);
        MatrixX<Scalar> perturbed = raw + noise.middleCols(g * cfg.entries, cfg.entries);
        for (int r = 0; r < rows; ++r) {
            int pick = 0;
            perturbed.row(r).maxCoeff(&pick);
            result.indices[static_cast<std::size_t>(r)][static_cast<std::size_t>(g)] = pick;
            codes.row(r).segment(g * cfg.code_dim, cfg.code_dim) =
                params.codebooks.row(g * cfg.entries + pick);
        }
    }
    result.quantized = codes * params.out_W;
    return result;
}

template <typename Scalar>
struct QuantizerVars {
    QuantizerConfig config;
    ad::Var<Scalar> logit_W, logit_b, codebooks, out_W;
    std::vector<std::pair<std::string, ad::Var<Scalar>>> named;
};

template <typename Scalar>
QuantizerVars<Scalar> make_quantizer_vars(ad::Tape<Scalar>& tape,
                                          const QuantizerParams<Scalar>& params) {
    QuantizerVars<Scalar> vars;
    vars.config = params.config;
    std::vector<std::pair<std::string, ad::Var<Scalar>*>> slots = {
        {"quantizer.logit_W", &vars.logit_W},
        {"quantizer.logit_b", &vars.logit_b},
        {"quantizer.codebooks", &vars.codebooks},
        {"quantizer.out_W", &vars.out_W}};
    auto refs = const_cast<QuantizerParams<Scalar>&>(params).param_refs();
    for (std::size_t i = 0; i < slots.size(); ++i) {
        *slots[i].second = tape.leaf(*refs[i].second);
        vars.named.emplace_back(slots[i].first, *slots[i].second);
    }
    return vars;
}

template <typename Scalar>
struct QuantizeTapeResult {
    ad::Var<Scalar> quantized;
    ad::Var<Scalar> probs;  // noise free, feeds the diversity loss
    std::vector<std::vector<int>> indices;
};

// Tape version. With hard=true the forward value uses the selected one-hot
// rows while the gradient follows the soft Gumbel-softmax weights
// (straight-through). With hard=false the soft mixture itself is the value,
// which makes the whole map differentiable for finite-difference checks.
template <typename Scalar>
QuantizeTapeResult<Scalar> quantize_tape(ad::Tape<Scalar>& tape, ad::Var<Scalar> input,
                                         const QuantizerVars<Scalar>& vars,
                                         const MatrixX<Scalar>& noise, bool hard) {
    const QuantizerConfig& cfg = vars.config;
    cfg.validate();
    const int rows = static_cast<int>(tape.value(input).rows());
    const int gv = cfg.groups * cfg.entries;
    if (tape.value(input).cols() != cfg.in_dim)
        throw std::invalid_argument("quantize_tape: input width mismatch");
    if (noise.rows() != rows || noise.cols() != gv)
        throw std::invalid_argument("quantize_tape: noise shape mismatch");

    ad::Var<Scalar> logits =
        ad::add_row_broadcast(ad::matmul(input, vars.logit_W), vars.logit_b);
    ad::Var<Scalar> perturbed = ad::add_constant(logits, noise);
    QuantizeTapeResult<Scalar> result;
    result.indices.assign(static_cast<std::size_t>(rows),
                          std::vector<int>(static_cast<std::size_t>(cfg.groups), 0));
    std::vector<ad::Var<Scalar>> group_probs;
    std::vector<ad::Var<Scalar>> group_codes;
    const Scalar inv_tau = static_cast<Scalar>(1.0 / cfg.temperature);
    for (int g = 0; g < cfg.groups; ++g) {
        ad::Var<Scalar> raw = ad::slice_cols(logits, g * cfg.entries, cfg.entries);
        group_probs.push_back(ad::softmax_rows(raw));
        ad::Var<Scalar> sel = ad::softmax_rows(
            ad::scale(ad::slice_cols(perturbed, g * cfg.entries, cfg.entries), inv_tau));
        ad::Var<Scalar> weights = sel;
        MatrixX<Scalar> shift = -tape.value(sel);
        for (int r = 0; r < rows; ++r) {
            int pick = 0;
            tape.value(sel).row(r).maxCoeff(&pick);
            result.indices[static_cast<std::size_t>(r)][static_cast<std::size_t>(g)] = pick;
            shift(r, pick) += Scalar(1);
        }
        if (hard) weights = ad::add_constant(sel, shift);
        std::vector<int> book_rows(static_cast<std::size_t>(cfg.entries));
        for (int v = 0; v < cfg.entries; ++v)
            book_rows[static_cast<std::size_t>(v)] = g * cfg.entries + v;
        ad::Var<Scalar> book = ad::gather_rows(vars.codebooks, book_rows);
        group_codes.push_back(ad::matmul(weights, book));
    }
    result.probs = ad::hcat(group_probs);
    ad::Var<Scalar> codes = ad::hcat(group_codes);
    result.quantized = ad::matmul(codes, vars.out_W);
    return result;
}

// Diversity loss over noise-free selection probabilities: one minus the mean
// normalized perplexity of the batch-averaged distribution of each group.
// Zero when every group is used uniformly, approaching one under collapse.
template <typename Scalar>
double diversity_loss(const MatrixX<Scalar>& probs, int groups, int entries) {
    const int gv = groups * entries;
    if (probs.cols() != gv) throw std::invalid_argument("diversity_loss: width mismatch");
    if (probs.rows() < 1) throw std::invalid_argument("diversity_loss: no rows");
    double total_perplexity = 0.0;
    for (int g = 0; g < groups; ++g) {
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(entries);
        for (int r = 0; r < probs.rows(); ++r)
            for (int v = 0; v < entries; ++v)
                mean(v) += static_cast<double>(probs(r, g * entries + v));
        mean /= static_cast<double>(probs.rows());
        const double sum = mean.sum();
        if (std::abs(sum - 1.0) > 1e-6)
            throw std::invalid_argument("diversity_loss: probabilities do not sum to one");
        double entropy = 0.0;
        for (int v = 0; v < entries; ++v)
            if (mean(v) > 0.0) entropy -= mean(v) * std::log(mean(v));
        total_perplexity += std::exp(entropy);
    }
    return (gv - total_perplexity) / gv;
}

// Same quantity expressed on the tape so the loss reaches the logit weights.
template <typename Scalar>
ad::Var<Scalar> diversity_loss_tape(ad::Tape<Scalar>& tape, ad::Var<Scalar> probs, int groups,
                                    int entries) {
    const int gv = groups * entries;
    if (tape.value(probs).cols() != gv)
        throw std::invalid_argument("diversity_loss_tape: width mismatch");
    if (tape.value(probs).minCoeff() <= Scalar(0))
        throw std::invalid_argument("diversity_loss_tape: nonpositive probability");
    ad::Var<Scalar> total{};
    for (int g = 0; g < groups; ++g) {
        ad::Var<Scalar> mean = ad::col_mean(ad::slice_cols(probs, g * entries, entries));
        ad::Var<Scalar> entropy =
            ad::scale(ad::sum_all(ad::hadamard(mean, ad::log(mean))), Scalar(-1));
        ad::Var<Scalar> perplexity = ad::exp(entropy);
        total = (g == 0) ? perplexity : ad::add(total, perplexity);
    }
    MatrixX<Scalar> offset(1, 1);
    offset(0, 0) = static_cast<Scalar>(gv);
    return ad::scale(ad::add_constant(ad::scale(total, Scalar(-1)), offset),
                     Scalar(1) / static_cast<Scalar>(gv));
}

}  // namespace regstream
