#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "regstream/autodiff.hpp"
#include "regstream/dense.hpp"
#include "regstream/encoder.hpp"
#include "regstream/layout.hpp"
#include "regstream/losses.hpp"
#include "regstream/mask.hpp"
#include "regstream/quantizer.hpp"
#include "regstream/rng.hpp"

namespace regstream {

struct TrainConfig {
    int steps = 500;
    int batch = 8;
    int frames = 48;
    int width = 32;
    int layers = 2;
    int heads = 4;
    int ff = 64;
    int registers = 1;
    int chunk_min = 2;
    int chunk_max = 32;
    double mask_prob = 0.065;
    int mask_span = 3;
    int groups = 4;
    int entries = 8;
    int code_dim = 32;
    double temperature = 0.5;
    LossConfig loss;
    double peak_lr = 1e-3;
    double warmup_frac = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-6;
    std::uint64_t seed = 1;

    EncoderConfig encoder_config() const {
        return EncoderConfig{layers, heads, width, ff, registers};
    }
    QuantizerConfig quantizer_config() const {
        return QuantizerConfig{groups, entries, code_dim, width, width, temperature};
    }

    void validate() const {
        if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
        if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
        if (frames < 1) throw std::invalid_argument("TrainConfig: frames must be >= 1");
        if (chunk_min < 1 || chunk_max < chunk_min)
            throw std::invalid_argument("TrainConfig: bad chunk range");
        if (!(mask_prob >= 0.0 && mask_prob <= 1.0))
            throw std::invalid_argument("TrainConfig: mask_prob must be in [0, 1]");
        if (mask_span < 1) throw std::invalid_argument("TrainConfig: mask_span must be >= 1");
        if (!(peak_lr > 0.0)) throw std::invalid_argument("TrainConfig: peak_lr must be > 0");
        if (!(warmup_frac >= 0.0 && warmup_frac < 1.0))
            throw std::invalid_argument("TrainConfig: warmup_frac must be in [0, 1)");
        encoder_config().validate();
        quantizer_config().validate();
        loss.validate();
    }
};

template <typename Scalar>
struct Model {
    EncoderParams<Scalar> encoder;
    QuantizerParams<Scalar> quantizer;

    std::vector<std::pair<std::string, MatrixX<Scalar>*>> param_refs() {
        auto refs = encoder.param_refs();
        for (auto& ref : quantizer.param_refs()) refs.push_back(ref);
        return refs;
    }
};

template <typename Scalar>
Model<Scalar> init_model(const TrainConfig& config) {
    config.validate();
    Model<Scalar> model;
    model.encoder = init_encoder<Scalar>(config.encoder_config(), config.seed);
    model.quantizer = init_quantizer<Scalar>(config.quantizer_config(), config.seed);
    return model;
}

// Linear warmup to the peak rate, then linear decay toward zero.
inline double lr_at(int step, int total_steps, double peak, double warmup_frac) {
    if (step < 1 || step > total_steps) throw std::invalid_argument("lr_at: step out of range");
    const int warmup = std::max(1, static_cast<int>(std::lround(total_steps * warmup_frac)));
    if (step <= warmup) return peak * step / warmup;
    return peak * static_cast<double>(total_steps - step + 1) /
           static_cast<double>(std::max(1, total_steps - warmup));
}

template <typename Scalar>
class Adam {
  public:
    Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<std::pair<std::string, MatrixX<Scalar>*>>& params,
              const std::unordered_map<std::string, MatrixX<Scalar>>& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        for (const auto& [name, value] : params) {
            if (value->size() == 0) continue;
            const auto it = grads.find(name);
            if (it == grads.end()) throw std::logic_error("Adam: missing gradient for " + name);
            const MatrixX<Scalar>& g = it->second;
            MatrixX<Scalar>& m = moment(m_, name, *value);
            MatrixX<Scalar>& v = moment(v_, name, *value);
            m = static_cast<Scalar>(beta1_) * m + static_cast<Scalar>(1.0 - beta1_) * g;
            v = (static_cast<Scalar>(beta2_) * v.array() +
                 static_cast<Scalar>(1.0 - beta2_) * g.array().square())
                    .matrix();
            *value -= (static_cast<Scalar>(lr) * (m.array() / static_cast<Scalar>(c1)) /
                       ((v.array() / static_cast<Scalar>(c2)).sqrt() +
                        static_cast<Scalar>(eps_)))
                          .matrix();
        }
    }

  private:
    MatrixX<Scalar>& moment(std::unordered_map<std::string, MatrixX<Scalar>>& store,
                            const std::string& name, const MatrixX<Scalar>& like) {
        auto it = store.find(name);
        if (it == store.end())
            it = store.emplace(name, MatrixX<Scalar>::Zero(like.rows(), like.cols())).first;
        return it->second;
    }

    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::unordered_map<std::string, MatrixX<Scalar>> m_, v_;
};

// Named deterministic streams; two runs differing only in register count
// consume every stream identically.
struct TrainStreams {
    Rng data, mask, gumbel, distractor, chunks;
};

inline TrainStreams make_streams(std::uint64_t seed) {
    return TrainStreams{seeded_rng(seed, "data"), seeded_rng(seed, "mask"),
                        seeded_rng(seed, "gumbel"), seeded_rng(seed, "distractors"),
                        seeded_rng(seed, "chunks")};
}

// Per-batch chunk geometry: the chunk size is uniform over the configured
// range and the look-ahead uniform over [0, chunk].
inline std::pair<int, int> sample_dynamic_config(const TrainConfig& config, Rng& rng) {
    const int chunk = uniform_int(rng, config.chunk_min, config.chunk_max);
    const int lookahead = uniform_int(rng, 0, chunk);
    return {chunk, lookahead};
}

// Synthetic utterances: one fixed multi-sine pattern whose channel periods
// divide a common cycle, sampled on the frame grid with a small random
// sub-frame jitter per utterance, mixed through a fixed channel basis plus
// light noise. Every frame of the cycle is a distinct point in feature space,
// so in-utterance distractors stay distinct from targets, while the pattern
// itself repeats across utterances and stays predictable from context.
template <typename Scalar>
MatrixX<Scalar> synth_utterance(int frames, int width, Rng& rng) {
    constexpr int kChannels = 6;
    constexpr double kPeriods[kChannels] = {4.0, 6.0, 8.0, 12.0, 16.0, 24.0};
    const double jitter = uniform_real(rng, -0.1, 0.1);
    Rng phase_rng = seeded_rng(1, "synth-phases");
    Eigen::MatrixXd latent(frames, kChannels);
    for (int c = 0; c < kChannels; ++c) {
        const double phase = uniform_real(phase_rng, 0.0, 2.0 * M_PI);
        for (int t = 0; t < frames; ++t)
            latent(t, c) = std::sin(2.0 * M_PI * (t + jitter) / kPeriods[c] + phase);
    }
    Rng basis_rng = seeded_rng(1, "synth-basis");
    Eigen::MatrixXd basis(kChannels, width);
    for (int c = 0; c < kChannels; ++c)
        for (int k = 0; k < width; ++k) basis(c, k) = normal(basis_rng);
    basis *= 4.0 / std::sqrt(static_cast<double>(kChannels));
    Eigen::MatrixXd x = latent * basis;
    for (int t = 0; t < frames; ++t)
        for (int k = 0; k < width; ++k) x(t, k) += normal(rng) * 0.02;
    return x.cast<Scalar>();
}

// Everything random about one training step, sampled up front in a fixed
// stream order (chunks, data, masks, gumbel, distractors).
template <typename Scalar>
struct BatchPlan {
    int chunk = 0;
    int lookahead = 0;
    std::vector<MatrixX<Scalar>> utterances;
    std::vector<MaskingPlan> plans;
    MatrixX<Scalar> gumbel;  // total masked rows x groups*entries
    std::vector<std::vector<std::vector<int>>> distractors;  // empty when skipped
};

template <typename Scalar>
BatchPlan<Scalar> make_batch_plan(const TrainConfig& config, TrainStreams& streams) {
    BatchPlan<Scalar> plan;
    const auto [chunk, lookahead] = sample_dynamic_config(config, streams.chunks);
    plan.chunk = chunk;
    plan.lookahead = lookahead;
    int masked_rows = 0;
    for (int b = 0; b < config.batch; ++b) {
        plan.utterances.push_back(
            synth_utterance<Scalar>(config.frames, config.width, streams.data));
        plan.plans.push_back(sample_masking_plan(config.frames, config.mask_prob,
                                                 config.mask_span, streams.mask));
        masked_rows += static_cast<int>(plan.plans.back().masked_steps.size());
    }
    plan.gumbel = gumbel_noise<Scalar>(masked_rows, config.groups * config.entries,
                                       streams.gumbel);
    for (int b = 0; b < config.batch; ++b) {
        const int m = static_cast<int>(plan.plans[static_cast<std::size_t>(b)].masked_steps.size());
        plan.distractors.push_back(
            m >= 2 ? sample_distractors(m, config.loss.distractors, streams.distractor)
                   : std::vector<std::vector<int>>{});
    }
    return plan;
}

// One dual-mode pass over a batch, all on a single tape: the offline branch
// sees the masked frames with full context, the online branch sees the
// assembled chunked sequence under the streaming mask, and both are scored
// against the same quantized targets with the same distractors.
template <typename Scalar>
struct DualForward {
    ad::Var<Scalar> l_off, l_on, l_d, l_fp, total;
    EncoderVars<Scalar> encoder;
    QuantizerVars<Scalar> quantizer;
    ad::Var<Scalar> quantized;               // all masked rows x width (if any)
    std::vector<ad::Var<Scalar>> y_off;      // per utterance, frames x width
    std::vector<ad::Var<Scalar>> y_on;       // per utterance, layout rows x width
    LossBreakdown breakdown;
    double accuracy = 0.0;
    int masked_rows = 0;
};

// Captured values of everything the losses treat as severed. Substituting
// them back makes the loss literally constant in those inputs, so central
// differences of the substituted loss match the severed analytic gradient.
template <typename Scalar>
struct FrozenTargets {
    MatrixX<Scalar> quantized;            // online-branch contrastive targets
    std::vector<MatrixX<Scalar>> y_off;   // future-prediction targets
};

template <typename Scalar>
DualForward<Scalar> dual_forward(ad::Tape<Scalar>& tape, const Model<Scalar>& model,
                                 const TrainConfig& config, const BatchPlan<Scalar>& batch,
                                 bool hard_quantizer = true,
                                 const FrozenTargets<Scalar>* frozen = nullptr) {
    const int t_frames = config.frames;
    const int d = config.width;
    const StreamConfig stream{t_frames, batch.chunk, batch.lookahead, config.registers, d};
    const ChunkLayout layout(stream);
    const AttentionMask<Scalar> online_mask = build_online_mask<Scalar>(layout);
    const AttentionMask<Scalar> offline_mask = build_offline_mask<Scalar>(t_frames);
    const std::vector<int> online_times = layout.positions();
    const std::vector<int> assembly = layout.assembly_indices();
    const std::vector<int> frame_slots = layout.frame_output_indices();
    std::vector<int> offline_times(static_cast<std::size_t>(t_frames));
    for (int t = 0; t < t_frames; ++t) offline_times[static_cast<std::size_t>(t)] = t + 1;

    DualForward<Scalar> out;
    out.encoder = make_encoder_vars(tape, model.encoder);
    out.quantizer = make_quantizer_vars(tape, model.quantizer);

    const int b_total = static_cast<int>(batch.utterances.size());
    std::vector<ad::Var<Scalar>> target_in_parts;
    for (int b = 0; b < b_total; ++b) {
        const MatrixX<Scalar>& x = batch.utterances[static_cast<std::size_t>(b)];
        if (x.rows() != t_frames || x.cols() != d)
            throw std::invalid_argument("dual_forward: utterance shape mismatch");
        const std::vector<int>& masked = batch.plans[static_cast<std::size_t>(b)].masked_steps;

        MatrixX<Scalar> keep = MatrixX<Scalar>::Ones(t_frames, d);
        MatrixX<Scalar> pick = MatrixX<Scalar>::Zero(t_frames, 1);
        for (int t : masked) {
            keep.row(t - 1).setZero();
            pick(t - 1, 0) = Scalar(1);
        }
        ad::Var<Scalar> x_const = tape.constant(x);
        ad::Var<Scalar> masked_frames =
            ad::add(ad::hadamard(x_const, tape.constant(keep)),
                    ad::matmul(tape.constant(pick), out.encoder.mask_embedding));

        out.y_off.push_back(
            encode_tape(tape, masked_frames, offline_mask, offline_times, out.encoder));

        ad::Var<Scalar> stacked = ad::vcat(std::vector<ad::Var<Scalar>>{
            masked_frames, out.encoder.registers, out.encoder.pad_embedding});
        ad::Var<Scalar> online_input = ad::gather_rows(stacked, assembly);
        out.y_on.push_back(
            encode_tape(tape, online_input, online_mask, online_times, out.encoder));

        if (!masked.empty()) {
            MatrixX<Scalar> rows(static_cast<int>(masked.size()), d);
            for (std::size_t k = 0; k < masked.size(); ++k) rows.row(static_cast<int>(k)) = x.row(masked[k] - 1);
            target_in_parts.push_back(tape.constant(rows));
            out.masked_rows += static_cast<int>(masked.size());
        }
    }

    if (out.masked_rows > 0) {
        if (batch.gumbel.rows() != out.masked_rows)
            throw std::invalid_argument("dual_forward: gumbel noise rows mismatch");
        ad::Var<Scalar> target_in = ad::vcat(target_in_parts);
        QuantizeTapeResult<Scalar> q =
            quantize_tape(tape, target_in, out.quantizer, batch.gumbel, hard_quantizer);
        out.quantized = q.quantized;
        out.l_d = diversity_loss_tape(tape, q.probs, config.groups, config.entries);
    } else {
        out.l_d = tape.constant(MatrixX<Scalar>::Zero(1, 1));
    }

    ad::Var<Scalar> l_off_sum{}, l_on_sum{}, l_fp_sum{};
    bool have_contrastive = false, have_fp = false;
    int scored_utterances = 0, offset = 0;
    double correct_weighted = 0.0;
    int anchors_total = 0;
    for (int b = 0; b < b_total; ++b) {
        const std::vector<int>& masked = batch.plans[static_cast<std::size_t>(b)].masked_steps;
        const int m = static_cast<int>(masked.size());
        const MatrixX<Scalar>* frozen_off =
            frozen ? &frozen->y_off[static_cast<std::size_t>(b)] : nullptr;
        ad::Var<Scalar> l_fp_b =
            future_prediction_loss_tape(tape, out.y_on[static_cast<std::size_t>(b)],
                                        out.y_off[static_cast<std::size_t>(b)], layout, frozen_off);
        l_fp_sum = have_fp ? ad::add(l_fp_sum, l_fp_b) : l_fp_b;
        have_fp = true;
        if (m < 2) {  // too few masked steps to draw distractors
            offset += m;
            continue;
        }
        const std::vector<std::vector<int>>& dist =
            batch.distractors[static_cast<std::size_t>(b)];
        if (static_cast<int>(dist.size()) != m)
            throw std::invalid_argument("dual_forward: distractor plan mismatch");

        std::vector<int> q_rows(static_cast<std::size_t>(m));
        std::vector<int> off_rows(static_cast<std::size_t>(m));
        std::vector<int> on_rows(static_cast<std::size_t>(m));
        for (int k = 0; k < m; ++k) {
            q_rows[static_cast<std::size_t>(k)] = offset + k;
            off_rows[static_cast<std::size_t>(k)] = masked[static_cast<std::size_t>(k)] - 1;
            on_rows[static_cast<std::size_t>(k)] =
                frame_slots[static_cast<std::size_t>(masked[static_cast<std::size_t>(k)]) - 1];
        }
        ad::Var<Scalar> q_b = ad::gather_rows(out.quantized, q_rows);
        ad::Var<Scalar> y_off_m = ad::gather_rows(out.y_off[static_cast<std::size_t>(b)], off_rows);
        ad::Var<Scalar> y_on_m = ad::gather_rows(out.y_on[static_cast<std::size_t>(b)], on_rows);

        ad::Var<Scalar> l_off_b =
            contrastive_loss_tape(tape, y_off_m, q_b, dist, config.loss.kappa, false);
        ad::Var<Scalar> q_b_on = q_b;
        bool sever_on = true;
        if (frozen) {
            MatrixX<Scalar> rows(m, d);
            for (int k = 0; k < m; ++k) rows.row(k) = frozen->quantized.row(offset + k);
            q_b_on = tape.constant(std::move(rows));
            sever_on = false;
        }
        ad::Var<Scalar> l_on_b =
            contrastive_loss_tape(tape, y_on_m, q_b_on, dist, config.loss.kappa, sever_on);
        l_off_sum = have_contrastive ? ad::add(l_off_sum, l_off_b) : l_off_b;
        l_on_sum = have_contrastive ? ad::add(l_on_sum, l_on_b) : l_on_b;
        have_contrastive = true;
        ++scored_utterances;

        correct_weighted +=
            contrastive_accuracy(tape.value(y_on_m), tape.value(q_b), dist) * m;
        anchors_total += m;
        offset += m;
    }

    if (have_contrastive) {
        const Scalar inv = Scalar(1) / static_cast<Scalar>(scored_utterances);
        out.l_off = ad::scale(l_off_sum, inv);
        out.l_on = ad::scale(l_on_sum, inv);
    } else {
        out.l_off = tape.constant(MatrixX<Scalar>::Zero(1, 1));
        out.l_on = tape.constant(MatrixX<Scalar>::Zero(1, 1));
    }
    out.l_fp = have_fp ? ad::scale(l_fp_sum, Scalar(1) / static_cast<Scalar>(b_total))
                       : tape.constant(MatrixX<Scalar>::Zero(1, 1));
    out.total = compose_total_loss_tape(out.l_off, out.l_on, out.l_d, out.l_fp, config.loss);

    out.breakdown = make_breakdown(
        static_cast<double>(tape.value(out.l_off)(0, 0)),
        static_cast<double>(tape.value(out.l_on)(0, 0)),
        static_cast<double>(tape.value(out.l_d)(0, 0)),
        static_cast<double>(tape.value(out.l_fp)(0, 0)), config.loss);
    out.breakdown.skipped_utterances = b_total - scored_utterances;
    out.accuracy = anchors_total > 0 ? correct_weighted / anchors_total : 0.0;
    return out;
}

// Runs one live pass and snapshots the values the losses sever, for use as
// dual_forward's `frozen` argument.
template <typename Scalar>
FrozenTargets<Scalar> capture_frozen_targets(const Model<Scalar>& model,
                                             const TrainConfig& config,
                                             const BatchPlan<Scalar>& batch,
                                             bool hard_quantizer = true) {
    ad::Tape<Scalar> tape;
    DualForward<Scalar> fwd = dual_forward(tape, model, config, batch, hard_quantizer);
    FrozenTargets<Scalar> frozen;
    if (fwd.masked_rows > 0) frozen.quantized = tape.value(fwd.quantized);
    for (const ad::Var<Scalar>& y : fwd.y_off) frozen.y_off.push_back(tape.value(y));
    return frozen;
}

struct StepMetrics {
    int step = 0;
    int chunk = 0;
    int lookahead = 0;
    int masked_rows = 0;
    int skipped = 0;
    double lr = 0.0;
    double l_off = 0.0, l_on = 0.0, l_d = 0.0, l_fp = 0.0, l_dual = 0.0, l_total = 0.0;
    double accuracy = 0.0;
};

template <typename Scalar>
StepMetrics train_step(Model<Scalar>& model, const TrainConfig& config, int step,
                       TrainStreams& streams, Adam<Scalar>& adam) {
    BatchPlan<Scalar> batch = make_batch_plan<Scalar>(config, streams);
    ad::Tape<Scalar> tape;
    DualForward<Scalar> fwd = dual_forward(tape, model, config, batch);
    tape.backward(fwd.total);

    std::unordered_map<std::string, MatrixX<Scalar>> grads;
    for (const auto& [name, var] : fwd.encoder.named) grads.emplace(name, tape.grad_of(var));
    for (const auto& [name, var] : fwd.quantizer.named) grads.emplace(name, tape.grad_of(var));
    const double lr = lr_at(step, config.steps, config.peak_lr, config.warmup_frac);
    adam.step(model.param_refs(), grads, lr);

    StepMetrics metrics;
    metrics.step = step;
    metrics.chunk = batch.chunk;
    metrics.lookahead = batch.lookahead;
    metrics.masked_rows = fwd.masked_rows;
    metrics.skipped = fwd.breakdown.skipped_utterances;
    metrics.lr = lr;
    metrics.l_off = fwd.breakdown.l_off;
    metrics.l_on = fwd.breakdown.l_on;
    metrics.l_d = fwd.breakdown.l_d;
    metrics.l_fp = fwd.breakdown.l_fp;
    metrics.l_dual = fwd.breakdown.l_dual;
    metrics.l_total = fwd.breakdown.l_total;
    metrics.accuracy = fwd.accuracy;
    return metrics;
}

template <typename Scalar>
struct TrainResult {
    std::vector<StepMetrics> metrics;
    Model<Scalar> model;
};

template <typename Scalar>
TrainResult<Scalar> run_training(const TrainConfig& config,
                                 const std::function<void(const StepMetrics&)>& on_step = {}) {
    config.validate();
    TrainResult<Scalar> result;
    result.model = init_model<Scalar>(config);
    TrainStreams streams = make_streams(config.seed);
    Adam<Scalar> adam(config.adam_beta1, config.adam_beta2, config.adam_eps);
    result.metrics.reserve(static_cast<std::size_t>(config.steps));
    for (int step = 1; step <= config.steps; ++step) {
        result.metrics.push_back(train_step(result.model, config, step, streams, adam));
        if (on_step) on_step(result.metrics.back());
    }
    return result;
}

}  // namespace regstream
