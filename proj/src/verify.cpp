#include "regstream/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "regstream/encoder.hpp"
#include "regstream/layout.hpp"
#include "regstream/losses.hpp"
#include "regstream/mask.hpp"
#include "regstream/quantizer.hpp"
#include "regstream/rng.hpp"
#include "regstream/streaming.hpp"
#include "regstream/trainer.hpp"

namespace regstream {
namespace {

constexpr int kMaxMessages = 8;

CheckResult make_result(const char* suite, int criterion) {
    CheckResult r;
    r.suite = suite;
    r.criterion = criterion;
    return r;
}

void record(CheckResult& r, bool ok, const std::string& message) {
    ++r.checks;
    if (!ok) {
        ++r.failures;
        if (static_cast<int>(r.messages.size()) < kMaxMessages) r.messages.push_back(message);
    }
}

std::string describe(const StreamConfig& c) {
    std::ostringstream os;
    os << "T=" << c.frames << " C=" << c.chunk << " L=" << c.lookahead << " R=" << c.registers;
    return os.str();
}

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

template <typename Scalar>
MatrixX<Scalar> random_matrix(int rows, int cols, Rng& rng) {
    MatrixX<Scalar> m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = static_cast<Scalar>(normal(rng));
    return m;
}

template <typename Scalar>
bool bitwise_equal(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (a.size() == 0) return true;
    return (a.array() == b.array()).all();
}

// 1. Online mask equals the pairwise visibility rule, brute-forced over every
// (query, key) slot pair for every shape in the sweep, entry exact.
CheckResult check_mask_oracle() {
    CheckResult r = make_result("mask-oracle", 1);
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (int frames = 1; frames <= 12; ++frames)
        for (int chunk = 1; chunk <= 6; ++chunk)
            for (int lookahead = 0; lookahead <= chunk; ++lookahead)
                for (int registers = 0; registers <= 3; ++registers) {
                    const StreamConfig cfg{frames, chunk, lookahead, registers, 1};
                    const ChunkLayout layout(cfg);
                    const AttentionMask<double> mask = build_online_mask<double>(layout);
                    int bad = 0;
                    for (int q = 0; q < layout.size(); ++q)
                        for (int k = 0; k < layout.size(); ++k) {
                            const double want =
                                attention_allowed(layout.slot(q), layout.slot(k)) ? 0.0 : neg_inf;
                            if (mask(q, k) != want) ++bad;
                        }
                    record(r, bad == 0,
                           describe(cfg) + ": " + std::to_string(bad) +
                               " mask entries disagree with the pairwise rule");
                    record(r, mask_rows_have_allowed(mask),
                           describe(cfg) + ": some query row has no allowed key");
                }
    return r;
}

// 2. The worked 12-slot example: T=6, C=2, L=1, R=1. One visibility string
// per assembled row, transcribed by hand from the layout diagram.
CheckResult check_golden_mask() {
    CheckResult r = make_result("golden-mask", 2);
    static const char* const kRows[12] = {
        "110000100100",  // frame t1 (chunk 1)
        "110000100100",  // frame t2 (chunk 1)
        "111100010010",  // frame t3 (chunk 2)
        "111100010010",  // frame t4 (chunk 2)
        "111111000001",  // frame t5 (chunk 3)
        "111111000001",  // frame t6 (chunk 3)
        "110000100100",  // look-ahead t3 (chunk 1)
        "111100010010",  // look-ahead t5 (chunk 2)
        "111111000001",  // look-ahead pad (chunk 3)
        "110000100100",  // register (chunk 1)
        "111100010010",  // register (chunk 2)
        "111111000001",  // register (chunk 3)
    };
    const StreamConfig cfg{6, 2, 1, 1, 4};
    const ChunkLayout layout(cfg);
    record(r, layout.size() == 12,
           "expected 12 assembled slots, got " + std::to_string(layout.size()));
    if (layout.size() != 12) return r;

    const AttentionMask<double> mask = build_online_mask<double>(layout);
    for (int q = 0; q < 12; ++q) {
        int bad = 0;
        for (int k = 0; k < 12; ++k) {
            const bool want = kRows[q][k] == '1';
            const bool got = mask(q, k) == 0.0;
            if (want != got) ++bad;
        }
        record(r, bad == 0, "golden row " + std::to_string(q) + ": " + std::to_string(bad) +
                                " entries differ");
    }

    // Spot checks quoted alongside the diagram.
    record(r, (mask.row(2).array() == 0.0).count() == 6,
           "frame t3 should see exactly 6 keys");
    record(r, (mask.row(9).array() == 0.0).count() == 4,
           "chunk-1 register should see exactly 4 keys");
    record(r, layout.slot(8).kind == SlotKind::Pad, "slot 8 should be the padded look-ahead");
    record(r, layout.slot(6).kind == SlotKind::LookAhead && layout.slot(6).time == 3,
           "slot 6 should be chunk 1 look-ahead at t3");
    record(r, layout.positions()[9] == 0 && layout.positions()[10] == 0,
           "register slots should carry no positional index");
    return r;
}

// 3. With C=T, L=0, R=0 the online pass must reproduce the offline pass.
CheckResult check_degeneracy() {
    CheckResult r = make_result("degeneracy", 3);
    for (int trial = 0; trial < 3; ++trial) {
        const int frames = 4 + 3 * trial;
        const int width = 16;
        EncoderConfig ec;
        ec.layers = 2;
        ec.heads = 2;
        ec.width = width;
        ec.ff = 32;
        ec.registers = 0;
        const EncoderParams<double> params =
            init_encoder<double>(ec, 40 + static_cast<std::uint64_t>(trial));
        Rng rng = seeded_rng(40, "degeneracy-" + std::to_string(trial));
        const MatrixX<double> x = random_matrix<double>(frames, width, rng);

        std::vector<int> times(static_cast<std::size_t>(frames));
        for (int t = 0; t < frames; ++t) times[static_cast<std::size_t>(t)] = t + 1;
        const MatrixX<double> offline =
            encode<double>(x, build_offline_mask<double>(frames), times, params);

        const StreamConfig cfg{frames, frames, 0, 0, width};
        const OnlineForward<double> online = online_forward<double>(x, params, cfg);
        record(r, ChunkLayout(cfg).size() == frames,
               "degenerate layout should have exactly T slots");
        const double diff = (online.frame_outputs - offline).cwiseAbs().maxCoeff();
        record(r, diff < 1e-10,
               "trial " + std::to_string(trial) + ": online/offline diverge by " + fmt(diff));
    }
    return r;
}

// 4. Chunk-by-chunk streaming with a KV cache matches the full assembled
// pass over 100 random shapes, in double and in single precision.
CheckResult check_streaming() {
    CheckResult r = make_result("streaming", 4);
    for (int k = 0; k < 100; ++k) {
        Rng rng = seeded_rng(1234, "stream-sweep-" + std::to_string(k));
        const int frames = uniform_int(rng, 1, 24);
        const int chunk = uniform_int(rng, 1, 8);
        const int lookahead = uniform_int(rng, 0, chunk);
        const int registers = uniform_int(rng, 0, 3);
        EncoderConfig ec;
        ec.layers = 2;
        ec.heads = 2;
        ec.width = 16;
        ec.ff = 32;
        ec.registers = registers;
        const StreamConfig cfg{frames, chunk, lookahead, registers, ec.width};
        const std::string label = "case " + std::to_string(k) + " (" + describe(cfg) + ")";

        const auto params64 = init_encoder<double>(ec, 1000 + static_cast<std::uint64_t>(k));
        const MatrixX<double> x64 = random_matrix<double>(frames, ec.width, rng);
        const OnlineForward<double> ref64 = online_forward<double>(x64, params64, cfg);
        const OnlineForward<double> str64 = stream_encode<double>(x64, params64, chunk, lookahead);
        double worst64 = (ref64.frame_outputs - str64.frame_outputs).cwiseAbs().maxCoeff();
        bool shapes_ok = ref64.register_outputs.size() == str64.register_outputs.size();
        if (shapes_ok)
            for (std::size_t i = 0; i < ref64.register_outputs.size(); ++i) {
                if (ref64.register_outputs[i].rows() != str64.register_outputs[i].rows()) {
                    shapes_ok = false;
                    break;
                }
                if (ref64.register_outputs[i].size() > 0)
                    worst64 = std::max(worst64, (ref64.register_outputs[i] -
                                                 str64.register_outputs[i])
                                                    .cwiseAbs()
                                                    .maxCoeff());
            }
        record(r, shapes_ok, label + ": register block shapes disagree");
        record(r, worst64 < 1e-10, label + ": double path diverges by " + fmt(worst64));

        const auto params32 = init_encoder<float>(ec, 1000 + static_cast<std::uint64_t>(k));
        const MatrixX<float> x32 = x64.cast<float>();
        const OnlineForward<float> ref32 = online_forward<float>(x32, params32, cfg);
        const OnlineForward<float> str32 = stream_encode<float>(x32, params32, chunk, lookahead);
        double worst32 =
            (ref32.frame_outputs - str32.frame_outputs).cwiseAbs().maxCoeff();
        for (std::size_t i = 0; i < ref32.register_outputs.size(); ++i)
            if (ref32.register_outputs[i].size() > 0)
                worst32 = std::max(
                    worst32, static_cast<double>((ref32.register_outputs[i] -
                                                  str32.register_outputs[i])
                                                     .cwiseAbs()
                                                     .maxCoeff()));
        record(r, worst32 < 1e-5, label + ": float path diverges by " + fmt(worst32));
    }
    return r;
}

// 5. Perturbing frame t' leaves every chunk whose visible window ends before
// t' bitwise unchanged, frames and registers alike.
CheckResult check_causality() {
    CheckResult r = make_result("causality", 5);
    int affected_chunks = 0;
    for (int k = 0; k < 50; ++k) {
        Rng rng = seeded_rng(555, "causality-" + std::to_string(k));
        const int frames = uniform_int(rng, 4, 20);
        const int chunk = uniform_int(rng, 1, 6);
        const int lookahead = uniform_int(rng, 0, chunk);
        const int registers = uniform_int(rng, 0, 2);
        EncoderConfig ec;
        ec.layers = 2;
        ec.heads = 2;
        ec.width = 16;
        ec.ff = 32;
        ec.registers = registers;
        const StreamConfig cfg{frames, chunk, lookahead, registers, ec.width};
        const auto params = init_encoder<double>(ec, 2000 + static_cast<std::uint64_t>(k));

        MatrixX<double> x = random_matrix<double>(frames, ec.width, rng);
        const int t_hit = uniform_int(rng, 2, frames);
        MatrixX<double> x2 = x;
        x2.row(t_hit - 1).array() += 0.75;

        const OnlineForward<double> y1 = online_forward<double>(x, params, cfg);
        const OnlineForward<double> y2 = online_forward<double>(x2, params, cfg);

        const ChunkLayout layout(cfg);
        const std::string label = "case " + std::to_string(k) + " (" + describe(cfg) +
                                  " t'=" + std::to_string(t_hit) + ")";
        for (int i = 1; i <= layout.num_chunks(); ++i) {
            if (t_hit <= i * chunk + lookahead) continue;
            ++affected_chunks;
            bool same = true;
            const int last = std::min(i * chunk, frames);
            for (int t = (i - 1) * chunk + 1; t <= last; ++t)
                same = same && bitwise_equal<double>(y1.frame_outputs.row(t - 1),
                                                     y2.frame_outputs.row(t - 1));
            if (registers > 0)
                same = same &&
                       bitwise_equal(y1.register_outputs[static_cast<std::size_t>(i - 1)],
                                     y2.register_outputs[static_cast<std::size_t>(i - 1)]);
            record(r, same,
                   label + ": chunk " + std::to_string(i) + " changed despite t' being hidden");
        }
    }
    record(r, affected_chunks > 0, "sweep produced no hidden-chunk cases");
    r.notes.push_back(std::to_string(affected_chunks) + " hidden chunks checked bitwise");
    return r;
}

// 6. The offline branch never reads the register embeddings: randomizing
// them changes no offline activation and no offline loss term.
CheckResult check_register_independence() {
    CheckResult r = make_result("register-independence", 6);
    for (int k = 0; k < 20; ++k) {
        TrainConfig cfg;
        cfg.steps = 1;
        cfg.batch = 2;
        cfg.frames = 12;
        cfg.width = 8;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.ff = 16;
        cfg.registers = 1 + (k % 3);
        cfg.mask_prob = 0.2;
        cfg.groups = 1;
        cfg.entries = 4;
        cfg.code_dim = 4;
        cfg.seed = 3000 + static_cast<std::uint64_t>(k);

        Model<double> base = init_model<double>(cfg);
        Model<double> twisted = base;
        Rng rng = seeded_rng(cfg.seed, "twist-registers");
        twisted.encoder.registers =
            random_matrix<double>(cfg.registers, cfg.width, rng);

        TrainStreams streams = make_streams(cfg.seed);
        const BatchPlan<double> batch = make_batch_plan<double>(cfg, streams);

        ad::Tape<double> tape_a, tape_b;
        const DualForward<double> a = dual_forward(tape_a, base, cfg, batch);
        const DualForward<double> b = dual_forward(tape_b, twisted, cfg, batch);

        const std::string label = "case " + std::to_string(k);
        bool off_same = true;
        for (std::size_t u = 0; u < a.y_off.size(); ++u)
            off_same = off_same &&
                       bitwise_equal(tape_a.value(a.y_off[u]), tape_b.value(b.y_off[u]));
        record(r, off_same, label + ": offline activations moved with the registers");
        record(r, bitwise_equal(tape_a.value(a.l_off), tape_b.value(b.l_off)),
               label + ": offline loss moved with the registers");
        record(r, bitwise_equal(tape_a.value(a.l_d), tape_b.value(b.l_d)),
               label + ": diversity loss moved with the registers");

        bool on_differs = false;
        for (std::size_t u = 0; u < a.y_on.size(); ++u)
            on_differs =
                on_differs || !bitwise_equal(tape_a.value(a.y_on[u]), tape_b.value(b.y_on[u]));
        record(r, on_differs, label + ": online activations ignored the register change");
    }
    return r;
}

// Shared fixture for the gradient suites: a small two-utterance batch with a
// hand-picked masking plan so every code path carries gradient.
struct GradFixture {
    TrainConfig config;
    Model<double> model;
    BatchPlan<double> batch;
};

GradFixture make_grad_fixture() {
    GradFixture fx;
    fx.config.steps = 1;
    fx.config.batch = 2;
    fx.config.frames = 6;
    fx.config.width = 8;
    fx.config.layers = 2;
    fx.config.heads = 2;
    fx.config.ff = 16;
    fx.config.registers = 1;
    fx.config.groups = 1;
    fx.config.entries = 4;
    fx.config.code_dim = 4;
    fx.config.seed = 99;
    fx.model = init_model<double>(fx.config);

    TrainStreams streams = make_streams(fx.config.seed);
    fx.batch.chunk = 2;
    fx.batch.lookahead = 1;
    fx.batch.utterances.push_back(synth_utterance<double>(6, 8, streams.data));
    fx.batch.utterances.push_back(synth_utterance<double>(6, 8, streams.data));
    fx.batch.plans.push_back(MaskingPlan{{2, 3, 5}});
    fx.batch.plans.push_back(MaskingPlan{{1, 4}});
    fx.batch.gumbel = gumbel_noise<double>(5, 4, streams.gumbel);
    fx.batch.distractors.push_back(sample_distractors(3, 10, streams.distractor));
    fx.batch.distractors.push_back(sample_distractors(2, 10, streams.distractor));
    return fx;
}

// 7. Central finite differences of the total loss, taken with the severed
// targets frozen at their captured values, match the analytic gradient of
// every parameter tensor.
CheckResult check_gradcheck() {
    CheckResult r = make_result("gradcheck", 7);
    const double h = 1e-5;
    const double tol = 1e-4;
    GradFixture fx = make_grad_fixture();
    const FrozenTargets<double> frozen =
        capture_frozen_targets(fx.model, fx.config, fx.batch, false);

    ad::Tape<double> tape;
    const DualForward<double> fwd = dual_forward(tape, fx.model, fx.config, fx.batch, false, &frozen);
    tape.backward(fwd.total);
    std::unordered_map<std::string, MatrixX<double>> analytic;
    for (const auto& [name, var] : fwd.encoder.named) analytic.emplace(name, tape.grad_of(var));
    for (const auto& [name, var] : fwd.quantizer.named) analytic.emplace(name, tape.grad_of(var));

    const auto eval = [&](Model<double>& m) {
        ad::Tape<double> t;
        const DualForward<double> f = dual_forward(t, m, fx.config, fx.batch, false, &frozen);
        return t.value(f.total)(0, 0);
    };

    Model<double> probe = fx.model;
    for (auto& [name, tensor] : probe.param_refs()) {
        const MatrixX<double>& grad = analytic.at(name);
        double worst = 0.0;
        double worst_a = 0.0, worst_f = 0.0;
        int worst_row = 0, worst_col = 0;
        for (int i = 0; i < tensor->rows(); ++i)
            for (int j = 0; j < tensor->cols(); ++j) {
                const double saved = (*tensor)(i, j);
                (*tensor)(i, j) = saved + h;
                const double up = eval(probe);
                (*tensor)(i, j) = saved - h;
                const double down = eval(probe);
                (*tensor)(i, j) = saved;
                const double fd = (up - down) / (2.0 * h);
                const double a = grad(i, j);
                const double rel =
                    std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-4});
                if (rel > worst) {
                    worst = rel;
                    worst_a = a;
                    worst_f = fd;
                    worst_row = i;
                    worst_col = j;
                }
            }
        std::ostringstream os;
        os << name << "(" << worst_row << "," << worst_col << "): analytic " << worst_a
           << " vs fd " << worst_f << " (rel " << worst << ")";
        record(r, worst < tol, os.str());
    }
    return r;
}

// 8. Severed paths carry exactly zero gradient, and the unsevered twins of
// the same tensors carry gradient, so the severing is surgical.
CheckResult check_stop_gradient() {
    CheckResult r = make_result("stop-gradient", 8);
    GradFixture fx = make_grad_fixture();
    ad::Tape<double> tape;
    const DualForward<double> fwd = dual_forward(tape, fx.model, fx.config, fx.batch);

    tape.backward(fwd.l_on);
    for (const auto& [name, var] : fwd.quantizer.named) {
        const MatrixX<double> g = tape.grad_of(var);
        record(r, g.size() == 0 || (g.array() == 0.0).all(),
               "online loss leaked gradient into " + name);
    }

    tape.backward(fwd.l_fp);
    for (std::size_t u = 0; u < fwd.y_off.size(); ++u) {
        const MatrixX<double> g = tape.grad_of(fwd.y_off[u]);
        record(r, (g.array() == 0.0).all(),
               "future prediction leaked gradient into offline activations of utterance " +
                   std::to_string(u));
    }
    bool registers_trained = false;
    for (const auto& [name, var] : fwd.encoder.named)
        if (name == "encoder.registers")
            registers_trained = tape.grad_of(var).cwiseAbs().maxCoeff() > 0.0;
    record(r, registers_trained, "future prediction left the registers untrained");

    tape.backward(fwd.l_off);
    bool quantizer_trained = false;
    for (const auto& [name, var] : fwd.quantizer.named)
        if (name == "quantizer.logit_W")
            quantizer_trained = tape.grad_of(var).cwiseAbs().maxCoeff() > 0.0;
    record(r, quantizer_trained, "offline loss failed to reach the quantizer");
    return r;
}

// 9. The loss composition is plain arithmetic with the pinned weights, and
// the tape-side composition reproduces it.
CheckResult check_loss_arithmetic() {
    CheckResult r = make_result("loss-arithmetic", 9);
    const LossConfig defaults;
    record(r, defaults.alpha == 0.1, "alpha default must be 0.1");
    record(r, defaults.beta == 1.0, "beta default must be 1.0");
    record(r, defaults.kappa == 0.1, "kappa default must be 0.1");
    record(r, defaults.distractors == 10, "distractor count default must be 10");

    const TrainConfig tc;
    record(r, tc.mask_prob == 0.065 && tc.mask_span == 3, "masking defaults must be p=0.065, M=3");
    record(r, tc.adam_beta1 == 0.9 && tc.adam_beta2 == 0.98 && tc.adam_eps == 1e-6,
           "optimizer defaults must be beta1=0.9, beta2=0.98, eps=1e-6");
    record(r, tc.peak_lr == 1e-3 && tc.warmup_frac == 0.1,
           "schedule defaults must be peak 1e-3 with 10% warmup");
    record(r, tc.chunk_min == 2 && tc.chunk_max == 32, "chunk range defaults must be [2, 32]");

    Rng rng = seeded_rng(9, "loss-arithmetic");
    for (int k = 0; k < 10; ++k) {
        const double off = uniform_real(rng, 0.0, 20.0);
        const double on = uniform_real(rng, 0.0, 20.0);
        const double div = uniform_real(rng, 0.0, 1.0);
        const double fp = uniform_real(rng, 0.0, 5.0);
        const LossBreakdown b = make_breakdown(off, on, div, fp, defaults);
        const std::string label = "draw " + std::to_string(k);
        record(r, std::abs(b.l_dual - (0.5 * (off + on) + 0.1 * div)) < 1e-12,
               label + ": dual composition off by " +
                   fmt(b.l_dual - (0.5 * (off + on) + 0.1 * div)));
        record(r, std::abs(b.l_total - (b.l_dual + fp)) < 1e-12,
               label + ": total composition off by " + fmt(b.l_total - (b.l_dual + fp)));

        ad::Tape<double> tape;
        const auto scalar = [&](double v) {
            return tape.constant(MatrixX<double>::Constant(1, 1, v));
        };
        const ad::Var<double> total = compose_total_loss_tape<double>(
            scalar(off), scalar(on), scalar(div), scalar(fp), defaults);
        record(r, std::abs(tape.value(total)(0, 0) - b.l_total) < 1e-12,
               label + ": tape composition disagrees with the breakdown");
    }
    return r;
}

// 10. Contrastive closed forms and the exact-zero future prediction case.
CheckResult check_contrastive_symmetry() {
    CheckResult r = make_result("contrastive-symmetry", 10);

    // All candidates identical: every anchor scores -log(1/(K+1)).
    {
        const int n = 12, k = 10;
        const MatrixX<double> y = MatrixX<double>::Ones(n, 4);
        Rng rng = seeded_rng(10, "equal-similarity");
        const auto distractors = sample_distractors(n, k, rng);
        const double expected = n * std::log(static_cast<double>(k + 1));
        const double plain = contrastive_loss<double>(y, y, distractors, 0.1);
        record(r, std::abs(plain - expected) < 1e-9,
               "equal-similarity loss " + fmt(plain) + " != n*ln(K+1) " + fmt(expected));

        ad::Tape<double> tape;
        const ad::Var<double> vy = tape.constant(y);
        const ad::Var<double> taped = contrastive_loss_tape<double>(
            tape, vy, vy, distractors, 0.1, true);
        record(r, std::abs(tape.value(taped)(0, 0) - expected) < 1e-9,
               "taped equal-similarity loss disagrees with n*ln(K+1)");
        record(r, contrastive_accuracy<double>(y, y, distractors) == 0.0,
               "ties must not count as correct predictions");
    }

    // Orthogonal pair: the loss reduces to log1p(exp(-1/kappa)).
    {
        MatrixX<double> y = MatrixX<double>::Identity(2, 2);
        const std::vector<std::vector<int>> distractors{{1}, {0}};
        const double expected = 2.0 * std::log1p(std::exp(-10.0));
        const double plain = contrastive_loss<double>(y, y, distractors, 0.1);
        record(r, std::abs(plain - expected) < 1e-12,
               "orthogonal-pair loss " + fmt(plain) + " != " + fmt(expected));
        record(r, contrastive_accuracy<double>(y, y, distractors) == 1.0,
               "orthogonal pair must be classified perfectly");
    }

    // Register outputs equal to their future targets: loss exactly zero.
    {
        const StreamConfig cfg{6, 2, 1, 1, 3};
        const ChunkLayout layout(cfg);
        const auto targets = future_target_times(cfg);
        const std::vector<std::vector<int>> expected_targets{{4}, {6}, {}};
        record(r, targets == expected_targets, "future target table differs from {4},{6},{}");

        Rng rng = seeded_rng(10, "future-zero");
        const MatrixX<double> y_off = random_matrix<double>(6, 3, rng);
        MatrixX<double> y_on = random_matrix<double>(layout.size(), 3, rng);
        for (int i = 1; i <= layout.num_chunks(); ++i) {
            const auto& times = targets[static_cast<std::size_t>(i - 1)];
            for (std::size_t j = 0; j < times.size(); ++j)
                y_on.row(layout.register_slot(i, static_cast<int>(j) + 1)) =
                    y_off.row(times[j] - 1);
        }
        record(r, future_prediction_loss<double>(y_on, y_off, layout) == 0.0,
               "future prediction loss must vanish exactly on perfect predictions");

        ad::Tape<double> tape;
        const ad::Var<double> taped = future_prediction_loss_tape<double>(
            tape, tape.constant(y_on), tape.constant(y_off), layout);
        record(r, tape.value(taped)(0, 0) == 0.0,
               "taped future prediction loss must vanish exactly");
    }

    // One register, unit error in two of two dimensions: mean square is 1.
    {
        const StreamConfig cfg{4, 2, 0, 1, 2};
        const ChunkLayout layout(cfg);
        Rng rng = seeded_rng(10, "future-unit");
        const MatrixX<double> y_off = random_matrix<double>(4, 2, rng);
        MatrixX<double> y_on = MatrixX<double>::Zero(layout.size(), 2);
        y_on.row(layout.register_slot(1, 1)) =
            y_off.row(2) + Eigen::RowVector2d(1.0, -1.0);
        record(r, future_prediction_loss<double>(y_on, y_off, layout) == 1.0,
               "unit-error future prediction loss must be exactly 1");
    }
    return r;
}

// 11. Dynamic chunk sampling: C uniform over [2, 32] within 5 sigma on 10k
// draws, L always within [0, C] and reaching both ends.
CheckResult check_sampling() {
    CheckResult r = make_result("sampling", 11);
    const TrainConfig cfg;
    Rng rng = seeded_rng(11, "sampling-sweep");
    const int draws = 10000;
    const int values = cfg.chunk_max - cfg.chunk_min + 1;
    std::vector<int> counts(static_cast<std::size_t>(values), 0);
    bool bounds_ok = true;
    bool saw_zero = false, saw_full = false;
    for (int i = 0; i < draws; ++i) {
        const auto [chunk, lookahead] = sample_dynamic_config(cfg, rng);
        if (chunk < cfg.chunk_min || chunk > cfg.chunk_max) {
            bounds_ok = false;
            continue;
        }
        ++counts[static_cast<std::size_t>(chunk - cfg.chunk_min)];
        bounds_ok = bounds_ok && lookahead >= 0 && lookahead <= chunk;
        saw_zero = saw_zero || lookahead == 0;
        saw_full = saw_full || lookahead == chunk;
    }
    record(r, bounds_ok, "a draw escaped its bounds");
    record(r, saw_zero && saw_full, "look-ahead never reached an end of its range");

    const double p = 1.0 / values;
    const double mean = draws * p;
    const double sigma = std::sqrt(draws * p * (1.0 - p));
    for (int v = 0; v < values; ++v) {
        const double dev = std::abs(counts[static_cast<std::size_t>(v)] - mean);
        record(r, dev <= 5.0 * sigma,
               "chunk size " + std::to_string(cfg.chunk_min + v) + " drawn " +
                   std::to_string(counts[static_cast<std::size_t>(v)]) + " times (" +
                   fmt(dev / sigma) + " sigma)");
    }
    return r;
}

// 12. The published toy recipe trains: the dual loss falls by 30%, accuracy
// beats 0.27, and one register does no worse than none on the online loss.
CheckResult check_training() {
    CheckResult r = make_result("training", 12);
    TrainConfig cfg;
    cfg.seed = 7;

    const auto window_mean = [](const std::vector<StepMetrics>& m, bool first,
                                double StepMetrics::*field) {
        const std::size_t w = 50;
        double s = 0.0;
        for (std::size_t i = 0; i < w; ++i)
            s += (first ? m[i] : m[m.size() - 1 - i]).*field;
        return s / static_cast<double>(w);
    };

    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult<double> with_reg = run_training<double>(cfg);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    TrainConfig cfg0 = cfg;
    cfg0.registers = 0;
    const TrainResult<double> without_reg = run_training<double>(cfg0);

    const double dual_first = window_mean(with_reg.metrics, true, &StepMetrics::l_dual);
    const double dual_last = window_mean(with_reg.metrics, false, &StepMetrics::l_dual);
    const double acc_last = window_mean(with_reg.metrics, false, &StepMetrics::accuracy);
    const double on_with = window_mean(with_reg.metrics, false, &StepMetrics::l_on);
    const double on_without = window_mean(without_reg.metrics, false, &StepMetrics::l_on);

    record(r, dual_last <= 0.7 * dual_first,
           "dual loss only moved " + fmt(dual_first) + " -> " + fmt(dual_last));
    record(r, acc_last > 0.27, "final accuracy " + fmt(acc_last) + " <= 0.27");
    record(r, on_with <= on_without,
           "online loss with a register (" + fmt(on_with) + ") beat by the baseline (" +
               fmt(on_without) + ")");
    record(r, secs < 300.0, "training run took " + fmt(secs) + "s");

    std::ostringstream note;
    note << "L_dual " << dual_first << " -> " << dual_last << ", accuracy " << acc_last
         << ", L_on " << on_with << " (R=1) vs " << on_without << " (R=0), " << secs << "s";
    r.notes.push_back(note.str());
    return r;
}

// 13. Latency arithmetic for the three standard operating points.
CheckResult check_latency() {
    CheckResult r = make_result("latency", 13);
    record(r, latency_report(8, 0, 20.0).chunk_ms == 160.0, "8-frame chunks must mean 160 ms");
    record(r, latency_report(16, 0, 20.0).chunk_ms == 320.0, "16-frame chunks must mean 320 ms");
    record(r, latency_report(32, 0, 20.0).chunk_ms == 640.0, "32-frame chunks must mean 640 ms");
    const LatencyReport with_la = latency_report(8, 4, 20.0);
    record(r, with_la.chunk_ms == 160.0 && with_la.total_ms == 240.0,
           "look-ahead must extend total latency only");
    return r;
}

struct SuiteEntry {
    const char* name;
    CheckResult (*run)();
};

const SuiteEntry kSuites[] = {
    {"mask-oracle", check_mask_oracle},
    {"golden-mask", check_golden_mask},
    {"degeneracy", check_degeneracy},
    {"streaming", check_streaming},
    {"causality", check_causality},
    {"register-independence", check_register_independence},
    {"gradcheck", check_gradcheck},
    {"stop-gradient", check_stop_gradient},
    {"loss-arithmetic", check_loss_arithmetic},
    {"contrastive-symmetry", check_contrastive_symmetry},
    {"sampling", check_sampling},
    {"training", check_training},
    {"latency", check_latency},
};

}  // namespace

std::vector<std::string> suite_names() {
    std::vector<std::string> names;
    for (const SuiteEntry& s : kSuites) names.emplace_back(s.name);
    return names;
}

CheckResult run_suite(const std::string& name) {
    for (const SuiteEntry& s : kSuites)
        if (name == s.name) return s.run();
    throw std::invalid_argument("run_suite: unknown suite " + name);
}

std::vector<CheckResult> run_all_suites() {
    std::vector<CheckResult> results;
    for (const SuiteEntry& s : kSuites) results.push_back(s.run());
    return results;
}

}  // namespace regstream
