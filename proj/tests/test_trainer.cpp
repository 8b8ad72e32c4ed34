#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "regstream/trainer.hpp"

using namespace regstream;
using Mat = MatrixX<double>;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.steps = 3;
    cfg.batch = 2;
    cfg.frames = 12;
    cfg.width = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ff = 16;
    cfg.registers = 1;
    cfg.chunk_min = 2;
    cfg.chunk_max = 6;
    cfg.mask_prob = 0.15;
    cfg.groups = 1;
    cfg.entries = 4;
    cfg.code_dim = 4;
    cfg.seed = 77;
    return cfg;
}

}  // namespace

TEST_CASE("learning rate schedule: warmup then linear decay") {
    const double peak = 1e-3;
    CHECK(lr_at(1, 500, peak, 0.1) == doctest::Approx(peak / 50.0).epsilon(1e-15));
    CHECK(lr_at(25, 500, peak, 0.1) == doctest::Approx(peak * 0.5).epsilon(1e-15));
    CHECK(lr_at(50, 500, peak, 0.1) == doctest::Approx(peak).epsilon(1e-15));
    CHECK(lr_at(51, 500, peak, 0.1) == doctest::Approx(peak).epsilon(1e-15));
    CHECK(lr_at(275, 500, peak, 0.1) == doctest::Approx(peak * 226.0 / 450.0).epsilon(1e-15));
    CHECK(lr_at(500, 500, peak, 0.1) == doctest::Approx(peak / 450.0).epsilon(1e-15));
    CHECK_THROWS_AS(lr_at(0, 500, peak, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(lr_at(501, 500, peak, 0.1), std::invalid_argument);
}

TEST_CASE("optimizer against two hand-computed steps") {
    Mat p = Mat::Constant(1, 1, 1.0);
    std::vector<std::pair<std::string, Mat*>> params{{"p", &p}};
    std::unordered_map<std::string, Mat> grads;
    grads.emplace("p", Mat::Constant(1, 1, 2.0));

    Adam<double> adam(0.9, 0.98, 1e-6);
    adam.step(params, grads, 0.01);
    // Bias correction makes the first update lr * g / (|g| + eps).
    CHECK(p(0, 0) == doctest::Approx(1.0 - 0.01 * 2.0 / (2.0 + 1e-6)).epsilon(1e-14));
    adam.step(params, grads, 0.01);
    // A constant gradient keeps the corrected moments exact.
    CHECK(p(0, 0) == doctest::Approx(1.0 - 2.0 * (0.01 * 2.0 / (2.0 + 1e-6))).epsilon(1e-12));
}

TEST_CASE("optimizer ignores empty tensors and rejects missing gradients") {
    Mat empty(0, 4);
    Mat p = Mat::Zero(1, 1);
    std::vector<std::pair<std::string, Mat*>> params{{"none", &empty}, {"p", &p}};
    std::unordered_map<std::string, Mat> grads;
    grads.emplace("p", Mat::Constant(1, 1, 1.0));

    Adam<double> adam(0.9, 0.98, 1e-6);
    adam.step(params, grads, 0.1);  // no entry for "none": fine, it is empty
    CHECK(p(0, 0) < 0.0);

    Mat q = Mat::Zero(1, 1);
    params.emplace_back("q", &q);
    CHECK_THROWS_AS(adam.step(params, grads, 0.1), std::logic_error);
}

TEST_CASE("synthetic utterances are deterministic and bounded") {
    Rng a = seeded_rng(5, "data");
    Rng b = seeded_rng(5, "data");
    const Mat ua = synth_utterance<double>(30, 8, a);
    const Mat ub = synth_utterance<double>(30, 8, b);
    CHECK(ua == ub);
    CHECK(ua.rows() == 30);
    CHECK(ua.cols() == 8);
    CHECK(ua.allFinite());
    // Consecutive draws differ.
    CHECK(synth_utterance<double>(30, 8, a) != ua);
}

TEST_CASE("batch plans tie the noise budget to the masking plans") {
    const TrainConfig cfg = tiny_config();
    TrainStreams streams = make_streams(cfg.seed);
    const BatchPlan<double> plan = make_batch_plan<double>(cfg, streams);

    CHECK(plan.chunk >= cfg.chunk_min);
    CHECK(plan.chunk <= cfg.chunk_max);
    CHECK(plan.lookahead >= 0);
    CHECK(plan.lookahead <= plan.chunk);
    REQUIRE(plan.utterances.size() == 2);
    REQUIRE(plan.plans.size() == 2);

    int masked = 0;
    for (int b = 0; b < 2; ++b) {
        const int m = static_cast<int>(plan.plans[b].masked_steps.size());
        masked += m;
        if (m < 2)
            CHECK(plan.distractors[b].empty());
        else
            CHECK(static_cast<int>(plan.distractors[b].size()) == m);
    }
    CHECK(plan.gumbel.rows() == masked);
    CHECK(plan.gumbel.cols() == cfg.groups * cfg.entries);
}

TEST_CASE("register count does not consume the shared streams") {
    TrainConfig with = tiny_config();
    TrainConfig without = tiny_config();
    without.registers = 0;

    TrainStreams sa = make_streams(77);
    TrainStreams sb = make_streams(77);
    for (int step = 0; step < 3; ++step) {
        const BatchPlan<double> a = make_batch_plan<double>(with, sa);
        const BatchPlan<double> b = make_batch_plan<double>(without, sb);
        CHECK(a.chunk == b.chunk);
        CHECK(a.lookahead == b.lookahead);
        CHECK(a.gumbel == b.gumbel);
        for (std::size_t u = 0; u < a.utterances.size(); ++u) {
            CHECK(a.utterances[u] == b.utterances[u]);
            CHECK(a.plans[u].masked_steps == b.plans[u].masked_steps);
        }
        CHECK(a.distractors == b.distractors);
    }
}

TEST_CASE("dual forward produces a consistent breakdown") {
    const TrainConfig cfg = tiny_config();
    const Model<double> model = init_model<double>(cfg);
    TrainStreams streams = make_streams(cfg.seed);
    const BatchPlan<double> batch = make_batch_plan<double>(cfg, streams);

    ad::Tape<double> tape;
    const DualForward<double> fwd = dual_forward(tape, model, cfg, batch);
    const LossBreakdown& b = fwd.breakdown;
    CHECK(std::isfinite(b.l_total));
    CHECK(b.l_d >= 0.0);
    CHECK(b.l_d <= 1.0);
    CHECK(b.l_fp >= 0.0);
    CHECK(std::abs(b.l_dual - (0.5 * (b.l_off + b.l_on) + cfg.loss.alpha * b.l_d)) < 1e-12);
    CHECK(std::abs(b.l_total - (b.l_dual + cfg.loss.beta * b.l_fp)) < 1e-12);
    CHECK(fwd.accuracy >= 0.0);
    CHECK(fwd.accuracy <= 1.0);

    int masked = 0;
    for (const MaskingPlan& p : batch.plans) masked += static_cast<int>(p.masked_steps.size());
    CHECK(fwd.masked_rows == masked);
    CHECK(tape.value(fwd.total)(0, 0) == doctest::Approx(b.l_total).epsilon(1e-12));
}

TEST_CASE("one optimizer step moves the parameters") {
    const TrainConfig cfg = tiny_config();
    Model<double> model = init_model<double>(cfg);
    const Mat before = model.encoder.layers[0].Wq;
    TrainStreams streams = make_streams(cfg.seed);
    Adam<double> adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    const StepMetrics m = train_step(model, cfg, 1, streams, adam);
    CHECK(m.step == 1);
    CHECK(std::isfinite(m.l_total));
    CHECK(model.encoder.layers[0].Wq != before);
}

TEST_CASE("training runs are bitwise reproducible") {
    const TrainConfig cfg = tiny_config();
    const TrainResult<double> a = run_training<double>(cfg);
    const TrainResult<double> b = run_training<double>(cfg);
    REQUIRE(a.metrics.size() == 3);
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
        CHECK(a.metrics[i].l_total == b.metrics[i].l_total);
        CHECK(a.metrics[i].accuracy == b.metrics[i].accuracy);
        CHECK(a.metrics[i].chunk == b.metrics[i].chunk);
    }
    CHECK(a.model.encoder.layers[0].Wq == b.model.encoder.layers[0].Wq);
    CHECK(a.model.quantizer.codebooks == b.model.quantizer.codebooks);
}

TEST_CASE("register width flows through the model schema") {
    TrainConfig cfg = tiny_config();
    cfg.registers = 3;
    const Model<double> model = init_model<double>(cfg);
    CHECK(model.encoder.registers.rows() == 3);
    CHECK(model.encoder.registers.cols() == cfg.width);

    cfg.registers = 0;
    const Model<double> none = init_model<double>(cfg);
    CHECK(none.encoder.registers.rows() == 0);
}

TEST_CASE("config validation") {
    TrainConfig cfg = tiny_config();
    cfg.chunk_min = 5;
    cfg.chunk_max = 4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.width = 9;  // not divisible by heads
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.steps = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
