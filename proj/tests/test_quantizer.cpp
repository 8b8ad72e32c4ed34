#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "regstream/quantizer.hpp"
#include "regstream/rng.hpp"

using namespace regstream;
using Mat = MatrixX<double>;

namespace {

QuantizerConfig small_config() {
    QuantizerConfig cfg;
    cfg.groups = 2;
    cfg.entries = 4;
    cfg.code_dim = 3;
    cfg.in_dim = 6;
    cfg.out_dim = 5;
    return cfg;
}

Mat rand_mat(int rows, int cols, Rng& rng) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
}

}  // namespace

TEST_CASE("selection probabilities ignore the noise") {
    const QuantizerConfig cfg = small_config();
    const QuantizerParams<double> params = init_quantizer<double>(cfg, 21);
    Rng rng = seeded_rng(21, "quantizer-probs");
    const Mat x = rand_mat(4, cfg.in_dim, rng);
    const Mat noise_a = gumbel_noise<double>(4, cfg.groups * cfg.entries, rng);
    const Mat noise_b = gumbel_noise<double>(4, cfg.groups * cfg.entries, rng);

    const auto a = quantize<double>(x, params, noise_a);
    const auto b = quantize<double>(x, params, noise_b);
    CHECK(a.probs == b.probs);
    for (int r = 0; r < 4; ++r)
        for (int g = 0; g < cfg.groups; ++g)
            CHECK(a.probs.row(r).segment(g * cfg.entries, cfg.entries).sum() ==
                  doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("equal logits give uniform probabilities and noise picks the entry") {
    QuantizerConfig cfg;
    cfg.groups = 1;
    cfg.entries = 2;
    cfg.code_dim = 2;
    cfg.in_dim = 2;
    cfg.out_dim = 2;
    QuantizerParams<double> params = init_quantizer<double>(cfg, 1);
    params.logit_W.setZero();  // logits identically zero
    params.logit_b.setZero();
    params.codebooks << 1, 0, 0, 1;
    params.out_W.setIdentity();

    const Mat x = Mat::Ones(1, 2);
    Mat noise(1, 2);
    noise << 0.0, 1.0;  // entry 1 wins
    const auto result = quantize<double>(x, params, noise);
    CHECK(result.probs(0, 0) == 0.5);
    CHECK(result.probs(0, 1) == 0.5);
    REQUIRE(result.indices[0][0] == 1);
    CHECK(result.quantized(0, 0) == 0.0);
    CHECK(result.quantized(0, 1) == 1.0);

    noise << 2.0, 1.0;  // entry 0 wins
    CHECK(quantize<double>(x, params, noise).indices[0][0] == 0);
}

TEST_CASE("straight-through value equals the hard pick") {
    const QuantizerConfig cfg = small_config();
    const QuantizerParams<double> params = init_quantizer<double>(cfg, 22);
    Rng rng = seeded_rng(22, "quantizer-st");
    const Mat x = rand_mat(5, cfg.in_dim, rng);
    const Mat noise = gumbel_noise<double>(5, cfg.groups * cfg.entries, rng);

    const auto plain = quantize<double>(x, params, noise);

    ad::Tape<double> tape;
    const QuantizerVars<double> vars = make_quantizer_vars(tape, params);
    const auto hard = quantize_tape<double>(tape, tape.constant(x), vars, noise, true);
    CHECK(hard.indices == plain.indices);
    CHECK((tape.value(hard.quantized) - plain.quantized).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((tape.value(hard.probs) - plain.probs).cwiseAbs().maxCoeff() < 1e-14);

    const auto soft = quantize_tape<double>(tape, tape.constant(x), vars, noise, false);
    CHECK(soft.indices == plain.indices);
    CHECK((tape.value(soft.quantized) - plain.quantized).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("straight-through gradient follows the soft weights") {
    // With hard selection the value is piecewise constant in the input, yet
    // the tape still carries the soft-path gradient.
    const QuantizerConfig cfg = small_config();
    const QuantizerParams<double> params = init_quantizer<double>(cfg, 23);
    Rng rng = seeded_rng(23, "quantizer-grad");
    const Mat x = rand_mat(3, cfg.in_dim, rng);
    const Mat noise = gumbel_noise<double>(3, cfg.groups * cfg.entries, rng);

    ad::Tape<double> tape;
    const QuantizerVars<double> vars = make_quantizer_vars(tape, params);
    const ad::Var<double> vx = tape.leaf(x);
    const auto hard = quantize_tape<double>(tape, vx, vars, noise, true);
    tape.backward(ad::sum_all(hard.quantized));
    const Mat g_hard = tape.grad_of(vx);
    CHECK(g_hard.cwiseAbs().maxCoeff() > 0.0);

    ad::Tape<double> tape2;
    const QuantizerVars<double> vars2 = make_quantizer_vars(tape2, params);
    const ad::Var<double> vx2 = tape2.leaf(x);
    const auto soft = quantize_tape<double>(tape2, vx2, vars2, noise, false);
    tape2.backward(ad::sum_all(soft.quantized));
    CHECK((g_hard - tape2.grad_of(vx2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("soft path passes a finite-difference check") {
    QuantizerConfig cfg = small_config();
    cfg.groups = 1;
    cfg.entries = 3;
    const QuantizerParams<double> params = init_quantizer<double>(cfg, 24);
    Rng rng = seeded_rng(24, "quantizer-fd");
    Mat x = rand_mat(2, cfg.in_dim, rng);
    const Mat noise = gumbel_noise<double>(2, cfg.entries, rng);

    const auto eval = [&](const Mat& input) {
        ad::Tape<double> t;
        const auto vars = make_quantizer_vars(t, params);
        const auto out = quantize_tape<double>(t, t.constant(input), vars, noise, false);
        return t.value(ad::sum_all(out.quantized))(0, 0);
    };

    ad::Tape<double> tape;
    const auto vars = make_quantizer_vars(tape, params);
    const ad::Var<double> vx = tape.leaf(x);
    const auto out = quantize_tape<double>(tape, vx, vars, noise, false);
    tape.backward(ad::sum_all(out.quantized));
    const Mat grad = tape.grad_of(vx);

    const double h = 1e-6;
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j) {
            Mat up = x, down = x;
            up(i, j) += h;
            down(i, j) -= h;
            const double fd = (eval(up) - eval(down)) / (2.0 * h);
            CHECK(grad(i, j) == doctest::Approx(fd).epsilon(1e-5));
        }
}

TEST_CASE("diversity loss at pinned distributions") {
    Mat uniform(3, 2);
    uniform.setConstant(0.5);
    CHECK(diversity_loss<double>(uniform, 1, 2) == doctest::Approx(0.0).epsilon(1e-12));

    Mat collapsed(3, 2);
    collapsed.col(0).setOnes();
    collapsed.col(1).setZero();
    CHECK(diversity_loss<double>(collapsed, 1, 2) == doctest::Approx(0.5).epsilon(1e-12));

    Mat mixed(2, 4);
    mixed << 0.5, 0.5, 1.0, 0.0, 0.5, 0.5, 1.0, 0.0;
    CHECK(diversity_loss<double>(mixed, 2, 2) == doctest::Approx(0.25).epsilon(1e-12));

    // Rows that differ but average to uniform still count as full use.
    Mat averaged(2, 2);
    averaged << 1.0, 0.0, 0.0, 1.0;
    CHECK(diversity_loss<double>(averaged, 1, 2) == doctest::Approx(0.0).epsilon(1e-12));

    Mat bad(1, 2);
    bad << 0.9, 0.2;
    CHECK_THROWS_AS(diversity_loss<double>(bad, 1, 2), std::invalid_argument);
}

TEST_CASE("taped diversity loss matches and is differentiable") {
    const QuantizerConfig cfg = small_config();
    const QuantizerParams<double> params = init_quantizer<double>(cfg, 25);
    Rng rng = seeded_rng(25, "quantizer-div");
    const Mat x = rand_mat(6, cfg.in_dim, rng);
    const Mat noise = gumbel_noise<double>(6, cfg.groups * cfg.entries, rng);

    ad::Tape<double> tape;
    const auto vars = make_quantizer_vars(tape, params);
    const auto out = quantize_tape<double>(tape, tape.constant(x), vars, noise, true);
    const ad::Var<double> ld = diversity_loss_tape<double>(tape, out.probs, cfg.groups,
                                                           cfg.entries);
    const double plain = diversity_loss<double>(tape.value(out.probs), cfg.groups, cfg.entries);
    CHECK(tape.value(ld)(0, 0) == doctest::Approx(plain).epsilon(1e-12));

    tape.backward(ld);
    bool any = false;
    for (const auto& [name, var] : vars.named)
        any = any || tape.grad_of(var).cwiseAbs().maxCoeff() > 0.0;
    CHECK(any);
}

TEST_CASE("shape validation") {
    const QuantizerConfig cfg = small_config();
    const QuantizerParams<double> params = init_quantizer<double>(cfg, 26);
    const Mat x = Mat::Zero(2, cfg.in_dim);
    CHECK_THROWS_AS(quantize<double>(Mat::Zero(2, 3), params, Mat::Zero(2, 8)),
                    std::invalid_argument);
    CHECK_THROWS_AS(quantize<double>(x, params, Mat::Zero(2, 7)), std::invalid_argument);
    QuantizerConfig bad = cfg;
    bad.groups = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
