#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "regstream/losses.hpp"
#include "regstream/rng.hpp"

using namespace regstream;
using Mat = MatrixX<double>;

namespace {
Mat rand_mat(int rows, int cols, Rng& rng) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
}
}  // namespace

TEST_CASE("distractor sampling: no self, no repeats, clipped count") {
    Rng rng = seeded_rng(31, "distractors");
    for (int trial = 0; trial < 50; ++trial) {
        const int anchors = uniform_int(rng, 2, 20);
        const int k = uniform_int(rng, 1, 15);
        const auto sets = sample_distractors(anchors, k, rng);
        REQUIRE(static_cast<int>(sets.size()) == anchors);
        const int expected = std::min(k, anchors - 1);
        for (int a = 0; a < anchors; ++a) {
            const auto& s = sets[static_cast<std::size_t>(a)];
            REQUIRE(static_cast<int>(s.size()) == expected);
            std::set<int> seen;
            for (int idx : s) {
                CHECK(idx != a);
                CHECK(idx >= 0);
                CHECK(idx < anchors);
                seen.insert(idx);
            }
            CHECK(static_cast<int>(seen.size()) == expected);
        }
    }
    CHECK_THROWS_AS(sample_distractors(1, 5, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_distractors(4, 0, rng), std::invalid_argument);
}

TEST_CASE("orthogonal pair closed form") {
    const Mat y = Mat::Identity(2, 2);
    const std::vector<std::vector<int>> distractors{{1}, {0}};
    const double expected = 2.0 * std::log1p(std::exp(-10.0));
    CHECK(contrastive_loss<double>(y, y, distractors, 0.1) ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK(contrastive_accuracy<double>(y, y, distractors) == 1.0);
}

TEST_CASE("identical candidates score ln(K+1) per anchor, ties count as wrong") {
    const int n = 12, k = 10;
    const Mat y = Mat::Ones(n, 5);
    Rng rng = seeded_rng(31, "equal-similarity");
    const auto distractors = sample_distractors(n, k, rng);
    const double expected = n * std::log(11.0);
    CHECK(contrastive_loss<double>(y, y, distractors, 0.1) ==
          doctest::Approx(expected).epsilon(1e-9));
    CHECK(contrastive_accuracy<double>(y, y, distractors) == 0.0);
}

TEST_CASE("cosine similarity ignores row scale") {
    Rng rng = seeded_rng(31, "scale-invariance");
    const Mat y = rand_mat(6, 4, rng);
    const Mat q = rand_mat(6, 4, rng);
    const auto distractors = sample_distractors(6, 3, rng);
    const double base = contrastive_loss<double>(y, q, distractors, 0.1);
    const double scaled = contrastive_loss<double>(y * 7.0, q * 0.25, distractors, 0.1);
    CHECK(scaled == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("taped contrastive loss matches the plain one") {
    Rng rng = seeded_rng(31, "tape-parity");
    const Mat y = rand_mat(7, 5, rng);
    const Mat q = rand_mat(7, 5, rng);
    const auto distractors = sample_distractors(7, 4, rng);
    const double plain = contrastive_loss<double>(y, q, distractors, 0.1);

    ad::Tape<double> tape;
    const auto taped = contrastive_loss_tape<double>(tape, tape.constant(y), tape.constant(q),
                                                     distractors, 0.1, true);
    CHECK(tape.value(taped)(0, 0) == doctest::Approx(plain).epsilon(1e-12));
}

TEST_CASE("severed targets take no gradient, live targets do") {
    Rng rng = seeded_rng(31, "sever");
    const Mat y = rand_mat(5, 4, rng);
    const Mat q = rand_mat(5, 4, rng);
    const auto distractors = sample_distractors(5, 3, rng);

    ad::Tape<double> tape;
    const auto vy = tape.leaf(y);
    const auto vq = tape.leaf(q);
    const auto severed = contrastive_loss_tape<double>(tape, vy, vq, distractors, 0.1, true);
    tape.backward(severed);
    CHECK((tape.grad_of(vq).array() == 0.0).all());
    CHECK(tape.grad_of(vy).cwiseAbs().maxCoeff() > 0.0);

    const auto live = contrastive_loss_tape<double>(tape, vy, vq, distractors, 0.1, false);
    tape.backward(live);
    CHECK(tape.grad_of(vq).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("future target table") {
    CHECK(future_target_times(StreamConfig{6, 2, 1, 1, 1}) ==
          std::vector<std::vector<int>>{{4}, {6}, {}});
    CHECK(future_target_times(StreamConfig{8, 2, 2, 2, 1}) ==
          std::vector<std::vector<int>>{{5, 6}, {7, 8}, {}, {}});
    CHECK(future_target_times(StreamConfig{6, 2, 1, 0, 1}) ==
          std::vector<std::vector<int>>{{}, {}, {}});
    CHECK(future_target_times(StreamConfig{9, 3, 0, 2, 1}) ==
          std::vector<std::vector<int>>{{4, 5}, {7, 8}, {}});
}

TEST_CASE("future prediction loss: exact zero and exact unit") {
    const StreamConfig cfg{6, 2, 1, 1, 3};
    const ChunkLayout layout(cfg);
    Rng rng = seeded_rng(31, "future");
    const Mat y_off = rand_mat(6, 3, rng);
    Mat y_on = rand_mat(layout.size(), 3, rng);
    y_on.row(layout.register_slot(1, 1)) = y_off.row(3);
    y_on.row(layout.register_slot(2, 1)) = y_off.row(5);
    CHECK(future_prediction_loss<double>(y_on, y_off, layout) == 0.0);

    // Perturb one prediction by a unit vector in each of 3 dims: MSE 1.
    y_on.row(layout.register_slot(1, 1)).array() += 1.0;
    CHECK(future_prediction_loss<double>(y_on, y_off, layout) ==
          doctest::Approx(1.0).epsilon(1e-12));

    ad::Tape<double> tape;
    const auto taped = future_prediction_loss_tape<double>(tape, tape.constant(y_on),
                                                           tape.constant(y_off), layout);
    CHECK(tape.value(taped)(0, 0) ==
          doctest::Approx(future_prediction_loss<double>(y_on, y_off, layout)).epsilon(1e-12));
}

TEST_CASE("future prediction with frozen targets matches the severed value") {
    const StreamConfig cfg{6, 2, 1, 2, 4};
    const ChunkLayout layout(cfg);
    Rng rng = seeded_rng(31, "future-frozen");
    const Mat y_off = rand_mat(6, 4, rng);
    const Mat y_on = rand_mat(layout.size(), 4, rng);

    ad::Tape<double> tape;
    const auto v_on = tape.leaf(y_on);
    const auto v_off = tape.leaf(y_off);
    const auto severed = future_prediction_loss_tape<double>(tape, v_on, v_off, layout);
    const auto frozen = future_prediction_loss_tape<double>(tape, v_on, v_off, layout, &y_off);
    CHECK(tape.value(severed)(0, 0) == tape.value(frozen)(0, 0));

    tape.backward(severed);
    CHECK((tape.grad_of(v_off).array() == 0.0).all());
    const Mat g_sev = tape.grad_of(v_on);
    tape.backward(frozen);
    CHECK((tape.grad_of(v_off).array() == 0.0).all());
    CHECK(tape.grad_of(v_on) == g_sev);
}

TEST_CASE("registers beyond the horizon contribute nothing") {
    // Last chunk's targets clip to empty; no rows, no loss contribution.
    const StreamConfig cfg{4, 2, 0, 1, 2};
    const ChunkLayout layout(cfg);
    const Mat y_off = Mat::Ones(4, 2);
    Mat y_on = Mat::Zero(layout.size(), 2);
    y_on.row(layout.register_slot(1, 1)) = y_off.row(2);
    // Chunk 2's register predicts t5 which does not exist: ignored.
    y_on.row(layout.register_slot(2, 1)).setConstant(123.0);
    CHECK(future_prediction_loss<double>(y_on, y_off, layout) == 0.0);
}

TEST_CASE("loss composition arithmetic") {
    LossConfig cfg;
    const LossBreakdown b = make_breakdown(4.0, 6.0, 0.5, 2.0, cfg);
    CHECK(b.l_dual == doctest::Approx(0.5 * 10.0 + 0.1 * 0.5).epsilon(1e-15));
    CHECK(b.l_total == doctest::Approx(b.l_dual + 2.0).epsilon(1e-15));
    CHECK_THROWS_AS(
        make_breakdown(std::numeric_limits<double>::quiet_NaN(), 0, 0, 0, cfg),
        std::runtime_error);

    ad::Tape<double> tape;
    const auto c = [&](double v) { return tape.constant(Mat::Constant(1, 1, v)); };
    const auto total = compose_total_loss_tape<double>(c(4.0), c(6.0), c(0.5), c(2.0), cfg);
    CHECK(tape.value(total)(0, 0) == doctest::Approx(b.l_total).epsilon(1e-15));
}

TEST_CASE("contrastive input validation") {
    const Mat y = Mat::Ones(3, 2);
    CHECK_THROWS_AS(contrastive_loss<double>(y, y, {{1}, {0}}, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(contrastive_loss<double>(y, y, {{3}, {0}, {1}}, 0.1),
                    std::invalid_argument);
}
