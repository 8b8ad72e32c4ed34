#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "regstream/rng.hpp"
#include "regstream/streaming.hpp"

using namespace regstream;
using Mat = MatrixX<double>;

namespace {

EncoderParams<double> small_params(int registers, std::uint64_t seed) {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.width = 16;
    cfg.ff = 32;
    cfg.registers = registers;
    return init_encoder<double>(cfg, seed);
}

Mat rand_mat(int rows, int cols, Rng& rng) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
}

}  // namespace

TEST_CASE("latency arithmetic") {
    CHECK(latency_report(8, 0, 20.0).chunk_ms == 160.0);
    CHECK(latency_report(16, 0, 20.0).chunk_ms == 320.0);
    CHECK(latency_report(32, 0, 20.0).chunk_ms == 640.0);
    const LatencyReport r = latency_report(8, 4, 20.0);
    CHECK(r.total_ms == 240.0);
    CHECK_THROWS_AS(latency_report(0, 0, 20.0), std::invalid_argument);
    CHECK_THROWS_AS(latency_report(8, -1, 20.0), std::invalid_argument);
    CHECK_THROWS_AS(latency_report(8, 0, 0.0), std::invalid_argument);
}

TEST_CASE("streaming equals the assembled pass on a small sweep") {
    Rng rng = seeded_rng(61, "sweep");
    for (int k = 0; k < 12; ++k) {
        const int frames = uniform_int(rng, 1, 20);
        const int chunk = uniform_int(rng, 1, 6);
        const int lookahead = uniform_int(rng, 0, chunk);
        const int registers = uniform_int(rng, 0, 2);
        const auto params = small_params(registers, 600 + static_cast<std::uint64_t>(k));
        const Mat x = rand_mat(frames, 16, rng);

        const StreamConfig cfg{frames, chunk, lookahead, registers, 16};
        const OnlineForward<double> ref = online_forward<double>(x, params, cfg);
        const OnlineForward<double> live = stream_encode<double>(x, params, chunk, lookahead);

        REQUIRE(ref.frame_outputs.rows() == frames);
        REQUIRE(live.frame_outputs.rows() == frames);
        CHECK((ref.frame_outputs - live.frame_outputs).cwiseAbs().maxCoeff() < 1e-10);
        REQUIRE(ref.register_outputs.size() == live.register_outputs.size());
        for (std::size_t i = 0; i < ref.register_outputs.size(); ++i) {
            REQUIRE(ref.register_outputs[i].rows() == registers);
            if (registers > 0)
                CHECK((ref.register_outputs[i] - live.register_outputs[i])
                          .cwiseAbs()
                          .maxCoeff() < 1e-10);
        }
    }
}

TEST_CASE("a single full-size chunk degenerates to the offline encoder") {
    const auto params = small_params(0, 62);
    Rng rng = seeded_rng(62, "degenerate");
    const Mat x = rand_mat(7, 16, rng);
    std::vector<int> times{1, 2, 3, 4, 5, 6, 7};
    const Mat offline = encode<double>(x, build_offline_mask<double>(7), times, params);

    StreamState<double> state(params, 7, 0);
    const StreamStep<double> step = state.push_chunk(x, Mat(0, 16));
    CHECK((step.frame_outputs - offline).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(step.register_outputs.rows() == 0);
}

TEST_CASE("stream state protocol errors") {
    const auto params = small_params(1, 63);
    Rng rng = seeded_rng(63, "protocol");
    const Mat chunk2 = rand_mat(2, 16, rng);

    StreamState<double> state(params, 2, 1);
    CHECK_THROWS_AS(state.push_chunk(rand_mat(3, 16, rng), Mat(0, 16)),
                    std::invalid_argument);
    CHECK_THROWS_AS(state.push_chunk(chunk2, rand_mat(2, 16, rng)), std::invalid_argument);
    state.push_chunk(chunk2, Mat(0, 16));
    CHECK_THROWS_AS(state.finalize(chunk2), std::invalid_argument);  // tail not shorter

    state.finalize(rand_mat(1, 16, rng));
    CHECK(state.finalized());
    CHECK_THROWS_AS(state.push_chunk(chunk2, Mat(0, 16)), std::logic_error);
    CHECK_THROWS_AS(state.finalize(Mat(0, 16)), std::logic_error);

    StreamState<double> empty_end(params, 2, 0);
    empty_end.push_chunk(chunk2, Mat(0, 16));
    const StreamStep<double> last = empty_end.finalize(Mat(0, 16));
    CHECK(last.frame_outputs.rows() == 0);
    CHECK(empty_end.finalized());

    CHECK_THROWS_AS(StreamState<double>(params, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(StreamState<double>(params, 2, -1), std::invalid_argument);
}

TEST_CASE("cache grows by exactly the committed chunk rows") {
    const auto params = small_params(2, 64);  // 2 layers
    Rng rng = seeded_rng(64, "cache");
    StreamState<double> state(params, 3, 2);
    CHECK(state.cache_rows() == 0);

    state.push_chunk(rand_mat(3, 16, rng), rand_mat(2, 16, rng));
    // Look-ahead and register rows must not be cached: 3 rows per layer.
    CHECK(state.cache_rows() == 2 * 3);
    CHECK(state.cache_bytes() == 2 * (2 * 3) * 16 * sizeof(double));

    state.push_chunk(rand_mat(3, 16, rng), Mat(0, 16));
    CHECK(state.cache_rows() == 2 * 6);
    CHECK(state.chunks_pushed() == 2);
    CHECK(state.frames_seen() == 6);

    state.finalize(rand_mat(2, 16, rng));
    CHECK(state.frames_seen() == 8);
}

TEST_CASE("register outputs appear for every chunk including the tail") {
    const auto params = small_params(2, 65);
    Rng rng = seeded_rng(65, "tail");
    const Mat x = rand_mat(7, 16, rng);
    const OnlineForward<double> out = stream_encode<double>(x, params, 3, 1);
    REQUIRE(out.register_outputs.size() == 3);  // chunks [1..3],[4..6],[7]
    for (const Mat& block : out.register_outputs) CHECK(block.rows() == 2);
    CHECK(out.frame_outputs.rows() == 7);
}

TEST_CASE("stream config validation mirrors the layout rules") {
    const auto params = small_params(1, 66);
    Rng rng = seeded_rng(66, "validation");
    const Mat x = rand_mat(4, 16, rng);
    CHECK_THROWS_AS(online_forward<double>(x, params, StreamConfig{5, 2, 0, 1, 16}),
                    std::invalid_argument);  // frames mismatch
    CHECK_THROWS_AS(online_forward<double>(x, params, StreamConfig{4, 2, 0, 2, 16}),
                    std::invalid_argument);  // register mismatch
    CHECK_THROWS_AS(online_forward<double>(x, params, StreamConfig{4, 2, 0, 1, 8}),
                    std::invalid_argument);  // width mismatch
}
