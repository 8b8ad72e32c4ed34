#pragma once

#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "regstream/dense.hpp"
#include "regstream/encoder.hpp"
#include "regstream/layout.hpp"
#include "regstream/mask.hpp"

namespace regstream {

// Real-time cost of one chunk: the encoder must wait for the chunk itself
// plus its look-ahead before emitting anything.
struct LatencyReport {
    double chunk_ms = 0.0;      // algorithmic latency of the chunk size alone
    double total_ms = 0.0;      // including the look-ahead wait
};

inline LatencyReport latency_report(int chunk, int lookahead, double frame_ms) {
    if (chunk < 1) throw std::invalid_argument("latency_report: chunk must be >= 1");
    if (lookahead < 0) throw std::invalid_argument("latency_report: lookahead must be >= 0");
    if (!(frame_ms > 0.0)) throw std::invalid_argument("latency_report: frame_ms must be > 0");
    return {chunk * frame_ms, (chunk + lookahead) * frame_ms};
}

template <typename Scalar>
struct StreamStep {
    int chunk = 0;
    MatrixX<Scalar> frame_outputs;     // one row per real frame of the chunk
    MatrixX<Scalar> register_outputs;  // registers x width
};

// Incremental encoder. Committed chunk frames keep their per-layer keys and
// values in a cache; look-ahead rows and registers are recomputed for each
// push and never cached (their committed-frame counterparts see a wider
// context later and must be re-encoded then). Within one push every key is
// visible to every query, so no mask is needed: the cache holds exactly the
// frames of earlier chunks and the push rows all belong to the current one.
template <typename Scalar>
class StreamState {
  public:
    StreamState(const EncoderParams<Scalar>& params, int chunk, int lookahead)
        : params_(&params), chunk_(chunk), lookahead_(lookahead) {
        params.config.validate();
        if (chunk < 1) throw std::invalid_argument("StreamState: chunk must be >= 1");
        if (lookahead < 0) throw std::invalid_argument("StreamState: lookahead must be >= 0");
        key_cache_.assign(static_cast<std::size_t>(params.config.layers),
                          MatrixX<Scalar>(0, params.config.width));
        value_cache_ = key_cache_;
    }

    // Feed one complete chunk plus the look-ahead frames currently available
    // (fewer than `lookahead` only near the end of the signal).
    StreamStep<Scalar> push_chunk(const MatrixX<Scalar>& chunk_frames,
                                  const MatrixX<Scalar>& lookahead_frames) {
        if (finalized_) throw std::logic_error("StreamState: push after finalize");
        if (chunk_frames.rows() != chunk_)
            throw std::invalid_argument("StreamState: chunk must have exactly chunk rows");
        if (lookahead_frames.rows() > lookahead_)
            throw std::invalid_argument("StreamState: too many look-ahead rows");
        return step(chunk_frames, lookahead_frames, true);
    }

    // Feed the trailing partial chunk (possibly empty) and close the stream.
    StreamStep<Scalar> finalize(const MatrixX<Scalar>& tail_frames) {
        if (finalized_) throw std::logic_error("StreamState: finalize called twice");
        if (tail_frames.rows() >= chunk_)
            throw std::invalid_argument("StreamState: tail must be shorter than a chunk");
        finalized_ = true;
        if (tail_frames.rows() == 0) {
            StreamStep<Scalar> step;
            step.chunk = next_chunk_ - 1;
            step.frame_outputs.resize(0, params_->config.width);
            step.register_outputs.resize(0, params_->config.width);
            return step;
        }
        return step(tail_frames, MatrixX<Scalar>(0, params_->config.width), true);
    }

    bool finalized() const { return finalized_; }
    int chunks_pushed() const { return next_chunk_ - 1; }
    int frames_seen() const { return frames_; }

    std::size_t cache_rows() const {
        std::size_t rows = 0;
        for (const MatrixX<Scalar>& k : key_cache_) rows += static_cast<std::size_t>(k.rows());
        return rows;
    }

    std::size_t cache_bytes() const {
        return 2 * cache_rows() * static_cast<std::size_t>(params_->config.width) *
               sizeof(Scalar);
    }

  private:
    StreamStep<Scalar> step(const MatrixX<Scalar>& frames, const MatrixX<Scalar>& lookahead,
                            bool commit) {
        const EncoderConfig& cfg = params_->config;
        const int d = cfg.width;
        const int c = static_cast<int>(frames.rows());
        const int l = static_cast<int>(lookahead.rows());
        const int r = cfg.registers;
        if (frames.cols() != d || (l > 0 && lookahead.cols() != d))
            throw std::invalid_argument("StreamState: width mismatch");
        if (!frames.allFinite() || !lookahead.allFinite())
            throw std::invalid_argument("StreamState: input is not finite");

        MatrixX<Scalar> x(c + l + r, d);
        x.topRows(c) = frames;
        if (l > 0) x.middleRows(c, l) = lookahead;
        if (r > 0) x.bottomRows(r) = params_->registers;

        std::vector<int> times(static_cast<std::size_t>(c + l + r), 0);
        for (int t = 0; t < c + l; ++t) times[static_cast<std::size_t>(t)] = frames_ + t + 1;
        x += pe_rows<Scalar>(times, d);

        const int heads = cfg.heads;
        const int dh = d / heads;
        const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
        for (std::size_t layer = 0; layer < params_->layers.size(); ++layer) {
            const EncoderLayerParams<Scalar>& lp = params_->layers[layer];
            MatrixX<Scalar> h = layer_norm_rows<Scalar>(x, lp.ln1_gamma, lp.ln1_beta);
            MatrixX<Scalar> q = (h * lp.Wq).rowwise() + lp.bq.row(0);
            MatrixX<Scalar> k = (h * lp.Wk).rowwise() + lp.bk.row(0);
            MatrixX<Scalar> v = (h * lp.Wv).rowwise() + lp.bv.row(0);

            const MatrixX<Scalar>& ck = key_cache_[layer];
            const MatrixX<Scalar>& cv = value_cache_[layer];
            MatrixX<Scalar> keys(ck.rows() + k.rows(), d);
            keys.topRows(ck.rows()) = ck;
            keys.bottomRows(k.rows()) = k;
            MatrixX<Scalar> values(cv.rows() + v.rows(), d);
            values.topRows(cv.rows()) = cv;
            values.bottomRows(v.rows()) = v;

            MatrixX<Scalar> attn(x.rows(), d);
            for (int head = 0; head < heads; ++head) {
                MatrixX<Scalar> scores =
                    (q.middleCols(head * dh, dh) *
                     keys.middleCols(head * dh, dh).transpose()) *
                    inv_sqrt_dh;
                attn.middleCols(head * dh, dh) =
                    masked_softmax_rows<Scalar>(scores) * values.middleCols(head * dh, dh);
            }
            x += (attn * lp.Wo).rowwise() + lp.bo.row(0);
            MatrixX<Scalar> h2 = layer_norm_rows<Scalar>(x, lp.ln2_gamma, lp.ln2_beta);
            MatrixX<Scalar> ff = gelu_exact<Scalar>((h2 * lp.W1).rowwise() + lp.b1.row(0));
            x += (ff * lp.W2).rowwise() + lp.b2.row(0);

            if (commit) {
                key_cache_[layer].conservativeResize(ck.rows() + c, d);
                key_cache_[layer].bottomRows(c) = k.topRows(c);
                value_cache_[layer].conservativeResize(cv.rows() + c, d);
                value_cache_[layer].bottomRows(c) = v.topRows(c);
            }
        }

        StreamStep<Scalar> result;
        result.chunk = next_chunk_;
        result.frame_outputs = x.topRows(c);
        result.register_outputs = x.bottomRows(r);
        ++next_chunk_;
        frames_ += c;
        return result;
    }

    const EncoderParams<Scalar>* params_;
    int chunk_ = 1;
    int lookahead_ = 0;
    int next_chunk_ = 1;
    int frames_ = 0;
    bool finalized_ = false;
    std::vector<MatrixX<Scalar>> key_cache_, value_cache_;
};

template <typename Scalar>
StreamState<Scalar> open_stream(const EncoderParams<Scalar>& params, int chunk, int lookahead) {
    return StreamState<Scalar>(params, chunk, lookahead);
}

template <typename Scalar>
struct OnlineForward {
    MatrixX<Scalar> frame_outputs;                  // frames x width, time order
    std::vector<MatrixX<Scalar>> register_outputs;  // per chunk, registers x width
};

// Reference path: materialize the whole assembled sequence, apply the online
// attention mask, run the encoder once and pull out the rows of interest.
template <typename Scalar>
OnlineForward<Scalar> online_forward(const MatrixX<Scalar>& frames,
                                     const EncoderParams<Scalar>& params,
                                     const StreamConfig& config) {
    config.validate();
    if (frames.rows() != config.frames || frames.cols() != config.width)
        throw std::invalid_argument("online_forward: frames shape mismatch");
    if (config.width != params.config.width || config.registers != params.config.registers)
        throw std::invalid_argument("online_forward: params do not match stream config");
    const ChunkLayout layout(config);
    const MatrixX<Scalar> input =
        assemble_online_input<Scalar>(frames, layout, params.registers, params.pad_embedding);
    const AttentionMask<Scalar> mask = build_online_mask<Scalar>(layout);
    const MatrixX<Scalar> y = encode<Scalar>(input, mask, layout.positions(), params);
    OnlineForward<Scalar> out;
    out.frame_outputs = extract_frame_outputs<Scalar>(y, layout);
    out.register_outputs = extract_register_outputs<Scalar>(y, layout);
    return out;
}

// Drive a StreamState over a complete signal using the standard protocol:
// push each full chunk with whatever look-ahead the signal still provides,
// then finalize with the partial tail.
template <typename Scalar>
OnlineForward<Scalar> stream_encode(const MatrixX<Scalar>& frames,
                                    const EncoderParams<Scalar>& params, int chunk,
                                    int lookahead) {
    const int total = static_cast<int>(frames.rows());
    if (total < 1) throw std::invalid_argument("stream_encode: need at least one frame");
    const int d = static_cast<int>(frames.cols());
    StreamState<Scalar> state(params, chunk, lookahead);
    OnlineForward<Scalar> out;
    out.frame_outputs.resize(total, d);
    int emitted = 0;
    const int full_chunks = total / chunk;
    for (int i = 0; i < full_chunks; ++i) {
        const int la_begin = (i + 1) * chunk;
        const int la_count = std::min(lookahead, total - la_begin);
        const MatrixX<Scalar> la = la_count > 0
                                       ? MatrixX<Scalar>(frames.middleRows(la_begin, la_count))
                                       : MatrixX<Scalar>(0, d);
        StreamStep<Scalar> step = state.push_chunk(frames.middleRows(i * chunk, chunk), la);
        out.frame_outputs.middleRows(emitted, chunk) = step.frame_outputs;
        emitted += chunk;
        out.register_outputs.push_back(std::move(step.register_outputs));
    }
    const int tail = total - full_chunks * chunk;
    StreamStep<Scalar> last = state.finalize(frames.bottomRows(tail));
    if (tail > 0) {
        out.frame_outputs.middleRows(emitted, tail) = last.frame_outputs;
        out.register_outputs.push_back(std::move(last.register_outputs));
    }
    return out;
}

}  // namespace regstream
