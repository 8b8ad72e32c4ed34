#pragma once

#include <limits>
#include <stdexcept>

#include "regstream/layout.hpp"

namespace regstream {

// Additive attention masks over assembled slots: 0 where attention is
// allowed, -inf where it is forbidden.
template <typename Scalar>
using AttentionMask = MatrixX<Scalar>;

/// Visibility rule for the online mode: a query belonging to chunk i (frame,
// look-ahead and register queries alike) may attend to frames of chunks
// j <= i, to chunk i's look-ahead and to chunk i's registers. Pad keys are
// never attended.
inline bool attention_allowed(const SlotDescriptor& query, const SlotDescriptor& key) {
    switch (key.kind) {
        case SlotKind::Pad: return false;
        case SlotKind::Frame: return key.chunk <= query.chunk;
        case SlotKind::LookAhead:
        case SlotKind::Register: return key.chunk == query.chunk;
    }
    return false;
}

// Online-mode mask, built block-wise: all query rows of chunk i share one
// allowed-column pattern (real frames of chunks <= i, the real look-ahead
// prefix of chunk i, the registers of chunk i).
template <typename Scalar>
AttentionMask<Scalar> build_online_mask(const ChunkLayout& layout) {
    const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
    const StreamConfig& cfg = layout.config();
    const int n = layout.num_chunks();
    const int size = layout.size();
    const int frame_block = n * cfg.chunk;
    const int la_block = n * cfg.lookahead;

    AttentionMask<Scalar> mask = AttentionMask<Scalar>::Constant(size, size, neg_inf);
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> pattern(size);
    for (int i = 1; i <= n; ++i) {
        pattern.setConstant(neg_inf);
        const int real_frames = std::min(i * cfg.chunk, cfg.frames);
        pattern.head(real_frames).setZero();
        const int real_la = std::clamp(cfg.frames - i * cfg.chunk, 0, cfg.lookahead);
        if (real_la > 0)
            pattern.segment(frame_block + (i - 1) * cfg.lookahead, real_la).setZero();
        if (cfg.registers > 0)
            pattern.segment(frame_block + la_block + (i - 1) * cfg.registers, cfg.registers)
                .setZero();

        // frame rows of chunk i
        mask.middleRows((i - 1) * cfg.chunk, cfg.chunk).rowwise() = pattern;
        // look-ahead rows of chunk i
        if (cfg.lookahead > 0)
            mask.middleRows(frame_block + (i - 1) * cfg.lookahead, cfg.lookahead).rowwise() =
                pattern;
        // register rows of chunk i
        if (cfg.registers > 0)
            mask.middleRows(frame_block + la_block + (i - 1) * cfg.registers, cfg.registers)
                .rowwise() = pattern;
    }
    return mask;
}

// Offline mode: full-context attention over the real frames.
template <typename Scalar>
AttentionMask<Scalar> build_offline_mask(int frames) {
    if (frames < 1) throw std::invalid_argument("build_offline_mask: frames must be >= 1");
    return AttentionMask<Scalar>::Zero(frames, frames);
}

// Every query row must keep at least one allowed key.
template <typename Scalar>
bool mask_rows_have_allowed(const AttentionMask<Scalar>& mask) {
    for (Eigen::Index r = 0; r < mask.rows(); ++r)
        if (!(mask.row(r).maxCoeff() == Scalar(0))) return false;
    return true;
}

}  // namespace regstream
