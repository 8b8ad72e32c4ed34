#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "regstream/dense.hpp"

namespace regstream {

// ─── Stream configuration ────────────────────────────────────────────────────

// One dual-mode pass is governed by the tuple (frames, chunk, lookahead,
// registers, width) plus the real-time frame interval used for latency
// accounting.
struct StreamConfig {
    int frames = 1;        // total frame count of the utterance
    int chunk = 1;         // frames per streaming chunk
    int lookahead = 0;     // future frames appended to each chunk
    int registers = 0;     // learnable register tokens per chunk
    int width = 1;         // model width d
    double frame_ms = 20.0;

    int num_chunks() const;         // ceil(frames / chunk), >= 1
    void validate() const;          // throws std::invalid_argument
};

// ─── Slots ───────────────────────────────────────────────────────────────────

enum class SlotKind { Frame, LookAhead, Register, Pad };

const char* slot_kind_name(SlotKind kind);

// Identity of one position in the assembled online sequence. `time` is the
// original 1-based frame index (for Pad, the out-of-range index it stands
// for); `register_index` is 1-based and only meaningful for Register slots.
struct SlotDescriptor {
    SlotKind kind = SlotKind::Frame;
    int chunk = 0;
    int time = 0;
    int register_index = 0;

    bool operator==(const SlotDescriptor&) const = default;
};

// ─── Chunk / look-ahead ranges ───────────────────────────────────────────────

// A contiguous 1-based inclusive time range with a count of trailing
// positions that fall beyond the last real frame.
struct TimeRange {
    int begin = 0;
    int end = 0;     // inclusive; end < begin means empty
    int pads = 0;    // trailing positions with time > frames

    int size() const { return end < begin ? 0 : end - begin + 1; }
    int real() const { return size() - pads; }
};

// Tile [1 .. N*chunk] into per-chunk frame ranges; only the last chunk may
// carry pads. Throws std::invalid_argument for frames < 1 or chunk < 1.
std::vector<TimeRange> partition_chunks(int frames, int chunk);

// Per-chunk look-ahead ranges [i*chunk+1 .. i*chunk+lookahead]; positions
// beyond `frames` are counted as pads.
std::vector<TimeRange> lookahead_ranges(int frames, int chunk, int lookahead);

// ─── Assembled-sequence layout ───────────────────────────────────────────────

// Bijective map between assembled online-sequence positions and slot
// identities. Block order: all chunk frames, then all look-ahead segments,
// then all register blocks.
class ChunkLayout {
  public:
    explicit ChunkLayout(const StreamConfig& config);

    const StreamConfig& config() const { return config_; }
    int num_chunks() const { return num_chunks_; }
    int size() const { return static_cast<int>(slots_.size()); }
    const std::vector<SlotDescriptor>& slots() const { return slots_; }
    const SlotDescriptor& slot(int position) const;

    // Inverse map; throws if the descriptor names no slot of this layout.
    int index_of(const SlotDescriptor& slot) const;

    // Direct block addressing (0-based positions).
    int frame_slot(int time) const;                    // time in [1 .. N*C]
    int lookahead_slot(int chunk, int offset) const;   // offset in [0 .. L)
    int register_slot(int chunk, int register_index) const;  // index in [1 .. R]

    // Per-slot original time index; 0 for registers. Used for positional
    // encodings.
    std::vector<int> positions() const;

    // Row index into the stacked source matrix [frames; registers; pad] that
    // each assembled slot copies from.
    std::vector<int> assembly_indices() const;

    // Assembled positions holding the output row for each real frame t,
    // t = 1..frames, in order.
    std::vector<int> frame_output_indices() const;

    // Assembled positions of chunk i's register block, in register order.
    std::vector<int> register_indices(int chunk) const;

  private:
    StreamConfig config_;
    int num_chunks_ = 0;
    std::vector<SlotDescriptor> slots_;
};

// One slot per line: "position,kind,chunk,time" with '-' for register times.
std::string dump_layout(const ChunkLayout& layout);

// ─── Assembly / extraction ───────────────────────────────────────────────────

// Build the online-mode input sequence: frame and look-ahead slots copy the
// frame row at their time index, pad slots copy the pad embedding, each
// chunk's register block copies the shared register vectors.
template <typename Scalar>
MatrixX<Scalar> assemble_online_input(const MatrixX<Scalar>& frames,
                                      const ChunkLayout& layout,
                                      const MatrixX<Scalar>& registers,
                                      const MatrixX<Scalar>& pad_embedding) {
    const StreamConfig& cfg = layout.config();
    if (frames.rows() != cfg.frames || frames.cols() != cfg.width)
        throw std::invalid_argument("assemble_online_input: frames shape mismatch");
    if (registers.rows() != cfg.registers || (cfg.registers > 0 && registers.cols() != cfg.width))
        throw std::invalid_argument("assemble_online_input: registers shape mismatch");
    if (pad_embedding.rows() != 1 || pad_embedding.cols() != cfg.width)
        throw std::invalid_argument("assemble_online_input: pad embedding shape mismatch");

    MatrixX<Scalar> stacked(cfg.frames + cfg.registers + 1, cfg.width);
    stacked.topRows(cfg.frames) = frames;
    if (cfg.registers > 0) stacked.middleRows(cfg.frames, cfg.registers) = registers;
    stacked.bottomRows(1) = pad_embedding;

    const std::vector<int> sources = layout.assembly_indices();
    MatrixX<Scalar> assembled(layout.size(), cfg.width);
    for (int p = 0; p < layout.size(); ++p) assembled.row(p) = stacked.row(sources[p]);
    return assembled;
}

// Select the frame-slot rows of an encoder output, aligned to original time
// indices; look-ahead duplicates, registers and pads are dropped.
template <typename Scalar>
MatrixX<Scalar> extract_frame_outputs(const MatrixX<Scalar>& encoder_output,
                                      const ChunkLayout& layout) {
    if (encoder_output.rows() != layout.size())
        throw std::invalid_argument("extract_frame_outputs: row count does not match layout");
    const std::vector<int> rows = layout.frame_output_indices();
    MatrixX<Scalar> out(static_cast<int>(rows.size()), encoder_output.cols());
    for (int t = 0; t < static_cast<int>(rows.size()); ++t)
        out.row(t) = encoder_output.row(rows[t]);
    return out;
}

// Per-chunk register output blocks U_i, in chunk order; R = 0 yields empty
// blocks.
template <typename Scalar>
std::vector<MatrixX<Scalar>> extract_register_outputs(const MatrixX<Scalar>& encoder_output,
                                                      const ChunkLayout& layout) {
    if (encoder_output.rows() != layout.size())
        throw std::invalid_argument("extract_register_outputs: row count does not match layout");
    std::vector<MatrixX<Scalar>> blocks;
    blocks.reserve(layout.num_chunks());
    for (int i = 1; i <= layout.num_chunks(); ++i) {
        const std::vector<int> rows = layout.register_indices(i);
        MatrixX<Scalar> block(static_cast<int>(rows.size()), encoder_output.cols());
        for (int r = 0; r < static_cast<int>(rows.size()); ++r)
            block.row(r) = encoder_output.row(rows[r]);
        blocks.push_back(std::move(block));
    }
    return blocks;
}

}  // namespace regstream
