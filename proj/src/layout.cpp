#include "regstream/layout.hpp"

#include <sstream>
#include <stdexcept>

namespace regstream {

int StreamConfig::num_chunks() const {
    return (frames + chunk - 1) / chunk;
}

void StreamConfig::validate() const {
    if (frames < 1) throw std::invalid_argument("StreamConfig: frames must be >= 1");
    if (chunk < 1) throw std::invalid_argument("StreamConfig: chunk must be >= 1");
    if (lookahead < 0) throw std::invalid_argument("StreamConfig: lookahead must be >= 0");
    if (registers < 0) throw std::invalid_argument("StreamConfig: registers must be >= 0");
    if (width < 1) throw std::invalid_argument("StreamConfig: width must be >= 1");
    if (frame_ms <= 0.0) throw std::invalid_argument("StreamConfig: frame_ms must be > 0");
}

const char* slot_kind_name(SlotKind kind) {
    switch (kind) {
        case SlotKind::Frame: return "frame";
        case SlotKind::LookAhead: return "lookahead";
        case SlotKind::Register: return "register";
        case SlotKind::Pad: return "pad";
    }
    return "?";
}

std::vector<TimeRange> partition_chunks(int frames, int chunk) {
    if (frames < 1) throw std::invalid_argument("partition_chunks: frames must be >= 1");
    if (chunk < 1) throw std::invalid_argument("partition_chunks: chunk must be >= 1");
    const int n = (frames + chunk - 1) / chunk;
    std::vector<TimeRange> ranges;
    ranges.reserve(n);
    for (int i = 1; i <= n; ++i) {
        TimeRange r;
        r.begin = (i - 1) * chunk + 1;
        r.end = i * chunk;
        r.pads = r.end > frames ? r.end - frames : 0;
        ranges.push_back(r);
    }
    return ranges;
}

std::vector<TimeRange> lookahead_ranges(int frames, int chunk, int lookahead) {
    if (frames < 1) throw std::invalid_argument("lookahead_ranges: frames must be >= 1");
    if (chunk < 1) throw std::invalid_argument("lookahead_ranges: chunk must be >= 1");
    if (lookahead < 0) throw std::invalid_argument("lookahead_ranges: lookahead must be >= 0");
    const int n = (frames + chunk - 1) / chunk;
    std::vector<TimeRange> ranges;
    ranges.reserve(n);
    for (int i = 1; i <= n; ++i) {
        TimeRange r;
        r.begin = i * chunk + 1;
        r.end = i * chunk + lookahead;
        if (r.end >= r.begin) {
            const int beyond = r.end - frames;
            r.pads = beyond > 0 ? std::min(beyond, r.size()) : 0;
        }
        ranges.push_back(r);
    }
    return ranges;
}

ChunkLayout::ChunkLayout(const StreamConfig& config) : config_(config) {
    config_.validate();
    num_chunks_ = config_.num_chunks();
    const int n = num_chunks_;
    const int c = config_.chunk;
    const int l = config_.lookahead;
    const int r = config_.registers;
    slots_.reserve(static_cast<std::size_t>(n) * (c + l + r));

    // frame blocks
    for (int i = 1; i <= n; ++i) {
        for (int k = 0; k < c; ++k) {
            const int t = (i - 1) * c + 1 + k;
            slots_.push_back({t <= config_.frames ? SlotKind::Frame : SlotKind::Pad, i, t, 0});
        }
    }
    // look-ahead blocks
    for (int i = 1; i <= n; ++i) {
        for (int k = 0; k < l; ++k) {
            const int t = i * c + 1 + k;
            slots_.push_back({t <= config_.frames ? SlotKind::LookAhead : SlotKind::Pad, i, t, 0});
        }
    }
    // register blocks
    for (int i = 1; i <= n; ++i)
        for (int k = 1; k <= r; ++k)
            slots_.push_back({SlotKind::Register, i, 0, k});
}

const SlotDescriptor& ChunkLayout::slot(int position) const {
    if (position < 0 || position >= size())
        throw std::out_of_range("ChunkLayout::slot: position out of range");
    return slots_[position];
}

int ChunkLayout::frame_slot(int time) const {
    if (time < 1 || time > num_chunks_ * config_.chunk)
        throw std::out_of_range("ChunkLayout::frame_slot: time out of range");
    return time - 1;
}

int ChunkLayout::lookahead_slot(int chunk, int offset) const {
    if (chunk < 1 || chunk > num_chunks_ || offset < 0 || offset >= config_.lookahead)
        throw std::out_of_range("ChunkLayout::lookahead_slot: out of range");
    return num_chunks_ * config_.chunk + (chunk - 1) * config_.lookahead + offset;
}

int ChunkLayout::register_slot(int chunk, int register_index) const {
    if (chunk < 1 || chunk > num_chunks_ || register_index < 1 || register_index > config_.registers)
        throw std::out_of_range("ChunkLayout::register_slot: out of range");
    return num_chunks_ * (config_.chunk + config_.lookahead) +
           (chunk - 1) * config_.registers + (register_index - 1);
}

int ChunkLayout::index_of(const SlotDescriptor& s) const {
    int position = -1;
    switch (s.kind) {
        case SlotKind::Register:
            position = register_slot(s.chunk, s.register_index);
            break;
        case SlotKind::Frame:
            position = frame_slot(s.time);
            break;
        case SlotKind::LookAhead:
            position = lookahead_slot(s.chunk, s.time - s.chunk * config_.chunk - 1);
            break;
        case SlotKind::Pad:
            // Pads live either in the frame block (time within the chunk's
            // frame range) or in the look-ahead block (time beyond it).
            if (s.time <= s.chunk * config_.chunk)
                position = frame_slot(s.time);
            else
                position = lookahead_slot(s.chunk, s.time - s.chunk * config_.chunk - 1);
            break;
    }
    if (position < 0 || !(slots_[position] == s))
        throw std::invalid_argument("ChunkLayout::index_of: descriptor names no slot");
    return position;
}

std::vector<int> ChunkLayout::positions() const {
    std::vector<int> pos(slots_.size());
    for (std::size_t p = 0; p < slots_.size(); ++p)
        pos[p] = slots_[p].kind == SlotKind::Register ? 0 : slots_[p].time;
    return pos;
}

std::vector<int> ChunkLayout::assembly_indices() const {
    const int t_total = config_.frames;
    const int r_total = config_.registers;
    std::vector<int> idx(slots_.size());
    for (std::size_t p = 0; p < slots_.size(); ++p) {
        const SlotDescriptor& s = slots_[p];
        switch (s.kind) {
            case SlotKind::Frame:
            case SlotKind::LookAhead: idx[p] = s.time - 1; break;
            case SlotKind::Register: idx[p] = t_total + s.register_index - 1; break;
            case SlotKind::Pad: idx[p] = t_total + r_total; break;
        }
    }
    return idx;
}

std::vector<int> ChunkLayout::frame_output_indices() const {
    // Frame blocks tile times 1..N*C in order, so frame t sits at slot t-1.
    std::vector<int> rows(config_.frames);
    for (int t = 1; t <= config_.frames; ++t) rows[t - 1] = t - 1;
    return rows;
}

std::vector<int> ChunkLayout::register_indices(int chunk) const {
    if (chunk < 1 || chunk > num_chunks_)
        throw std::out_of_range("ChunkLayout::register_indices: chunk out of range");
    std::vector<int> rows(config_.registers);
    for (int k = 1; k <= config_.registers; ++k) rows[k - 1] = register_slot(chunk, k);
    return rows;
}

std::string dump_layout(const ChunkLayout& layout) {
    std::ostringstream os;
    for (int p = 0; p < layout.size(); ++p) {
        const SlotDescriptor& s = layout.slot(p);
        os << p << ',' << slot_kind_name(s.kind) << ',' << s.chunk << ',';
        if (s.kind == SlotKind::Register)
            os << '-';
        else
            os << s.time;
        os << '\n';
    }
    return os.str();
}

}  // namespace regstream
