#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kbca/tape.hpp"
#include "kbca/tensor.hpp"

namespace kbca {

/// One aligned word: frames [start, end), end exclusive, so end - start
/// is exactly the frame count and the pooled value is a true mean.
struct AlignedWord {
    std::string word;
    std::size_t start_frame = 0;
    std::size_t end_frame = 0;
};

struct AlignmentSpec {
    std::string utt;
    std::vector<AlignedWord> segments;

    void validate(std::size_t total_frames) const {
        std::size_t prev_end = 0;
        bool first = true;
        for (const auto& s : segments) {
            if (s.end_frame <= s.start_frame)
                throw DataError("alignment '" + utt + "': empty segment for word '" + s.word + "'");
            if (!first && s.start_frame < prev_end)
                throw DataError("alignment '" + utt + "': overlapping or unsorted segments");
            if (s.end_frame > total_frames)
                throw DataError("alignment '" + utt + "': frame index " +
                                std::to_string(s.end_frame) + " exceeds frame count " +
                                std::to_string(total_frames));
            prev_end = s.end_frame;
            first = false;
        }
    }

    std::vector<std::string> words() const {
        std::vector<std::string> out;
        out.reserve(segments.size());
        for (const auto& s : segments) out.push_back(s.word);
        return out;
    }

    std::vector<std::pair<std::size_t, std::size_t>> ranges() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        out.reserve(segments.size());
        for (const auto& s : segments) out.emplace_back(s.start_frame, s.end_frame);
        return out;
    }
};

/// Forced-alignment pooling: row k is the mean of frames [s_k, e_k).
inline Tensor pool_words(const Tensor& frames, const AlignmentSpec& align) {
    align.validate(frames.rows());
    if (align.segments.empty()) throw DataError("pool_words: no segments");
    Tensor out({align.segments.size(), frames.cols()});
    for (std::size_t k = 0; k < align.segments.size(); ++k) {
        const auto& s = align.segments[k];
        double inv = 1.0 / static_cast<double>(s.end_frame - s.start_frame);
        for (std::size_t f = s.start_frame; f < s.end_frame; ++f)
            for (std::size_t j = 0; j < frames.cols(); ++j) out(k, j) += frames(f, j) * inv;
    }
    return out;
}

/// Tape route of the same pooling, for gradient flow through layer weights.
inline Var pool_words(Var frames, const AlignmentSpec& align) {
    align.validate(frames.tape->value(frames).rows());
    return segment_mean(frames, align.ranges());
}

/// Softmax-weighted combination of encoder layers with trainable logits.
inline Var layer_average(const std::vector<Tensor>& layers, Var layer_logits) {
    if (layers.empty()) throw ShapeError("layer_average: no layers");
    Var w = softmax_rows(layer_logits);
    return weighted_sum_const(layers, w);
}

/// Plain evaluation for tests and single-pass use.
inline Tensor layer_average(const std::vector<Tensor>& layers, const std::vector<double>& logits) {
    Tape tape;
    Var lv = tape.leaf(Tensor::row(logits), false);
    Var out = layer_average(layers, lv);
    return tape.value(out);
}

} // namespace kbca
