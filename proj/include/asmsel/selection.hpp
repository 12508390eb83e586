#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "asmsel/asm_sequence.hpp"
#include "asmsel/features.hpp"
#include "asmsel/stop_asm.hpp"

namespace asmsel {

/// Contiguous run of frames that survived blocking.
struct Fragment {
  std::string utterance_id;
  Matrix frames;
  Span origin;
};

/// Fixed-length segments of one utterance. Padding is always a zero tail, so
/// the mask of segment k is "first real_frames[k] rows are real".
struct SegmentBatch {
  std::string utterance_id;
  std::vector<Matrix> segments;
  std::vector<std::size_t> real_frames;
  std::string label;  // empty when unknown
  bool fallback = false;

  std::size_t size() const { return segments.size(); }
  std::vector<bool> pad_mask(std::size_t k) const;  // true = real frame
};

/// Drops the frames of every token whose unit is in `stop.selected`. Frames
/// past the end of the sequence (ignored by fixed segmentation) are kept.
std::vector<Fragment> block_frames(const FrameMatrix& fm, const AsmSequence& seq, const StopAsmSet& stop);

/// Chops each fragment into seg_len pieces and zero-pads the last one.
SegmentBatch resegment_pad(const std::vector<Fragment>& frags, std::size_t seg_len = 20,
                           std::string utterance_id = {});

/// Segmentation of the whole, unfiltered utterance.
SegmentBatch baseline_segments(const FrameMatrix& fm, std::size_t seg_len = 20);

/// block_frames + resegment_pad; falls back to the baseline segmentation
/// (flagged) when every frame was blocked.
SegmentBatch select_utterance(const FrameMatrix& fm, const AsmSequence& seq, const StopAsmSet& stop,
                              std::size_t seg_len = 20);

/// Segment store: `<id>.asmf` per utterance holding one ASMF1 record per
/// segment, `segments.tsv` rows `id<TAB>count<TAB>fallback<TAB>label`, and
/// `masks.tsv` rows `id<TAB>real,real,...`.
void write_segment_store(const std::filesystem::path& dir, const std::vector<SegmentBatch>& batches);
std::vector<SegmentBatch> read_segment_store(const std::filesystem::path& dir);

}  // namespace asmsel
