#include "asmsel/selection.hpp"

#include <algorithm>
#include <sstream>

#include "asmsel/binary_io.hpp"
#include "asmsel/common.hpp"

namespace asmsel {

std::vector<bool> SegmentBatch::pad_mask(std::size_t k) const {
  std::vector<bool> mask(segments[k].rows(), false);
  std::fill_n(mask.begin(), real_frames[k], true);
  return mask;
}

std::vector<Fragment> block_frames(const FrameMatrix& fm, const AsmSequence& seq, const StopAsmSet& stop) {
  if (seq.utterance_id != fm.utterance_id) {
    throw ContractError("sequence " + seq.utterance_id + " applied to features of " + fm.utterance_id);
  }
  validate_sequence(seq);
  const std::size_t T = fm.num_frames();
  if (seq.total_frames() > T) {
    throw ContractError("sequence of " + seq.utterance_id + " covers " + std::to_string(seq.total_frames()) +
                        " frames but the utterance has " + std::to_string(T));
  }

  std::vector<Span> keep;
  auto extend = [&](std::size_t a, std::size_t b) {
    if (!keep.empty() && keep.back().end == a) keep.back().end = b;
    else keep.push_back({a, b});
  };
  for (const Token& tok : seq.tokens) {
    if (!stop.contains(tok.unit)) extend(tok.start, tok.end);
  }
  if (seq.total_frames() < T) extend(seq.total_frames(), T);

  std::vector<Fragment> frags;
  frags.reserve(keep.size());
  for (const Span& sp : keep) frags.push_back({fm.utterance_id, fm.frames.slice_rows(sp.start, sp.end), sp});
  return frags;
}

SegmentBatch resegment_pad(const std::vector<Fragment>& frags, std::size_t seg_len, std::string utterance_id) {
  if (seg_len == 0) throw ContractError("seg_len must be positive");
  SegmentBatch batch;
  batch.utterance_id = utterance_id.empty() && !frags.empty() ? frags.front().utterance_id : std::move(utterance_id);
  for (const Fragment& frag : frags) {
    const std::size_t len = frag.frames.rows();
    const std::size_t F = frag.frames.cols();
    for (std::size_t start = 0; start < len; start += seg_len) {
      const std::size_t real = std::min(seg_len, len - start);
      Matrix seg(seg_len, F, 0.0);
      std::copy_n(frag.frames.data().begin() + static_cast<std::ptrdiff_t>(start * F), real * F,
                  seg.data().begin());
      batch.segments.push_back(std::move(seg));
      batch.real_frames.push_back(real);
    }
  }
  return batch;
}

SegmentBatch baseline_segments(const FrameMatrix& fm, std::size_t seg_len) {
  std::vector<Fragment> whole{{fm.utterance_id, fm.frames, {0, fm.num_frames()}}};
  return resegment_pad(whole, seg_len, fm.utterance_id);
}

SegmentBatch select_utterance(const FrameMatrix& fm, const AsmSequence& seq, const StopAsmSet& stop,
                              std::size_t seg_len) {
  const auto frags = block_frames(fm, seq, stop);
  if (frags.empty()) {
    SegmentBatch batch = baseline_segments(fm, seg_len);
    batch.fallback = true;
    return batch;
  }
  return resegment_pad(frags, seg_len, fm.utterance_id);
}

void write_segment_store(const std::filesystem::path& dir, const std::vector<SegmentBatch>& batches) {
  std::filesystem::create_directories(dir);
  std::string manifest, masks;
  for (const auto& b : batches) {
    std::string records;
    for (std::size_t k = 0; k < b.size(); ++k) {
      FrameMatrix fm;
      fm.utterance_id = b.utterance_id + "#" + std::to_string(k);
      fm.frames = b.segments[k];
      records += encode_frames(fm);
    }
    write_file_atomic(dir / (b.utterance_id + ".asmf"), records);
    manifest += b.utterance_id + '\t' + std::to_string(b.size()) + '\t' + (b.fallback ? "1" : "0") + '\t' +
                b.label + '\n';
    masks += b.utterance_id + '\t';
    for (std::size_t k = 0; k < b.size(); ++k) masks += (k ? "," : "") + std::to_string(b.real_frames[k]);
    masks += '\n';
  }
  write_file_atomic(dir / "masks.tsv", masks);
  write_file_atomic(dir / "segments.tsv", manifest);
}

std::vector<SegmentBatch> read_segment_store(const std::filesystem::path& dir) {
  std::vector<SegmentBatch> batches;
  std::istringstream manifest(read_file(dir / "segments.tsv"));
  std::istringstream masks(read_file(dir / "masks.tsv"));
  std::string line, mask_line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    SegmentBatch b;
    std::string count, fallback;
    std::getline(row, b.utterance_id, '\t');
    std::getline(row, count, '\t');
    std::getline(row, fallback, '\t');
    std::getline(row, b.label);
    b.fallback = fallback == "1";
    if (!std::getline(masks, mask_line) || mask_line.rfind(b.utterance_id + '\t', 0) != 0) {
      throw ContractError("masks.tsv is out of step with segments.tsv at " + b.utterance_id);
    }
    std::istringstream lens(mask_line.substr(b.utterance_id.size() + 1));
    std::string len;
    while (std::getline(lens, len, ',')) b.real_frames.push_back(std::stoul(len));
    for (auto& rec : read_frame_records(dir / (b.utterance_id + ".asmf"))) b.segments.push_back(std::move(rec.frames));
    if (b.segments.size() != std::stoul(count) || b.real_frames.size() != b.segments.size()) {
      throw ContractError("segment count mismatch for " + b.utterance_id);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace asmsel
