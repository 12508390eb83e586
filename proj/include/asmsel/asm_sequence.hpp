#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace asmsel {

/// Half-open frame range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  bool operator==(const Span&) const = default;
};

struct Token {
  std::size_t unit = 0;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  std::size_t length() const { return end - start; }
  bool operator==(const Token&) const = default;
};

/// Ordered, contiguous tokens covering frames [0, total_frames()).
struct AsmSequence {
  std::string utterance_id;
  std::vector<Token> tokens;

  std::size_t total_frames() const { return tokens.empty() ? 0 : tokens.back().end; }

  /// Per-frame unit label over [0, total_frames()).
  std::vector<std::size_t> frame_labels() const;

  bool operator==(const AsmSequence&) const = default;
};

/// Throws ContractError unless tokens are non-empty, contiguous from frame 0
/// and every unit id is below `num_units` (when non-zero).
void validate_sequence(const AsmSequence& seq, std::size_t num_units = 0);

/// Line format: `utterance_id<TAB>unit:start:end,unit:start:end,...`
std::string format_sequences(const std::vector<AsmSequence>& seqs);
std::vector<AsmSequence> parse_sequences(const std::string& text);
void write_sequences(const std::filesystem::path& path, const std::vector<AsmSequence>& seqs);
std::vector<AsmSequence> read_sequences(const std::filesystem::path& path);

}  // namespace asmsel
