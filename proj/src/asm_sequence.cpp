#include "asmsel/asm_sequence.hpp"

#include <charconv>
#include <sstream>

#include "asmsel/binary_io.hpp"
#include "asmsel/common.hpp"

namespace asmsel {

std::vector<std::size_t> AsmSequence::frame_labels() const {
  std::vector<std::size_t> labels(total_frames());
  for (const auto& tok : tokens) {
    for (std::size_t t = tok.start; t < tok.end; ++t) labels[t] = tok.unit;
  }
  return labels;
}

void validate_sequence(const AsmSequence& seq, std::size_t num_units) {
  if (seq.tokens.empty()) throw ContractError("utterance " + seq.utterance_id + " has no tokens");
  std::size_t expect = 0;
  for (const auto& tok : seq.tokens) {
    if (tok.start != expect || tok.end <= tok.start) {
      throw ContractError("utterance " + seq.utterance_id + ": token " + std::to_string(tok.unit) +
                          " [" + std::to_string(tok.start) + "," + std::to_string(tok.end) +
                          ") breaks contiguity at frame " + std::to_string(expect));
    }
    if (num_units != 0 && tok.unit >= num_units) {
      throw ContractError("utterance " + seq.utterance_id + ": unit " + std::to_string(tok.unit) +
                          " out of range (D = " + std::to_string(num_units) + ")");
    }
    expect = tok.end;
  }
}

std::string format_sequences(const std::vector<AsmSequence>& seqs) {
  std::string out;
  for (const auto& seq : seqs) {
    out += seq.utterance_id;
    out += '\t';
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
      const auto& t = seq.tokens[i];
      if (i) out += ',';
      out += std::to_string(t.unit) + ':' + std::to_string(t.start) + ':' + std::to_string(t.end);
    }
    out += '\n';
  }
  return out;
}

namespace {

std::size_t parse_size(std::string_view s, const std::string& where) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ContractError("malformed token field '" + std::string(s) + "' in " + where);
  }
  return v;
}

}  // namespace

std::vector<AsmSequence> parse_sequences(const std::string& text) {
  std::vector<AsmSequence> seqs;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ContractError("sequence line without tab: " + line.substr(0, 40));
    AsmSequence seq;
    seq.utterance_id = line.substr(0, tab);
    std::string_view rest(line);
    rest.remove_prefix(tab + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view item = rest.substr(0, comma);
      const auto c1 = item.find(':');
      const auto c2 = item.find(':', c1 == std::string_view::npos ? c1 : c1 + 1);
      if (c1 == std::string_view::npos || c2 == std::string_view::npos) {
        throw ContractError("malformed token '" + std::string(item) + "' in " + seq.utterance_id);
      }
      Token tok;
      tok.unit = parse_size(item.substr(0, c1), seq.utterance_id);
      tok.start = parse_size(item.substr(c1 + 1, c2 - c1 - 1), seq.utterance_id);
      tok.end = parse_size(item.substr(c2 + 1), seq.utterance_id);
      seq.tokens.push_back(tok);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    validate_sequence(seq);
    seqs.push_back(std::move(seq));
  }
  return seqs;
}

void write_sequences(const std::filesystem::path& path, const std::vector<AsmSequence>& seqs) {
  write_file_atomic(path, format_sequences(seqs));
}

std::vector<AsmSequence> read_sequences(const std::filesystem::path& path) {
  return parse_sequences(read_file(path));
}

}  // namespace asmsel
