#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "asmsel/asm_sequence.hpp"
#include "asmsel/features.hpp"
#include "asmsel/rng.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("asmsel_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Hand-assembled WAV: format 1 (PCM) or 3 (float), interleaved payload.
inline std::string wav_bytes(int format, int channels, int rate, int bits, const std::string& payload) {
  std::string out = "RIFF";
  put_le(out, 36 + payload.size(), 4);
  out += "WAVEfmt ";
  put_le(out, 16, 4);
  put_le(out, static_cast<std::uint64_t>(format), 2);
  put_le(out, static_cast<std::uint64_t>(channels), 2);
  put_le(out, static_cast<std::uint64_t>(rate), 4);
  put_le(out, static_cast<std::uint64_t>(rate * channels * bits / 8), 4);
  put_le(out, static_cast<std::uint64_t>(channels * bits / 8), 2);
  put_le(out, static_cast<std::uint64_t>(bits), 2);
  out += "data";
  put_le(out, payload.size(), 4);
  out += payload;
  return out;
}

inline void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

inline asmsel::Waveform mono(std::vector<double> x, int rate) {
  asmsel::Waveform w;
  w.channels.push_back(std::move(x));
  w.sample_rate = rate;
  return w;
}

inline asmsel::FrameMatrix random_frames(asmsel::Rng& rng, std::size_t T, std::size_t F, std::string id = "u",
                                         std::uint64_t fp = 0) {
  asmsel::FrameMatrix fm;
  fm.utterance_id = std::move(id);
  fm.frames = asmsel::Matrix(T, F);
  for (double& v : fm.frames.data()) v = rng.normal();
  fm.fingerprint = fp;
  return fm;
}

// Contiguous tokens from a list of (unit, length).
inline asmsel::AsmSequence make_seq(std::string id,
                                    const std::vector<std::pair<std::size_t, std::size_t>>& units) {
  asmsel::AsmSequence seq;
  seq.utterance_id = std::move(id);
  std::size_t t = 0;
  for (auto [u, len] : units) {
    seq.tokens.push_back({u, t, t + len});
    t += len;
  }
  return seq;
}

}  // namespace testutil
