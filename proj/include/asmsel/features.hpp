#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "asmsel/matrix.hpp"

namespace asmsel {

/// Decoded PCM audio. Samples are normalized to [-1, 1]; one vector per
/// channel, all of equal length.
struct Waveform {
  std::vector<std::vector<double>> channels;
  int sample_rate = 0;

  std::size_t num_channels() const { return channels.size(); }
  std::size_t length() const { return channels.empty() ? 0 : channels[0].size(); }
};

enum class FeatureKind { kLmfb, kMfcc };

struct FeatureConfig {
  int sample_rate = 48000;
  int n_fft = 2048;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 128;
  double log_floor = 1e-10;
  FeatureKind kind = FeatureKind::kLmfb;
  int n_ceps = 20;

  std::size_t window_samples() const;
  std::size_t hop_samples() const;
  std::size_t feature_dim() const {
    return kind == FeatureKind::kLmfb ? static_cast<std::size_t>(n_mels)
                                      : static_cast<std::size_t>(n_ceps);
  }

  /// Throws ContractError when fields are inconsistent.
  void validate() const;
  std::uint64_t fingerprint() const;
};

/// Per-utterance T x F feature frames.
struct FrameMatrix {
  std::string utterance_id;
  Matrix frames;
  std::uint64_t fingerprint = 0;

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }
};

Waveform load_audio(const std::filesystem::path& path, int expected_rate);

/// 16-bit PCM writer, used by the synthetic waveform mode and tests.
void write_wav_pcm16(const std::filesystem::path& path, const Waveform& w);

/// Arithmetic mean of the channels.
Waveform downmix(const Waveform& w);

/// floor((len - win) / hop) + 1, or 0 when len < win.
std::size_t frame_count(std::size_t len, std::size_t win, std::size_t hop);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// n_mels x (n_fft/2 + 1) triangular filters, unit peak, 0 Hz to Nyquist.
Matrix mel_filterbank(int n_mels, int n_fft, int sample_rate);

/// Periodic Hann window.
std::vector<double> hann_window(std::size_t n);

/// Mel filter energies (before the log) of a mono waveform: T x n_mels.
Matrix mel_energies(const Waveform& mono, const FeatureConfig& cfg);

FrameMatrix compute_features(const Waveform& mono, const FeatureConfig& cfg,
                             std::string utterance_id = {});

/// "ASMF1" container: magic, utterance id, T, F, then T*F float32 row-major.
std::string encode_frames(const FrameMatrix& fm);
FrameMatrix decode_frames(std::string bytes);
void write_frames(const std::filesystem::path& path, const FrameMatrix& fm);
FrameMatrix read_frames(const std::filesystem::path& path);

/// A file may hold several ASMF1 records back to back (segment stores).
std::vector<FrameMatrix> read_frame_records(const std::filesystem::path& path);

}  // namespace asmsel
