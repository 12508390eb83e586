#include "asmsel/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <mutex>
#include <numbers>
#include <sstream>

#include "asmsel/binary_io.hpp"
#include "asmsel/common.hpp"

namespace asmsel {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const char* p) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(p[0]) |
                                    (static_cast<unsigned char>(p[1]) << 8));
}

std::uint32_t le32(const char* p) {
  return static_cast<std::uint32_t>(le16(p)) |
         (static_cast<std::uint32_t>(le16(p + 2)) << 16);
}

// FFTW planning is not thread safe; execution with new arrays is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::size_t FeatureConfig::window_samples() const {
  return static_cast<std::size_t>(std::lround(sample_rate * window_ms / 1000.0));
}

std::size_t FeatureConfig::hop_samples() const {
  return static_cast<std::size_t>(std::lround(sample_rate * hop_ms / 1000.0));
}

void FeatureConfig::validate() const {
  if (sample_rate <= 0) throw ContractError("sample_rate must be positive");
  if (n_fft <= 0 || n_mels <= 0) throw ContractError("n_fft and n_mels must be positive");
  if (window_ms <= 0 || hop_ms <= 0) throw ContractError("window_ms and hop_ms must be positive");
  if (hop_ms > window_ms) throw ContractError("hop_ms must not exceed window_ms");
  if (window_samples() == 0 || hop_samples() == 0) throw ContractError("window or hop rounds to zero samples");
  if (static_cast<std::size_t>(n_fft) < window_samples()) {
    throw ContractError("n_fft (" + std::to_string(n_fft) + ") is shorter than the window (" +
                        std::to_string(window_samples()) + " samples)");
  }
  if (!(log_floor > 0)) throw ContractError("log_floor must be positive");
  if (kind == FeatureKind::kMfcc && (n_ceps <= 0 || n_ceps > n_mels)) {
    throw ContractError("n_ceps must be in [1, n_mels]");
  }
}

std::uint64_t FeatureConfig::fingerprint() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "features;sr=" << sample_rate << ";n_fft=" << n_fft << ";win=" << window_ms
     << ";hop=" << hop_ms << ";mels=" << n_mels << ";floor=" << log_floor
     << ";kind=" << (kind == FeatureKind::kLmfb ? "lmfb" : "mfcc");
  if (kind == FeatureKind::kMfcc) ss << ";ceps=" << n_ceps;
  return fnv1a(ss.str());
}

Waveform load_audio(const std::filesystem::path& path, int expected_rate) {
  const std::string bytes = read_file(path);
  const auto fail = [&](const std::string& why) -> ContractError {
    return ContractError(path.string() + ": " + why);
  };
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
    throw fail("not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* chunk = bytes.data() + pos;
    const std::uint32_t len = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      // Some writers leave a bogus data length; clamp to the file.
      if (std::memcmp(chunk, "data", 4) != 0) throw fail("truncated chunk");
    }
    const std::size_t avail = std::min<std::size_t>(len, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw fail("short fmt chunk");
      format = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = le32(chunk + 12);
      bits = le16(chunk + 22);
      if (format == kFormatExtensible) {
        if (avail < 26) throw fail("short extensible fmt chunk");
        format = le16(chunk + 8 + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = avail;
    }
    pos = body + len + (len & 1u);
  }
  if (format == 0) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (channels != 1 && channels != 2) throw fail("unsupported channel count " + std::to_string(channels));
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    throw fail("unsupported encoding (format " + std::to_string(format) + ", " +
               std::to_string(bits) + " bits); expected 16-bit PCM or 32-bit float");
  }
  if (static_cast<int>(rate) != expected_rate) {
    throw fail("sample rate " + std::to_string(rate) + " Hz does not match expected " +
               std::to_string(expected_rate) + " Hz");
  }

  const std::size_t sample_bytes = bits / 8;
  const std::size_t n = data_len / (sample_bytes * channels);
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.channels.assign(channels, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const char* p = data + (i * channels + c) * sample_bytes;
      double v;
      if (pcm16) {
        v = static_cast<std::int16_t>(le16(p)) / 32768.0;
      } else {
        v = std::bit_cast<float>(le32(p));
        if (!std::isfinite(v)) throw fail("non-finite sample at index " + std::to_string(i));
      }
      w.channels[c][i] = v;
    }
  }
  return w;
}

void write_wav_pcm16(const std::filesystem::path& path, const Waveform& w) {
  const auto channels = static_cast<std::uint16_t>(w.num_channels());
  const auto n = static_cast<std::uint32_t>(w.length());
  const std::uint32_t data_len = n * channels * 2;
  ByteWriter out;
  out.magic("RIFF");
  out.u32(36 + data_len);
  out.magic("WAVEfmt ");
  out.u32(16);
  out.u32(kFormatPcm | (static_cast<std::uint32_t>(channels) << 16));
  out.u32(static_cast<std::uint32_t>(w.sample_rate));
  out.u32(static_cast<std::uint32_t>(w.sample_rate) * channels * 2);
  out.u32(static_cast<std::uint32_t>(channels * 2) | (16u << 16));
  out.magic("data");
  out.u32(data_len);
  std::string bytes = out.bytes();
  bytes.reserve(bytes.size() + data_len);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = std::clamp(w.channels[c][i], -1.0, 1.0);
      const auto s = static_cast<std::int16_t>(std::clamp<long>(std::lround(v * 32768.0), -32768, 32767));
      const auto u = static_cast<std::uint16_t>(s);
      bytes.push_back(static_cast<char>(u & 0xff));
      bytes.push_back(static_cast<char>(u >> 8));
    }
  }
  write_file_atomic(path, bytes);
}

Waveform downmix(const Waveform& w) {
  if (w.num_channels() == 1) return w;
  if (w.num_channels() != 2) throw ContractError("downmix expects 1 or 2 channels");
  if (w.channels[0].size() != w.channels[1].size()) throw ContractError("channel lengths differ");
  Waveform mono;
  mono.sample_rate = w.sample_rate;
  mono.channels.resize(1);
  auto& out = mono.channels[0];
  out.resize(w.length());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * (w.channels[0][i] + w.channels[1][i]);
  }
  return mono;
}

std::size_t frame_count(std::size_t len, std::size_t win, std::size_t hop) {
  if (len < win || hop == 0) return 0;
  return (len - win) / hop + 1;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Matrix mel_filterbank(int n_mels, int n_fft, int sample_rate) {
  const std::size_t bins = static_cast<std::size_t>(n_fft) / 2 + 1;
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  Matrix bank(static_cast<std::size_t>(n_mels), bins);
  for (std::size_t m = 0; m < bank.rows(); ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      bank(m, k) = w;
    }
  }
  return bank;
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

Matrix mel_energies(const Waveform& mono, const FeatureConfig& cfg) {
  cfg.validate();
  if (mono.num_channels() != 1) throw ContractError("feature extraction expects a mono waveform");
  if (mono.sample_rate != cfg.sample_rate) {
    throw ContractError("waveform rate " + std::to_string(mono.sample_rate) +
                        " Hz differs from configured " + std::to_string(cfg.sample_rate) + " Hz");
  }
  const std::size_t win = cfg.window_samples();
  const std::size_t hop = cfg.hop_samples();
  const auto& x = mono.channels[0];
  const std::size_t T = frame_count(x.size(), win, hop);
  if (T == 0) {
    throw ContractError("utterance of " + std::to_string(x.size()) +
                        " samples is shorter than one window (" + std::to_string(win) + ")");
  }

  const auto n_fft = static_cast<std::size_t>(cfg.n_fft);
  const std::size_t bins = n_fft / 2 + 1;
  const Matrix bank = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate);
  const std::vector<double> window = hann_window(win);

  double* in = fftw_alloc_real(n_fft);
  fftw_complex* spec = fftw_alloc_complex(bins);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), in, spec, FFTW_ESTIMATE);
  }

  Matrix energies(T, static_cast<std::size_t>(cfg.n_mels));
  std::vector<double> power(bins);
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(in, in + n_fft, 0.0);
    const std::size_t start = t * hop;
    for (std::size_t i = 0; i < win; ++i) in[i] = x[start + i] * window[i];
    fftw_execute_dft_r2c(plan, in, spec);
    for (std::size_t k = 0; k < bins; ++k) {
      power[k] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    }
    for (std::size_t m = 0; m < bank.rows(); ++m) {
      const auto weights = bank.row(m);
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += weights[k] * power[k];
      energies(t, m) = e;
    }
  }

  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(spec);
  fftw_free(in);
  return energies;
}

FrameMatrix compute_features(const Waveform& mono, const FeatureConfig& cfg,
                             std::string utterance_id) {
  const Matrix energies = mel_energies(mono, cfg);
  const std::size_t T = energies.rows();
  const auto n_mels = static_cast<std::size_t>(cfg.n_mels);

  Matrix lmfb(T, n_mels);
  for (std::size_t i = 0; i < lmfb.data().size(); ++i) {
    lmfb.data()[i] = std::log(std::max(energies.data()[i], cfg.log_floor));
  }

  FrameMatrix fm;
  fm.utterance_id = std::move(utterance_id);
  fm.fingerprint = cfg.fingerprint();
  if (cfg.kind == FeatureKind::kLmfb) {
    fm.frames = std::move(lmfb);
    return fm;
  }

  // Orthonormal DCT-II, first n_ceps coefficients.
  const auto n_ceps = static_cast<std::size_t>(cfg.n_ceps);
  Matrix basis(n_ceps, n_mels);
  for (std::size_t k = 0; k < n_ceps; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n_mels));
    for (std::size_t n = 0; n < n_mels; ++n) {
      basis(k, n) = scale * std::cos(std::numbers::pi * static_cast<double>(k) *
                                     (2.0 * static_cast<double>(n) + 1.0) /
                                     (2.0 * static_cast<double>(n_mels)));
    }
  }
  fm.frames = Matrix(T, n_ceps);
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = lmfb.row(t);
    for (std::size_t k = 0; k < n_ceps; ++k) {
      const auto b = basis.row(k);
      double s = 0.0;
      for (std::size_t n = 0; n < n_mels; ++n) s += b[n] * row[n];
      fm.frames(t, k) = s;
    }
  }
  return fm;
}

std::string encode_frames(const FrameMatrix& fm) {
  ByteWriter out;
  out.magic("ASMF1");
  out.str(fm.utterance_id);
  out.u32(static_cast<std::uint32_t>(fm.frames.rows()));
  out.u32(static_cast<std::uint32_t>(fm.frames.cols()));
  for (double v : fm.frames.data()) out.f32(static_cast<float>(v));
  return out.bytes();
}

namespace {

FrameMatrix decode_one(ByteReader& in) {
  in.expect_magic("ASMF1");
  FrameMatrix fm;
  fm.utterance_id = in.str();
  const std::uint32_t T = in.u32();
  const std::uint32_t F = in.u32();
  fm.frames = Matrix(T, F);
  for (double& v : fm.frames.data()) {
    v = in.f32();
    if (!std::isfinite(v)) throw ContractError("non-finite feature value in " + fm.utterance_id);
  }
  return fm;
}

}  // namespace

FrameMatrix decode_frames(std::string bytes) {
  ByteReader in(std::move(bytes));
  FrameMatrix fm = decode_one(in);
  if (!in.at_end()) throw ContractError("trailing bytes after ASMF1 record " + fm.utterance_id);
  return fm;
}

void write_frames(const std::filesystem::path& path, const FrameMatrix& fm) {
  write_file_atomic(path, encode_frames(fm));
}

FrameMatrix read_frames(const std::filesystem::path& path) {
  return decode_frames(read_file(path));
}

std::vector<FrameMatrix> read_frame_records(const std::filesystem::path& path) {
  ByteReader in(read_file(path));
  std::vector<FrameMatrix> out;
  while (!in.at_end()) out.push_back(decode_one(in));
  return out;
}

}  // namespace asmsel
