#include "dpsep/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpsep {
namespace {

constexpr double kFullScale = 32767.0;

void put_u32(std::vector<char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u16(std::vector<char>& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}
std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void write_wav(const std::filesystem::path& path, SignalView samples, std::uint32_t sample_rate) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<char> buf;
  buf.reserve(44 + data_bytes);
  buf.insert(buf.end(), {'R', 'I', 'F', 'F'});
  put_u32(buf, 36 + data_bytes);
  buf.insert(buf.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(buf, 16);
  put_u16(buf, 1);  // PCM
  put_u16(buf, 1);  // mono
  put_u32(buf, sample_rate);
  put_u32(buf, sample_rate * 2);
  put_u16(buf, 2);
  put_u16(buf, 16);
  buf.insert(buf.end(), {'d', 'a', 't', 'a'});
  put_u32(buf, data_bytes);
  for (double v : samples) {
    const double q = std::round(std::clamp(v, -1.0, 1.0) * kFullScale);
    put_u16(buf, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("wav: cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("wav: write failed for " + path.string());
}

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("wav: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw std::runtime_error("wav: " + path.string() + " is not a RIFF/WAVE file");
  }
  WavData out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw std::runtime_error("wav: truncated chunk in " + path.string());
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw std::runtime_error("wav: short fmt chunk");
      const std::uint16_t format = get_u16(bytes.data() + body);
      const std::uint16_t channels = get_u16(bytes.data() + body + 2);
      const std::uint16_t bits = get_u16(bytes.data() + body + 14);
      if (format != 1 || channels != 1 || bits != 16) {
        throw std::runtime_error("wav: " + path.string() + " is not 16-bit PCM mono");
      }
      out.sample_rate = get_u32(bytes.data() + body + 4);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error("wav: data chunk before fmt chunk");
      out.samples.resize(size / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(get_u16(bytes.data() + body + 2 * i));
        out.samples[i] = static_cast<double>(v) / kFullScale;
      }
      return out;
    }
    pos = body + size + (size & 1u);
  }
  throw std::runtime_error("wav: no data chunk in " + path.string());
}

double write_wav_normalized(const std::filesystem::path& path, SignalView signal,
                            std::uint32_t sample_rate) {
  double peak = 0.0;
  for (double v : signal) peak = std::max(peak, std::abs(v));
  const double scale = peak > 0.0 ? peak : 1.0;
  Signal normalized(signal.size());
  for (std::size_t i = 0; i < signal.size(); ++i) normalized[i] = signal[i] / scale;
  write_wav(path, normalized, sample_rate);
  return scale;
}

Signal read_wav_scaled(const std::filesystem::path& path, double scale,
                       std::uint32_t* sample_rate) {
  WavData wav = read_wav(path);
  for (double& v : wav.samples) v *= scale;
  if (sample_rate != nullptr) *sample_rate = wav.sample_rate;
  return std::move(wav.samples);
}

}  // namespace dpsep
