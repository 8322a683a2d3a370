#include "dass/audio.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace dass {

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
std::uint16_t rd_u16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}
void wr_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}
void wr_u16(std::ofstream& f, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

std::vector<double> read_wav(const std::string& path, int expected_rate) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IoError("read_wav: not a RIFF/WAVE file: " + path);

  std::size_t pos = 12;
  int channels = 0, rate = 0, bits = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    std::uint32_t chunk_len = rd_u32(hdr + 4);
    if (pos + 8 + chunk_len > bytes.size()) chunk_len = std::uint32_t(bytes.size() - pos - 8);
    if (std::memcmp(hdr, "fmt ", 4) == 0 && chunk_len >= 16) {
      const unsigned char* p = hdr + 8;
      std::uint16_t fmt = rd_u16(p);
      channels = rd_u16(p + 2);
      rate = int(rd_u32(p + 4));
      bits = rd_u16(p + 14);
      if (fmt != 1) throw IoError("read_wav: only PCM supported: " + path);
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = hdr + 8;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  if (!data || channels == 0) throw IoError("read_wav: missing fmt/data chunk: " + path);
  if (channels != 1) throw IoError("read_wav: mono expected: " + path);
  if (bits != 16) throw IoError("read_wav: 16-bit PCM expected: " + path);
  if (expected_rate > 0 && rate != expected_rate)
    throw IoError("read_wav: sample rate " + std::to_string(rate) + " != expected " +
                  std::to_string(expected_rate) + ": " + path);

  std::size_t n = data_len / 2;
  std::vector<double> samples(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::int16_t s = std::int16_t(data[2 * i] | (data[2 * i + 1] << 8));
    samples[i] = double(s) / 32768.0;
  }
  return samples;
}

void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_wav: cannot open " + path);
  const std::uint32_t data_len = std::uint32_t(samples.size() * 2);
  f.write("RIFF", 4);
  wr_u32(f, 36 + data_len);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  wr_u32(f, 16);
  wr_u16(f, 1);  // PCM
  wr_u16(f, 1);  // mono
  wr_u32(f, std::uint32_t(sample_rate));
  wr_u32(f, std::uint32_t(sample_rate * 2));
  wr_u16(f, 2);
  wr_u16(f, 16);
  f.write("data", 4);
  wr_u32(f, data_len);
  for (double v : samples) {
    double clamped = v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v);
    std::int16_t s = std::int16_t(std::lrint(clamped * 32767.0));
    unsigned char b[2] = {static_cast<unsigned char>(s & 0xff),
                          static_cast<unsigned char>((s >> 8) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!f) throw IoError("write_wav: write failed: " + path);
}

}  // namespace dass
