#include "mixgraph/wav.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace mixgraph {

namespace {

struct Reader {
  const std::uint8_t* p;
  std::size_t n, pos = 0;

  void need(std::size_t k, const char* what) {
    if (pos + k > n) throw std::runtime_error(std::string("wav: truncated ") + what);
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v;
    std::memcpy(&v, p + pos, 4);
    pos += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2, "u16");
    std::uint16_t v;
    std::memcpy(&v, p + pos, 2);
    pos += 2;
    return v;
  }
  std::string tag() {
    need(4, "tag");
    std::string s(reinterpret_cast<const char*>(p + pos), 4);
    pos += 4;
    return s;
  }
};

double sample_from_pcm(const std::uint8_t* p, int bits) {
  if (bits == 16) {
    std::int16_t v;
    std::memcpy(&v, p, 2);
    return double(v) / 32768.0;
  }
  // 24-bit little endian
  std::int32_t v = (std::int32_t(p[2]) << 24) | (std::int32_t(p[1]) << 16) |
                   (std::int32_t(p[0]) << 8);
  v >>= 8;
  return double(v) / 8388608.0;
}

}  // namespace

AudioBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("wav: missing file: " + path);
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  Reader r{data.data(), data.size()};

  if (r.tag() != "RIFF") throw std::runtime_error("wav: not a RIFF file: " + path);
  r.u32();
  if (r.tag() != "WAVE") throw std::runtime_error("wav: not a WAVE file: " + path);

  int channels = 0, bits = 0;
  std::uint16_t format = 0;
  double rate = 0.0;
  const std::uint8_t* samples = nullptr;
  std::size_t data_len = 0;

  while (r.pos + 8 <= r.n) {
    const std::string id = r.tag();
    const std::uint32_t len = r.u32();
    r.need(len, "chunk");
    if (id == "fmt ") {
      Reader f{data.data() + r.pos, len};
      format = f.u16();
      channels = f.u16();
      rate = double(f.u32());
      f.u32();  // byte rate
      f.u16();  // block align
      bits = f.u16();
      if (format == 0xFFFE && len >= 40) {
        f.u16();            // extension size
        f.u16();            // valid bits
        f.u32();            // channel mask
        format = f.u16();   // first two bytes of the sub-format GUID
      }
    } else if (id == "data") {
      samples = data.data() + r.pos;
      data_len = len;
    }
    r.pos += len + (len & 1);  // chunks are word-aligned
  }

  if (!samples || channels == 0) throw std::runtime_error("wav: no audio data in " + path);
  if (channels > 2)
    throw std::runtime_error("wav: unsupported channel count in " + path);
  const bool is_float = format == 3;
  const bool is_pcm = format == 1;
  if (!((is_pcm && (bits == 16 || bits == 24)) || (is_float && bits == 32)))
    throw std::runtime_error("wav: unsupported encoding in " + path +
                             " (need 16/24-bit PCM or 32-bit float)");

  const std::size_t bytes_per = std::size_t(bits) / 8;
  const std::size_t frames = data_len / (bytes_per * std::size_t(channels));
  if (frames == 0) throw std::runtime_error("wav: zero-length audio in " + path);

  AudioBuffer out;
  out.sample_rate = rate;
  out.samples.left.resize(frames);
  out.samples.right.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    for (int c = 0; c < channels; ++c) {
      const std::uint8_t* p = samples + (i * std::size_t(channels) + std::size_t(c)) * bytes_per;
      double v;
      if (is_float) {
        float f;
        std::memcpy(&f, p, 4);
        v = double(f);
      } else {
        v = sample_from_pcm(p, bits);
      }
      if (c == 0) out.samples.left[i] = v;
      if (c == 1 || channels == 1) out.samples.right[i] = v;
    }
  }
  return out;
}

void write_wav(const std::string& path, const Stereo& samples, double sample_rate) {
  const std::uint32_t frames = std::uint32_t(samples.size());
  const std::uint32_t data_bytes = frames * 2 * 4;
  std::vector<std::uint8_t> buf;
  buf.reserve(44 + data_bytes);
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
  };
  auto put16 = [&](std::uint16_t v) {
    buf.push_back(std::uint8_t(v));
    buf.push_back(std::uint8_t(v >> 8));
  };
  auto tag = [&](const char* t) { buf.insert(buf.end(), t, t + 4); };

  tag("RIFF");
  put32(36 + data_bytes);
  tag("WAVE");
  tag("fmt ");
  put32(16);
  put16(3);  // IEEE float
  put16(2);
  put32(std::uint32_t(sample_rate));
  put32(std::uint32_t(sample_rate) * 2 * 4);
  put16(8);
  put16(32);
  tag("data");
  put32(data_bytes);
  for (std::uint32_t i = 0; i < frames; ++i) {
    for (int c = 0; c < 2; ++c) {
      const float f = float(c == 0 ? samples.left[i] : samples.right[i]);
      std::uint32_t v;
      std::memcpy(&v, &f, 4);
      put32(v);
    }
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("wav: cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!out) throw std::runtime_error("wav: short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mixgraph
