#include "edgeguard/weights_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include "edgeguard/errors.hpp"

namespace edgeguard {

namespace {

constexpr std::uint8_t kMagic[4] = {0x4D, 0x50, 0x52, 0x57};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return need(1)[0]; }
  std::uint16_t u16() {
    auto b = need(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    auto b = need(4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::span<const std::uint8_t> need(std::size_t n) {
    if (in_.size() - pos_ < n) {
      throw TruncatedFileError("weight file truncated: need " + std::to_string(n) + " bytes at offset " +
                               std::to_string(pos_) + ", " + std::to_string(in_.size() - pos_) + " left");
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const WeightStore& store) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kWeightFormatVersion);
  w.u32(static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store) {
    if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max())
      throw ConfigError("weight name length out of range: '" + name + "'");
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw ConfigError("tensor rank too large: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw ConfigError("tensor dimension too large: " + name);
      w.u32(static_cast<std::uint32_t>(d));
    }
    for (float v : t.data()) w.u32(std::bit_cast<std::uint32_t>(v));
  }
  return w.take();
}

WeightStore decode_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw BadMagicError("not an MPRW weight file (bad magic bytes)");
  }
  Reader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kWeightFormatVersion) {
    throw WeightFormatError("unsupported MPRW version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  WeightStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    if (name_len == 0) throw WeightFormatError("tensor " + std::to_string(i) + " has an empty name");
    auto name_bytes = r.need(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    const std::uint8_t rank = r.u8();
    Tensor::Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) throw WeightFormatError("tensor '" + name + "' has a zero dimension");
      n *= d;
    }
    if (n > r.remaining() / 4) {
      throw TruncatedFileError("weight file truncated inside tensor '" + name + "'");
    }
    auto raw = r.need(n * 4);
    std::vector<float> data(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint32_t u = static_cast<std::uint32_t>(raw[4 * k]) | (static_cast<std::uint32_t>(raw[4 * k + 1]) << 8) |
                              (static_cast<std::uint32_t>(raw[4 * k + 2]) << 16) |
                              (static_cast<std::uint32_t>(raw[4 * k + 3]) << 24);
      data[k] = std::bit_cast<float>(u);
    }
    store.add(name, Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) {
    throw WeightFormatError("trailing " + std::to_string(r.remaining()) + " bytes after last tensor");
  }
  return store;
}

void save_weights(const WeightStore& store, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_weights(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

WeightStore load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open weight file '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_weights(bytes);
  } catch (const BadMagicError& e) {
    throw BadMagicError(path.string() + ": " + e.what());
  } catch (const TruncatedFileError& e) {
    throw TruncatedFileError(path.string() + ": " + e.what());
  } catch (const DuplicateNameError& e) {
    throw DuplicateNameError(path.string() + ": " + e.what());
  } catch (const WeightFormatError& e) {
    throw WeightFormatError(path.string() + ": " + e.what());
  }
}

}  // namespace edgeguard
