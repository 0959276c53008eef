// Checkpoint container, all integers and floats little-endian:
//   magic "HSGCKPT\0", u32 version, u32 level, u32 epoch, u64 adam step,
//   str network-spec echo, str train-config echo, str rng state,
//   u32 param count, then per param: str name, u8 group, u32 rank, u32 dims[rank],
//     f32 value[n], f32 adam_m[n], f32 adam_v[n]
//   u32 batch-norm count, then per layer: str name, u32 channels, u8 ready,
//     f32 running_mean[c], f32 running_var[c]
// where str is u32 length + bytes.

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hasseg/error.hpp"
#include "hasseg/training.hpp"

namespace hasseg {

namespace {

constexpr char kMagic[8] = {'H', 'S', 'G', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(std::span<const float> v) {
    for (float x : v) u32(std::bit_cast<std::uint32_t>(x));
  }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, const std::string& origin) : b_(b), origin_(origin) {}

  void need(std::size_t n) {
    if (b_.size() - pos_ < n) fail("truncated at byte " + std::to_string(pos_));
  }
  [[noreturn]] void fail(const std::string& msg) const { throw IoError(origin_ + ": checkpoint " + msg); }

  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(std::span<float> v) {
    need(4 * v.size());
    for (float& x : v) x = std::bit_cast<float>(u32());
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(Checkpoint::kVersion);
  w.u32(static_cast<std::uint32_t>(c.level));
  w.u32(static_cast<std::uint32_t>(c.epoch));
  w.u64(c.adam.step);
  Config spec, train;
  c.spec.to_config(spec);
  c.train.to_config(train);
  w.str(spec.str());
  w.str(train.str());
  w.str(c.rng_state);

  const auto& ps = c.params.params();
  if (c.adam.m.size() != ps.size() || c.adam.v.size() != ps.size()) {
    throw ShapeError("encode_checkpoint: optimizer state does not match parameters");
  }
  w.u32(static_cast<std::uint32_t>(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& p = ps[i];
    w.str(p.name);
    w.u8(p.group == ParamGroup::Main ? 0 : 1);
    const auto& dims = p.tensor.shape().dims();
    w.u32(static_cast<std::uint32_t>(dims.size()));
    for (std::size_t d : dims) w.u32(static_cast<std::uint32_t>(d));
    w.floats(p.tensor.data());
    w.floats(c.adam.m[i]);
    w.floats(c.adam.v[i]);
  }
  const auto& bns = c.params.batchnorms();
  w.u32(static_cast<std::uint32_t>(bns.size()));
  for (const auto& bn : bns) {
    w.str(bn.name);
    w.u32(static_cast<std::uint32_t>(bn.stats.running_mean.size()));
    w.u8(bn.stats.ready ? 1 : 0);
    w.floats(bn.stats.running_mean);
    w.floats(bn.stats.running_var);
  }
  return std::move(w.out);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  r.need(sizeof kMagic);
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) r.fail("has bad magic");
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) r.fail("version " + std::to_string(version) + " is not supported");

  Checkpoint c;
  c.level = static_cast<int>(r.u32());
  c.epoch = static_cast<int>(r.u32());
  c.adam.step = r.u64();
  try {
    c.spec = NetworkSpec::from_config(Config::parse(r.str(), origin + " network echo"));
    c.spec.validate();
    c.train = TrainConfig::from_config(Config::parse(r.str(), origin + " train echo"));
  } catch (const ConfigError& e) {
    r.fail(std::string("has an invalid config echo: ") + e.what());
  }
  c.rng_state = r.str();

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const std::uint8_t group = r.u8();
    if (group > 1) r.fail("has an invalid group for " + name);
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("has an invalid rank for " + name);
    std::vector<std::size_t> dims(rank);
    std::size_t n = 1;
    for (auto& d : dims) {
      d = r.u32();
      n *= d;
    }
    r.need(12 * n);
    Tensor<float>* t = nullptr;
    try {
      t = &c.params.add(name, Shape(dims), group == 0 ? ParamGroup::Main : ParamGroup::Side);
    } catch (const ValueError&) {
      r.fail("repeats parameter " + name);
    }
    r.floats(t->data());
    c.adam.m.emplace_back(n);
    c.adam.v.emplace_back(n);
    r.floats(c.adam.m.back());
    r.floats(c.adam.v.back());
  }
  const std::uint32_t bn_count = r.u32();
  for (std::uint32_t i = 0; i < bn_count; ++i) {
    const std::string name = r.str();
    const std::uint32_t channels = r.u32();
    r.need(1 + 8 * static_cast<std::size_t>(channels));
    BatchNormStats<float>* s = nullptr;
    try {
      s = &c.params.add_batchnorm(name, channels);
    } catch (const ValueError&) {
      r.fail("repeats batch-norm layer " + name);
    }
    s->ready = r.u8() != 0;
    r.floats(s->running_mean);
    r.floats(s->running_var);
  }
  if (!r.done()) r.fail("has trailing bytes");
  try {
    check_params(c.spec, c.params);
  } catch (const ShapeError& e) {
    r.fail(std::string("does not match its network spec: ") + e.what());
  }
  return c;
}

void write_checkpoint(const Checkpoint& c, const std::string& path) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

}  // namespace hasseg
