#pragma once

// Model file format, version 1. All integers little-endian.
//
//   "QSSM"                         magic
//   u32 version
//   u32 n, n bytes                 metadata, UTF-8 JSON
//   u32 array count
//   per array:
//     u32 n, n bytes               name
//     u32 dtype                    1 f32, 2 c64 (f32 re/im pairs), 3 i8, 4 i16, 5 ci8, 6 ci16
//     u32 shape[4]                 unused trailing dims are 1
//     integer dtypes only: u32 bits, f32 scale
//     payload                      row-major; complex interleaved (re, im)
//   u32 crc32 of every preceding byte
//
// Arrays frozen by post-training quantization are stored as their integer
// payload; all others as f32. Parameters are kept on the f32 grid, so a load
// reproduces the in-memory model exactly.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "qs5/error.hpp"
#include "qs5/model.hpp"
#include "qs5/quant_config.hpp"

namespace qs5 {

inline constexpr char kModelMagic[4] = {'Q', 'S', 'S', 'M'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

enum class DType : std::uint32_t { f32 = 1, c64 = 2, i8 = 3, i16 = 4, ci8 = 5, ci16 = 6 };

inline std::string to_string(Task t) { return t == Task::regression ? "regression" : "classification"; }
inline std::string to_string(Activation a) { return a == Activation::gelu ? "gelu" : "qgelu"; }
inline std::string to_string(GateFn g) { return g == GateFn::sigmoid ? "sigmoid" : "hard_sigmoid"; }
inline std::string to_string(Readout r) { return r == Readout::current_state ? "current_state" : "previous_state"; }

inline Task parse_task(const std::string& s) {
  if (s == "regression")
    return Task::regression;
  if (s == "classification")
    return Task::classification;
  throw ParseError("unknown task '" + s + "'");
}
inline Activation parse_activation(const std::string& s) {
  if (s == "gelu")
    return Activation::gelu;
  if (s == "qgelu")
    return Activation::qgelu;
  throw ParseError("unknown activation '" + s + "'");
}
inline GateFn parse_gate(const std::string& s) {
  if (s == "sigmoid")
    return GateFn::sigmoid;
  if (s == "hard_sigmoid")
    return GateFn::hard_sigmoid;
  throw ParseError("unknown gate function '" + s + "'");
}
inline Readout parse_readout(const std::string& s) {
  if (s == "current_state")
    return Readout::current_state;
  if (s == "previous_state")
    return Readout::previous_state;
  throw ParseError("unknown readout '" + s + "'");
}

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(double v) {
    const float f = static_cast<float>(v);
    if (static_cast<double>(f) != v && std::isfinite(v))
      throw FormatError("value is not representable as f32");
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  }
  void i8(std::int32_t v) { buf_.push_back(static_cast<char>(static_cast<std::int8_t>(v))); }
  void i16(std::int32_t v) {
    const auto u = static_cast<std::uint16_t>(static_cast<std::int16_t>(v));
    buf_.push_back(static_cast<char>(u & 0xFF));
    buf_.push_back(static_cast<char>(u >> 8));
  }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
  void need(std::size_t n) const {
    if (pos_ + n > end_)
      throw FormatError("model file truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
  }
  std::int32_t i8() {
    need(1);
    return static_cast<std::int8_t>(buf_[pos_++]);
  }
  std::int32_t i16() {
    need(2);
    const auto lo = static_cast<unsigned char>(buf_[pos_]);
    const auto hi = static_cast<unsigned char>(buf_[pos_ + 1]);
    pos_ += 2;
    return static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
  }
  std::string bytes() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline nlohmann::json model_metadata(const ModelBundle& m) {
  nlohmann::json j;
  j["task"] = to_string(m.task);
  j["dims"] = {{"h_in", m.dims.h_in}, {"h", m.dims.h}, {"p", m.dims.p}, {"depth", m.dims.depth}, {"h_out", m.dims.h_out}};
  j["quant"] = render_name(m.qcfg);
  j["ops"] = {{"activation", to_string(m.ops.activation)}, {"gate", to_string(m.ops.gate)}};
  j["seed"] = m.seed;
  j["readout"] = to_string(m.readout);
  j["ptq"] = !m.frozen.empty();
  return j;
}

inline std::string serialize_model(const ModelBundle& m) {
  detail::ByteWriter w;
  w.raw(kModelMagic, 4);
  w.u32(kModelFormatVersion);
  w.bytes(model_metadata(m).dump());

  std::map<std::string, const QTensor*> frozen;
  for (const FrozenArray& f : m.frozen)
    frozen[f.name] = &f.payload;

  std::uint32_t count = 0;
  for_each_param(m.params, [&](const ParamInfo&, std::span<const double>) { ++count; });
  w.u32(count);
  for_each_param(m.params, [&](const ParamInfo& info, std::span<const double> v) {
    w.bytes(info.name);
    const auto it = frozen.find(info.name);
    if (it == frozen.end()) {
      w.u32(static_cast<std::uint32_t>(info.is_complex ? DType::c64 : DType::f32));
      for (std::uint32_t d : info.shape)
        w.u32(d);
      for (double x : v)
        w.f32(x);
      return;
    }
    const QTensor& q = *it->second;
    const bool wide = q.bits > 8;
    const DType dt = info.is_complex ? (wide ? DType::ci16 : DType::ci8) : (wide ? DType::i16 : DType::i8);
    w.u32(static_cast<std::uint32_t>(dt));
    for (std::uint32_t d : info.shape)
      w.u32(d);
    w.u32(static_cast<std::uint32_t>(q.bits));
    w.f32(q.scale);
    for (std::int32_t c : q.values)
      wide ? w.i16(c) : w.i8(c);
  });

  std::string& buf = w.buffer();
  const std::uint32_t crc = detail::crc32_of(buf.data(), buf.size());
  w.u32(crc);
  return std::move(buf);
}

inline ModelBundle deserialize_model(const std::string& buf) {
  if (buf.size() < 12)
    throw FormatError("model file truncated");
  if (std::memcmp(buf.data(), kModelMagic, 4) != 0)
    throw FormatError("bad magic: not a QSSM model file");
  const std::size_t body = buf.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[body + i])) << (8 * i);
  if (stored != detail::crc32_of(buf.data(), body))
    throw FormatError("checksum mismatch: model file is corrupted or truncated");

  detail::ByteReader r(buf, body);
  r.need(4);
  for (int i = 0; i < 4; ++i)
    r.i8();
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion)
    throw FormatError("unsupported model format version " + std::to_string(version));

  ModelBundle m;
  try {
    const nlohmann::json j = nlohmann::json::parse(r.bytes());
    m.task = parse_task(j.at("task").get<std::string>());
    const auto& d = j.at("dims");
    m.dims = {d.at("h_in").get<std::size_t>(), d.at("h").get<std::size_t>(), d.at("p").get<std::size_t>(),
              d.at("depth").get<std::size_t>(), d.at("h_out").get<std::size_t>()};
    m.qcfg = parse_quant_config(j.at("quant").get<std::string>());
    m.ops = {parse_activation(j.at("ops").at("activation").get<std::string>()),
             parse_gate(j.at("ops").at("gate").get<std::string>())};
    m.seed = j.at("seed").get<std::uint64_t>();
    m.readout = parse_readout(j.at("readout").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model metadata: ") + e.what());
  } catch (const ParseError& e) {
    throw FormatError(std::string("bad model metadata: ") + e.what());
  }
  if (m.dims.h_in == 0 || m.dims.h == 0 || m.dims.p == 0 || m.dims.depth == 0 || m.dims.h_out == 0 ||
      m.dims.h > 4096 || m.dims.p > 4096 || m.dims.depth > 256 || m.dims.h_in > 4096 || m.dims.h_out > 4096)
    throw FormatError("model dimensions out of range");

  // Shape the parameter container from the metadata, then fill it.
  const ModelBundle shape = init_model(m.task, m.dims, 0, m.qcfg, m.ops);
  m.params = shape.params;

  const std::uint32_t count = r.u32();
  std::uint32_t expected = 0;
  for_each_param(m.params, [&](const ParamInfo&, std::span<const double>) { ++expected; });
  if (count != expected)
    throw FormatError("array count " + std::to_string(count) + " does not match the model dimensions");

  for_each_param(m.params, [&](const ParamInfo& info, std::span<double> v) {
    const std::string name = r.bytes();
    if (name != info.name)
      throw FormatError("expected array '" + info.name + "', found '" + name + "'");
    const auto dt = static_cast<DType>(r.u32());
    for (std::uint32_t d : info.shape)
      if (r.u32() != d)
        throw FormatError("shape mismatch for array '" + info.name + "'");
    if (dt == DType::f32 || dt == DType::c64) {
      if ((dt == DType::c64) != info.is_complex)
        throw FormatError("dtype mismatch for array '" + info.name + "'");
      for (double& x : v)
        x = r.f32();
      return;
    }
    const bool cplx = dt == DType::ci8 || dt == DType::ci16;
    const bool wide = dt == DType::i16 || dt == DType::ci16;
    if (!(dt == DType::i8 || dt == DType::i16 || cplx) || cplx != info.is_complex)
      throw FormatError("dtype mismatch for array '" + info.name + "'");
    QTensor q;
    q.bits = static_cast<int>(r.u32());
    if (q.bits < kMinBits || q.bits > kMaxBits || (q.bits > 8) != wide)
      throw FormatError("bad bit width for array '" + info.name + "'");
    q.scale = r.f32();
    if (!(q.scale > 0.0) || !std::isfinite(q.scale))
      throw FormatError("bad scale for array '" + info.name + "'");
    q.shape = {info.shape[0], info.shape[1], info.shape[2], info.shape[3]};
    q.values.resize(v.size());
    const std::int32_t lim = qmax(q.bits);
    for (std::size_t i = 0; i < v.size(); ++i) {
      q.values[i] = wide ? r.i16() : r.i8();
      if (q.values[i] < -lim || q.values[i] > lim)
        throw FormatError("integer payload out of range for array '" + info.name + "'");
      v[i] = static_cast<double>(q.values[i]) / q.scale;
    }
    m.frozen.push_back({info.name, std::move(q)});
  });
  if (r.pos() != body)
    throw FormatError("trailing bytes after the last array");
  return m;
}

inline void save_model(const ModelBundle& m, const std::string& path) {
  const std::string bytes = serialize_model(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw FormatError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw FormatError("write to '" + path + "' failed");
}

inline ModelBundle load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw FormatError("cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace qs5
