#include "storm/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace storm::inline STORM_PREC_NS {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'T', 'O', 'R', 'M', 'C', 'K', 'P'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), p, p + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}
  template <class T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    STORM_CHECK(n <= buf.size() - pos, ErrorKind::kLength, "checkpoint truncated reading ", what,
                ": need ", n, " bytes at offset ", pos, ", file has ", buf.size());
    const auto* p = buf.data() + pos;
    pos += n;
    return p;
  }
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const nlohmann::json& manifest,
                                               const ParamList& params) {
  Writer w;
  w.bytes(kMagic, 8);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string m = manifest.dump();
  w.put<std::uint64_t>(m.size());
  w.bytes(m.data(), m.size());
  w.put<std::uint64_t>(params.size());
  for (const auto& p : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.put<std::uint8_t>(kDoublePrecision ? 1 : 0);
    const Shape& s = p.tensor.shape();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    for (auto d : s) w.put<std::uint64_t>(d);
    const auto data = p.tensor.data();
    w.put<std::uint64_t>(data.size_bytes());
    w.bytes(data.data(), data.size_bytes());
  }
  return std::move(w.out);
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  STORM_CHECK(std::memcmp(r.take(8, "magic"), kMagic, 8) == 0, ErrorKind::kFormat,
              "not a checkpoint file (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  STORM_CHECK(version == kCheckpointVersion, ErrorKind::kUnsupported, "checkpoint version ",
              version, " is not supported (expected ", kCheckpointVersion, ")");
  Checkpoint ck;
  const auto mlen = r.get<std::uint64_t>("manifest length");
  const auto* mp = r.take(mlen, "manifest");
  try {
    ck.manifest = nlohmann::json::parse(mp, mp + mlen);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "checkpoint manifest is not valid JSON: ", e.what());
  }
  const auto n = r.get<std::uint64_t>("blob count");
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto nlen = r.get<std::uint32_t>("blob name length");
    const auto* np = r.take(nlen, "blob name");
    std::string name(reinterpret_cast<const char*>(np), nlen);
    const auto dtype = r.get<std::uint8_t>("dtype");
    STORM_CHECK(dtype <= 1, ErrorKind::kUnsupported, "blob '", name, "' has unknown dtype ",
                static_cast<int>(dtype));
    const auto ndim = r.get<std::uint32_t>("ndim");
    STORM_CHECK(ndim <= 8, ErrorKind::kFormat, "blob '", name, "' has ", ndim, " dims");
    Blob b;
    for (std::uint32_t d = 0; d < ndim; ++d)
      b.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dims")));
    const std::size_t count = shape_numel(b.shape);
    const std::size_t width = dtype == 1 ? 8 : 4;
    const auto nbytes = r.get<std::uint64_t>("payload length");
    STORM_CHECK(nbytes == count * width, ErrorKind::kFormat, "blob '", name, "' payload is ",
                nbytes, " bytes, shape ", shape_str(b.shape), " needs ", count * width);
    const auto* p = r.take(nbytes, "payload");
    b.values.resize(count);
    for (std::size_t k = 0; k < count; ++k) {
      if (dtype == 1) {
        double v;
        std::memcpy(&v, p + 8 * k, 8);
        b.values[k] = v;
      } else {
        float v;
        std::memcpy(&v, p + 4 * k, 4);
        b.values[k] = v;
      }
    }
    STORM_CHECK(!ck.blobs.count(name), ErrorKind::kFormat, "duplicate blob '", name, "'");
    ck.order.push_back(name);
    ck.blobs.emplace(std::move(name), std::move(b));
  }
  STORM_CHECK(r.pos == bytes.size(), ErrorKind::kFormat, "checkpoint has ",
              bytes.size() - r.pos, " trailing bytes");
  return ck;
}

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  STORM_CHECK(in.good(), ErrorKind::kData, "cannot open file: ", path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& manifest,
                     const ParamList& params) {
  const auto bytes = serialize_checkpoint(manifest, params);
  std::ofstream out(path, std::ios::binary);
  STORM_CHECK(out.good(), ErrorKind::kData, "cannot write checkpoint: ", path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  STORM_CHECK(out.good(), ErrorKind::kData, "short write to ", path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  try {
    return parse_checkpoint(bytes);
  } catch (const Error& e) {
    fail(e.kind(), path.string(), ": ", e.what());
  }
}

void load_params(const Checkpoint& ck, const ParamList& params) {
  std::ostringstream problems;
  std::size_t bad = 0;
  constexpr std::size_t kShown = 12;
  auto note = [&](auto&&... parts) {
    if (bad++ < kShown) ((problems << "\n  ") << ... << parts);
  };
  for (const auto& p : params) {
    const auto it = ck.blobs.find(p.name);
    if (it == ck.blobs.end()) {
      note(p.name, ": missing (expected ", shape_str(p.tensor.shape()), ")");
    } else if (it->second.shape != p.tensor.shape()) {
      note(p.name, ": checkpoint ", shape_str(it->second.shape), " vs model ", shape_str(p.tensor.shape()));
    }
  }
  if (ck.blobs.size() != params.size() || bad > 0) {
    for (const auto& name : ck.order) {
      const bool known = std::any_of(params.begin(), params.end(),
                                     [&](const NamedTensor& p) { return p.name == name; });
      if (!known) note(name, ": not in model");
    }
  }
  if (bad > kShown) problems << "\n  ... and " << bad - kShown << " more";
  STORM_CHECK(bad == 0, ErrorKind::kConfig, "checkpoint does not match the model architecture (",
              bad, " mismatches):", problems.str());
  for (const auto& p : params) {
    const Blob& b = ck.blobs.at(p.name);
    auto dst = p.tensor.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Scalar>(b.values[i]);
  }
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t file_hash(const std::filesystem::path& path) { return fnv1a64(slurp(path)); }

std::uint64_t params_hash(const ParamList& params) {
  std::vector<std::uint8_t> buf;
  for (const auto& p : params) {
    buf.insert(buf.end(), p.name.begin(), p.name.end());
    for (auto d : p.tensor.shape()) {
      const auto* q = reinterpret_cast<const std::uint8_t*>(&d);
      buf.insert(buf.end(), q, q + sizeof(d));
    }
    const auto data = p.tensor.data();
    const auto* q = reinterpret_cast<const std::uint8_t*>(data.data());
    buf.insert(buf.end(), q, q + data.size_bytes());
  }
  return fnv1a64(buf);
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace storm::inline STORM_PREC_NS
