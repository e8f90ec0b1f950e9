#include "pdx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <zlib.h>

namespace pdx {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'P', 'D', 'X', '1'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > end_ - pos_) throw CorruptionError("checkpoint: truncated file");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

const NamedTensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw ContractError("checkpoint: no tensor named '" + name + "'");
}

std::vector<std::uint8_t> checkpoint_bytes(const Checkpoint& ckpt, StorageType storage) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");
  std::set<std::string> names;
  for (const auto& t : ckpt.tensors) {
    if (!names.insert(t.name).second) throw ContractError("checkpoint_save: duplicate tensor name '" + t.name + "'");
    if (numel(t.shape) != t.values.size()) {
      throw DimensionError("checkpoint_save: tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                           " values for shape " + shape_str(t.shape));
    }
    if (t.shape.size() > 255) throw ContractError("checkpoint_save: rank above 255");
  }
  json meta = ckpt.meta;
  meta["storage"] = storage == StorageType::f32 ? "f32" : "f64";
  const std::string meta_text = meta.dump();

  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta_text.size()));
  w.put_bytes(meta_text.data(), meta_text.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(storage));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    if (storage == StorageType::f64) {
      w.put_bytes(t.values.data(), t.values.size() * sizeof(double));
    } else {
      for (double v : t.values) w.put<float>(static_cast<float>(v));
    }
  }
  w.put<std::uint32_t>(crc32_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

Checkpoint checkpoint_parse(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4 + 4) throw CorruptionError("checkpoint: truncated file");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CorruptionError("checkpoint: bad magic (expected PDX1)");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  if (crc32_of(bytes.data(), body) != stored_crc) throw CorruptionError("checkpoint: CRC32 mismatch");

  Reader r(bytes, body);
  r.take(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw CorruptionError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto meta_len = r.get<std::uint32_t>();
  const auto* meta_bytes = reinterpret_cast<const char*>(r.take(meta_len));
  try {
    ckpt.meta = json::parse(meta_bytes, meta_bytes + meta_len);
  } catch (const json::exception& e) {
    throw CorruptionError("checkpoint: metadata is not valid JSON: " + std::string(e.what()));
  }
  const auto count = r.get<std::uint32_t>();
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = r.get<std::uint32_t>();
    const auto* name = reinterpret_cast<const char*>(r.take(name_len));
    t.name.assign(name, name_len);
    if (!names.insert(t.name).second) throw CorruptionError("checkpoint: duplicate tensor name '" + t.name + "'");
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw CorruptionError("checkpoint: unknown dtype tag " + std::to_string(dtype));
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t d = 0; d < rank; ++d) t.shape.push_back(r.get<std::uint32_t>());
    const std::size_t n = numel(t.shape);
    t.values.resize(n);
    if (dtype == static_cast<std::uint8_t>(StorageType::f64)) {
      std::memcpy(t.values.data(), r.take(n * sizeof(double)), n * sizeof(double));
    } else {
      const std::uint8_t* p = r.take(n * sizeof(float));
      for (std::size_t k = 0; k < n; ++k) {
        float f;
        std::memcpy(&f, p + k * sizeof(float), sizeof(float));
        t.values[k] = f;
      }
    }
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CorruptionError("checkpoint: trailing bytes before CRC");
  return ckpt;
}

void checkpoint_save(const Checkpoint& ckpt, const std::filesystem::path& path, StorageType storage) {
  const auto bytes = checkpoint_bytes(ckpt, storage);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("failed writing " + path.string());
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CorruptionError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return checkpoint_parse(bytes);
  } catch (const CorruptionError& e) {
    throw CorruptionError(path.string() + ": " + e.what());
  }
}

std::vector<NamedTensor> tensors_from(const ParamStore& store) {
  std::vector<NamedTensor> out;
  for (const Parameter* p : store.all()) out.push_back({p->name, p->shape, p->value});
  return out;
}

void load_into(ParamStore& store, const Checkpoint& ckpt) {
  if (ckpt.tensors.size() != store.size()) {
    throw CorruptionError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                          std::to_string(store.size()));
  }
  for (const auto& t : ckpt.tensors) {
    if (!store.contains(t.name)) throw CorruptionError("checkpoint tensor '" + t.name + "' is not a model parameter");
    Parameter& p = store.get(t.name);
    if (p.shape != t.shape) {
      throw CorruptionError("checkpoint tensor '" + t.name + "' has shape " + shape_str(t.shape) + ", expected " +
                            shape_str(p.shape));
    }
    p.value = t.values;
  }
}

}  // namespace pdx
