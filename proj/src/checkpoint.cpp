#include "red/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace red {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t k = 0; k < size; ++k) {
    h ^= data[k];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  template <typename U>
  U get(const char* what) {
    U v;
    std::memcpy(&v, take(sizeof(U), what), sizeof(U));
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > n_ - pos_) throw DataError(std::string("checkpoint truncated while reading ") + what);
    const auto* r = p_ + pos_;
    pos_ += n;
    return r;
  }
  std::string get_string(const char* what) {
    const auto len = get<std::uint32_t>(what);
    const auto* b = take(len, what);
    return std::string(reinterpret_cast<const char*>(b), len);
  }
  bool done() const { return pos_ == n_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

template <Real T>
constexpr std::uint8_t dtype_tag() {
  return std::is_same_v<T, float> ? 0 : 1;
}

template <Real T>
void read_tensors(Reader& r, std::uint32_t count, std::uint8_t tag, ParameterStore<T>& store) {
  std::set<std::string> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name = r.get_string("tensor name");
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != tag) throw DataError("checkpoint mixes tensor dtypes (at '" + name + "')");
    if (!seen.insert(name).second) throw DataError("checkpoint lists tensor '" + name + "' twice");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw DataError("checkpoint tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>("dims");
      if (dim > (std::uint64_t{1} << 32)) throw DataError("checkpoint tensor '" + name + "' has an implausible dim");
      shape.push_back(static_cast<std::size_t>(dim));
      numel *= static_cast<std::size_t>(dim);
    }
    Tensor<T> t(shape);
    const auto* payload = r.take(numel * sizeof(T), "payload");
    if (numel) std::memcpy(t.ptr(), payload, numel * sizeof(T));
    store.add(name, std::move(t));
  }
}

}  // namespace

template <Real T>
std::vector<std::uint8_t> encode_checkpoint(const std::string& config_text, const ParameterStore<T>& params) {
  Writer w;
  w.put_bytes("REDC", 4);
  w.put(kCheckpointVersion);
  w.put_string(config_text);
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {  // map order: sorted by name
    w.put_string(name);
    w.put(dtype_tag<T>());
    w.put(static_cast<std::uint32_t>(tensor->shape().size()));
    for (auto d : tensor->shape()) w.put(static_cast<std::uint64_t>(d));
    w.put_bytes(tensor->ptr(), tensor->numel() * sizeof(T));
  }
  w.put(fnv1a64(w.out.data(), w.out.size()));
  return std::move(w.out);
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 4 + 4 + 4 + 8) throw DataError("checkpoint too short (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), "REDC", 4) != 0) throw DataError("not a checkpoint: bad magic");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a64(bytes.data(), body)) throw DataError("checkpoint checksum mismatch (file corrupted)");

  Reader r(bytes.data() + 4, body - 4);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointData out;
  out.config_text = r.get_string("config");
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count == 0) throw DataError("checkpoint holds no tensors");
  // Peek the first dtype to choose the store precision.
  Reader peek = r;
  peek.get_string("tensor name");
  const auto tag = peek.get<std::uint8_t>("dtype");
  if (tag == 0) {
    ParameterStore<float> ps;
    read_tensors(r, count, tag, ps);
    out.params = std::move(ps);
  } else if (tag == 1) {
    ParameterStore<double> ps;
    read_tensors(r, count, tag, ps);
    out.params = std::move(ps);
  } else {
    throw DataError("checkpoint has unknown dtype tag " + std::to_string(tag));
  }
  if (!r.done()) throw DataError("checkpoint has trailing bytes before the checksum");
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template std::vector<std::uint8_t> encode_checkpoint(const std::string&, const ParameterStore<float>&);
template std::vector<std::uint8_t> encode_checkpoint(const std::string&, const ParameterStore<double>&);

}  // namespace red
