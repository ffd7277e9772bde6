#include "inkwell/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace inkwell {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void read_floats(float* dst, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParameterStore& store) {
  std::string out = "INKW";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [id, p] : store.entries()) {
    if (id.size() > UINT16_MAX) throw std::runtime_error("parameter id too long: " + id);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    out += id;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.value.rank()));
    for (auto d : p.value.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(p.value.data()), p.value.size() * sizeof(float));
  }
  return out;
}

NamedTensors decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(4) != "INKW") throw std::runtime_error("not a checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string id = r.take(len);
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    Tensor t(shape);
    r.read_floats(t.data(), t.size());
    out.emplace_back(std::move(id), std::move(t));
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after checkpoint entries at byte " + std::to_string(r.pos()));
  return out;
}

void write_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(store);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

NamedTensors read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

void load_into(ParameterStore& store, const NamedTensors& entries) {
  std::set<std::string> seen;
  for (const auto& [id, t] : entries) {
    Parameter& p = store.at(id);
    if (p.value.shape() != t.shape())
      throw std::runtime_error("checkpoint entry '" + id + "' has shape " + to_string(t.shape()) + ", model expects " +
                               to_string(p.value.shape()));
    p.value.storage() = t.storage();
    seen.insert(id);
  }
  for (const auto& id : store.ids())
    if (!seen.count(id)) throw std::runtime_error("checkpoint lacks parameter '" + id + "'");
}

}  // namespace inkwell
