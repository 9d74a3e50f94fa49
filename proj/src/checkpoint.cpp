#include "egoclust/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace egoclust {

namespace {

constexpr char kMagic[4] = {'E', 'G', 'O', 'C'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

template <typename F, typename Bits>
std::vector<std::uint8_t> encode_floats(std::span<const F> values) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * sizeof(F));
  for (F v : values) put_le(out, std::bit_cast<Bits>(v));
  return out;
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& buf, const std::string& path) : buf_(buf), path_(path) {}

  bool done() const { return pos_ == buf_.size(); }

  const std::uint8_t* take(std::size_t n) {
    if (buf_.size() - pos_ < n) throw Error(path_ + ": truncated checkpoint at byte " + std::to_string(pos_));
    const auto* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }

  template <typename U>
  U read() {
    return get_le<U>(take(sizeof(U)));
  }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kU8: return "u8";
  }
  return "?";
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
  }
  return 0;
}

std::vector<double> CheckpointRecord::as_doubles() const {
  const std::size_t n = numel(shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (dtype) {
      case DType::kF32: out[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes.data() + 4 * i)); break;
      case DType::kF64: out[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes.data() + 8 * i)); break;
      case DType::kU8: out[i] = bytes[i]; break;
    }
  }
  return out;
}

std::string CheckpointRecord::as_string() const {
  if (dtype != DType::kU8) throw Error("record '" + name + "' is not a byte record");
  return std::string(bytes.begin(), bytes.end());
}

void Checkpoint::add_record(CheckpointRecord record) {
  if (find(record.name)) throw Error("duplicate checkpoint record '" + record.name + "'");
  records_.push_back(std::move(record));
}

void Checkpoint::add_f32(const std::string& name, Shape shape, std::span<const float> values) {
  if (numel(shape) != values.size()) throw ShapeError("record '" + name + "' shape/data mismatch");
  add_record({name, DType::kF32, std::move(shape), encode_floats<float, std::uint32_t>(values)});
}

void Checkpoint::add_f64(const std::string& name, Shape shape, std::span<const double> values) {
  if (numel(shape) != values.size()) throw ShapeError("record '" + name + "' shape/data mismatch");
  add_record({name, DType::kF64, std::move(shape), encode_floats<double, std::uint64_t>(values)});
}

void Checkpoint::add_text(const std::string& name, const std::string& text) {
  add_record({name, DType::kU8, {text.size()}, std::vector<std::uint8_t>(text.begin(), text.end())});
}

template <typename T>
void Checkpoint::add_tensor(const std::string& name, const Tensor<T>& t) {
  if constexpr (std::is_same_v<T, float>) {
    add_f32(name, t.shape(), t.data());
  } else {
    add_f64(name, t.shape(), t.data());
  }
}

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records_) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const CheckpointRecord& Checkpoint::at(const std::string& name) const {
  if (const auto* r = find(name)) return *r;
  throw Error("checkpoint has no record '" + name + "'");
}

std::filesystem::path Checkpoint::manifest_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".manifest";
  return p;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::vector<std::uint8_t> buf(kMagic, kMagic + 4);
  put_le<std::uint32_t>(buf, kCheckpointVersion);
  std::ostringstream manifest;
  for (const auto& r : records_) {
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(r.name.size()));
    buf.insert(buf.end(), r.name.begin(), r.name.end());
    buf.push_back(static_cast<std::uint8_t>(r.dtype));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) put_le<std::uint64_t>(buf, d);
    buf.insert(buf.end(), r.bytes.begin(), r.bytes.end());
    manifest << r.name << ' ' << dtype_name(r.dtype) << ' ' << to_string(r.shape) << '\n';
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("failed writing " + path.string());
  std::ofstream side(manifest_path(path));
  side << manifest.str();
  if (!side) throw Error("failed writing " + manifest_path(path).string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader reader(buf, path.string());
  if (std::memcmp(reader.take(4), kMagic, 4) != 0) throw Error(path.string() + ": bad magic, not an EGOC checkpoint");
  const auto version = reader.read<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  while (!reader.done()) {
    CheckpointRecord r;
    const auto name_len = reader.read<std::uint32_t>();
    const auto* name = reader.take(name_len);
    r.name.assign(reinterpret_cast<const char*>(name), name_len);
    const auto tag = reader.read<std::uint8_t>();
    if (tag > static_cast<std::uint8_t>(DType::kU8)) {
      throw Error(path.string() + ": record '" + r.name + "' has unknown dtype tag " + std::to_string(tag));
    }
    r.dtype = static_cast<DType>(tag);
    const auto rank = reader.read<std::uint32_t>();
    for (std::uint32_t i = 0; i < rank; ++i) r.shape.push_back(static_cast<std::size_t>(reader.read<std::uint64_t>()));
    const std::size_t nbytes = numel(r.shape) * dtype_size(r.dtype);
    const auto* data = reader.take(nbytes);
    r.bytes.assign(data, data + nbytes);
    ckpt.add_record(std::move(r));
  }
  return ckpt;
}

template <typename T>
void add_parameters(Checkpoint& ckpt, const ParameterStore<T>& store) {
  for (const auto& [name, t] : store.entries()) ckpt.add_tensor(name, t);
}

template <typename T>
void load_parameters(const Checkpoint& ckpt, ParameterStore<T>& store, const std::string& prefix) {
  for (const auto& [name, t] : store.entries()) {
    if (name.rfind(prefix, 0) != 0) continue;
    const auto* r = ckpt.find(name);
    if (!r) throw Error("checkpoint is missing parameter '" + name + "'");
    if (r->shape != t.shape()) {
      throw ShapeError("parameter '" + name + "' has shape " + to_string(r->shape) + " in checkpoint but " +
                       to_string(t.shape()) + " in model");
    }
    if (r->dtype == DType::kU8) throw Error("parameter '" + name + "' stored as bytes");
    auto dst = Tensor<T>(t).mutable_data();
    if (r->dtype == DType::kF32 && std::is_same_v<T, float>) {
      for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] = static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(r->bytes.data() + 4 * i)));
      }
    } else {
      const auto values = r->as_doubles();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(values[i]);
    }
  }
}

template void Checkpoint::add_tensor<float>(const std::string&, const Tensor<float>&);
template void Checkpoint::add_tensor<double>(const std::string&, const Tensor<double>&);
template void add_parameters<float>(Checkpoint&, const ParameterStore<float>&);
template void add_parameters<double>(Checkpoint&, const ParameterStore<double>&);
template void load_parameters<float>(const Checkpoint&, ParameterStore<float>&, const std::string&);
template void load_parameters<double>(const Checkpoint&, ParameterStore<double>&, const std::string&);

}  // namespace egoclust
