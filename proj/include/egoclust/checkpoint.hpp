#pragma once

#include "egoclust/nn.hpp"
#include "egoclust/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace egoclust {

// Binary container layout (all integers little-endian):
//   "EGOC" | u32 version | { u32 name_len | name utf-8 | u8 dtype | u32 rank | u64 dims[rank] | raw data }*
// A text sidecar "<path>.manifest" lists one "name dtype dims" line per record.

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2 };

const char* dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

struct CheckpointRecord {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<std::uint8_t> bytes;  // little-endian payload

  std::vector<double> as_doubles() const;
  std::string as_string() const;  // kU8 only
};

class Checkpoint {
 public:
  void add_f32(const std::string& name, Shape shape, std::span<const float> values);
  void add_f64(const std::string& name, Shape shape, std::span<const double> values);
  void add_text(const std::string& name, const std::string& text);

  template <typename T>
  void add_tensor(const std::string& name, const Tensor<T>& t);

  const std::vector<CheckpointRecord>& records() const { return records_; }
  const CheckpointRecord* find(const std::string& name) const;
  const CheckpointRecord& at(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  static std::filesystem::path manifest_path(const std::filesystem::path& path);

 private:
  void add_record(CheckpointRecord record);
  std::vector<CheckpointRecord> records_;
};

/// Adds every parameter of `store` to `ckpt` under its own name.
template <typename T>
void add_parameters(Checkpoint& ckpt, const ParameterStore<T>& store);

/// Copies records into the parameters of `store` whose names start with
/// `prefix`. Each such parameter must be present with an identical shape;
/// f32/f64 records convert to T. Extra records are ignored.
template <typename T>
void load_parameters(const Checkpoint& ckpt, ParameterStore<T>& store, const std::string& prefix = "");

}  // namespace egoclust
