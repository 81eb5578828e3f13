#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "marionette/core/optim.hpp"
#include "marionette/core/params.hpp"
#include "marionette/core/tensor.hpp"

namespace mnet {

// Binary layout (little-endian):
//   "MNET" | u16 version | u32 record count |
//   per record: u32 name bytes | name (UTF-8) | u32 rank | rank x u32 dims | f32 payload
inline constexpr char kCheckpointMagic[4] = {'M', 'N', 'E', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

class Checkpoint {
 public:
  void put(const std::string& name, const Shape& shape, std::span<const double> values);
  void put(const std::string& name, const Tensor& tensor) { put(name, tensor.shape(), tensor.data()); }
  void put_scalar(const std::string& name, double value) { put(name, Shape{}, std::span<const double>(&value, 1)); }
  // 64-bit integers as four exact 16-bit limbs.
  void put_u64(const std::string& name, std::uint64_t value);

  bool contains(const std::string& name) const { return records_.count(name) != 0; }
  const CheckpointRecord& at(const std::string& name) const;
  std::vector<double> values(const std::string& name) const;
  Shape shape(const std::string& name) const;
  double scalar(const std::string& name) const;
  std::uint64_t get_u64(const std::string& name) const;
  // Copies a record into an existing tensor of the same shape.
  void load_into(const std::string& name, Tensor& tensor) const;

  const std::map<std::string, CheckpointRecord>& records() const { return records_; }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(std::span<const std::uint8_t> bytes);

 private:
  std::map<std::string, CheckpointRecord> records_;
};

// Rounds through 32-bit storage precision in place.
void quantize_to_f32(std::span<double> values);

// Parameters as "<prefix><name>", spectral vectors as "<prefix><name>.sn_u/.sn_v".
void put_parameters(Checkpoint& ckpt, const std::string& prefix, const ParameterStore& store);
// Every parameter of `store` must be present with a matching shape.
void load_parameters(const Checkpoint& ckpt, const std::string& prefix, ParameterStore& store);
// Brings the live parameters and spectral vectors to exactly what a
// put/load round trip would produce, so training can resume bit-identically.
void quantize_parameters(ParameterStore& store);

// Step count and both moment buffers as "<prefix>step", "<prefix>m.<i>", "<prefix>v.<i>".
void put_adam_state(Checkpoint& ckpt, const std::string& prefix, const AdamState& state);
// `state` must already track the same number and sizes of parameters.
void load_adam_state(const Checkpoint& ckpt, const std::string& prefix, AdamState& state);
void quantize_adam_state(AdamState& state);

}  // namespace mnet
