#include "marionette/core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace mnet {

namespace {

void write_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void write_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated data");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put(const std::string& name, const Shape& shape, std::span<const double> values) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("checkpoint: record '" + name + "' has " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  }
  CheckpointRecord rec;
  rec.name = name;
  for (int d : shape) rec.dims.push_back(static_cast<std::uint32_t>(d));
  rec.values.reserve(values.size());
  for (double v : values) rec.values.push_back(static_cast<float>(v));
  records_[name] = std::move(rec);
}

void Checkpoint::put_u64(const std::string& name, std::uint64_t value) {
  std::vector<double> limbs(4);
  for (int i = 0; i < 4; ++i) limbs[static_cast<std::size_t>(i)] = static_cast<double>((value >> (16 * i)) & 0xFFFF);
  put(name, Shape{4}, limbs);
}

const CheckpointRecord& Checkpoint::at(const std::string& name) const {
  auto it = records_.find(name);
  if (it == records_.end()) throw std::out_of_range("checkpoint: no record named '" + name + "'");
  return it->second;
}

std::vector<double> Checkpoint::values(const std::string& name) const {
  const auto& rec = at(name);
  return {rec.values.begin(), rec.values.end()};
}

Shape Checkpoint::shape(const std::string& name) const {
  const auto& rec = at(name);
  return {rec.dims.begin(), rec.dims.end()};
}

double Checkpoint::scalar(const std::string& name) const {
  const auto& rec = at(name);
  if (rec.values.size() != 1) throw ShapeError("checkpoint: record '" + name + "' is not a scalar");
  return rec.values[0];
}

std::uint64_t Checkpoint::get_u64(const std::string& name) const {
  const auto& rec = at(name);
  if (rec.values.size() != 4) throw ShapeError("checkpoint: record '" + name + "' is not a u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint64_t>(rec.values[static_cast<std::size_t>(i)]) << (16 * i);
  return v;
}

void Checkpoint::load_into(const std::string& name, Tensor& tensor) const {
  const auto& rec = at(name);
  const Shape shape(rec.dims.begin(), rec.dims.end());
  if (shape != tensor.shape()) {
    throw ShapeError("checkpoint: record '" + name + "' has shape " + shape_str(shape) + ", expected " +
                     shape_str(tensor.shape()));
  }
  auto dst = tensor.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = rec.values[i];
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  write_u16(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(records_.size()));
  for (const auto& [name, rec] : records_) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    write_u32(out, static_cast<std::uint32_t>(rec.dims.size()));
    for (auto d : rec.dims) write_u32(out, d);
    for (float f : rec.values) write_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (in.str(4) != std::string(kCheckpointMagic, 4)) throw std::runtime_error("checkpoint: bad magic bytes");
  const auto version = in.u16();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto count = in.u32();
  for (std::uint32_t r = 0; r < count; ++r) {
    CheckpointRecord rec;
    rec.name = in.str(in.u32());
    const auto rank = in.u32();
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      rec.dims.push_back(in.u32());
      numel *= rec.dims.back();
    }
    rec.values.resize(numel);
    for (auto& f : rec.values) f = std::bit_cast<float>(in.u32());
    ckpt.records_[rec.name] = std::move(rec);
  }
  if (!in.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

void quantize_to_f32(std::span<double> values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

void put_parameters(Checkpoint& ckpt, const std::string& prefix, const ParameterStore& store) {
  for (const auto& p : store.named()) ckpt.put(prefix + p.name, p.tensor);
  for (const auto& s : store.spectral()) {
    ckpt.put(prefix + s.name + ".sn_u", Shape{static_cast<int>(s.u.size())}, std::span<const double>(s.u.data(), s.u.size()));
    ckpt.put(prefix + s.name + ".sn_v", Shape{static_cast<int>(s.v.size())}, std::span<const double>(s.v.data(), s.v.size()));
  }
}

void load_parameters(const Checkpoint& ckpt, const std::string& prefix, ParameterStore& store) {
  for (const auto& p : store.named()) {
    Tensor t = p.tensor;
    ckpt.load_into(prefix + p.name, t);
  }
  for (auto& s : store.spectral()) {
    for (auto [suffix, vec] : {std::pair{".sn_u", &s.u}, std::pair{".sn_v", &s.v}}) {
      const auto values = ckpt.values(prefix + s.name + suffix);
      if (values.size() != static_cast<std::size_t>(vec->size())) {
        throw std::runtime_error("checkpoint: " + prefix + s.name + suffix + " has " + std::to_string(values.size()) +
                                 " entries, expected " + std::to_string(vec->size()));
      }
      *vec = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    }
  }
}

void quantize_parameters(ParameterStore& store) {
  for (const auto& p : store.named()) {
    Tensor t = p.tensor;
    quantize_to_f32(t.mutable_data());
  }
  for (auto& s : store.spectral()) {
    quantize_to_f32(std::span<double>(s.u.data(), s.u.size()));
    quantize_to_f32(std::span<double>(s.v.data(), s.v.size()));
  }
}

void put_adam_state(Checkpoint& ckpt, const std::string& prefix, const AdamState& state) {
  ckpt.put_u64(prefix + "step", static_cast<std::uint64_t>(state.step));
  for (std::size_t i = 0; i < state.first_moment.size(); ++i) {
    const Shape shape{static_cast<int>(state.first_moment[i].size())};
    ckpt.put(prefix + "m." + std::to_string(i), shape, state.first_moment[i]);
    ckpt.put(prefix + "v." + std::to_string(i), shape, state.second_moment[i]);
  }
}

void load_adam_state(const Checkpoint& ckpt, const std::string& prefix, AdamState& state) {
  for (std::size_t i = 0; i < state.first_moment.size(); ++i) {
    for (auto* buffer : {&state.first_moment[i], &state.second_moment[i]}) {
      const std::string name = prefix + (buffer == &state.first_moment[i] ? "m." : "v.") + std::to_string(i);
      auto values = ckpt.values(name);
      if (values.size() != buffer->size()) {
        throw std::runtime_error("checkpoint: " + name + " has " + std::to_string(values.size()) + " entries, expected " +
                                 std::to_string(buffer->size()));
      }
      *buffer = std::move(values);
    }
  }
  if (ckpt.contains(prefix + "m." + std::to_string(state.first_moment.size()))) {
    throw std::runtime_error("checkpoint: " + prefix + " holds more moment buffers than the model has parameters");
  }
  state.step = static_cast<std::int64_t>(ckpt.get_u64(prefix + "step"));
}

void quantize_adam_state(AdamState& state) {
  for (auto& m : state.first_moment) quantize_to_f32(m);
  for (auto& v : state.second_moment) quantize_to_f32(v);
}

}  // namespace mnet
