#include "marionette/train/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace mnet::train {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("train config: bad value '" + value + "' for " + key);
  return out;
}

struct Field {
  std::string name;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field field(std::string name, T TrainConfig::*member) {
  return {name,
          [name, member](TrainConfig& c, const std::string& v) { c.*member = parse_number<T>(name, v); },
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              std::ostringstream os;
              os.precision(17);
              os << c.*member;
              return os.str();
            } else {
              return std::to_string(c.*member);
            }
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      field("targets", &TrainConfig::targets),
      field("d_lr", &TrainConfig::d_lr),
      field("g_lr", &TrainConfig::g_lr),
      field("d_updates_per_g", &TrainConfig::d_updates_per_g),
      field("steps", &TrainConfig::steps),
      field("batch_size", &TrainConfig::batch_size),
      field("image_size", &TrainConfig::image_size),
      field("base_channels", &TrainConfig::base_channels),
      field("max_channels", &TrainConfig::max_channels),
      field("checkpoint_every", &TrainConfig::checkpoint_every),
      field("seed", &TrainConfig::seed),
      field("perceptual_seed", &TrainConfig::perceptual_seed),
      field("face_seed", &TrainConfig::face_seed),
      field("disentangler_lr", &TrainConfig::disentangler_lr),
      field("grad_clip", &TrainConfig::grad_clip),
      field("disentangler_steps", &TrainConfig::disentangler_steps),
      field("disentangler_batch", &TrainConfig::disentangler_batch),
      field("disentangler_hidden", &TrainConfig::disentangler_hidden),
  };
  return f;
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](bool ok, const char* name) {
    if (!ok) throw std::invalid_argument(std::string("train config: ") + name + " must be positive");
  };
  positive(targets > 0, "targets");
  positive(d_lr > 0, "d_lr");
  positive(g_lr > 0, "g_lr");
  positive(d_updates_per_g > 0, "d_updates_per_g");
  positive(steps > 0, "steps");
  positive(batch_size > 0, "batch_size");
  positive(image_size > 0, "image_size");
  positive(base_channels > 0, "base_channels");
  positive(max_channels > 0, "max_channels");
  if (checkpoint_every < 0) throw std::invalid_argument("train config: checkpoint_every must be non-negative");
  positive(disentangler_lr > 0, "disentangler_lr");
  positive(grad_clip > 0, "grad_clip");
  positive(disentangler_steps > 0, "disentangler_steps");
  positive(disentangler_batch > 0, "disentangler_batch");
  positive(disentangler_hidden > 0, "disentangler_hidden");
}

TrainConfig parse_train_config(const std::string& text, TrainConfig base) {
  std::map<std::string, const Field*> by_name;
  for (const auto& f : fields()) by_name[f.name] = &f;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("train config line " + std::to_string(lineno) + ": expected 'name = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = by_name.find(key);
    if (it == by_name.end()) throw std::invalid_argument("train config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second->set(base, value);
  }
  base.validate();
  return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_train_config(os.str(), base);
}

std::string format_train_config(const TrainConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.name + " = " + f.get(config) + "\n";
  return out;
}

std::uint64_t config_fingerprint(const TrainConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : format_train_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mnet::train
