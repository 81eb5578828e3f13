// Command-line front end: corpus synthesis, basis fitting, training,
// reenactment and evaluation.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "marionette/core/checkpoint.hpp"
#include "marionette/core/ops.hpp"
#include "marionette/eval/metrics.hpp"
#include "marionette/geometry/io.hpp"
#include "marionette/geometry/raster.hpp"
#include "marionette/model/attention.hpp"
#include "marionette/synth/corpus.hpp"
#include "marionette/train/config.hpp"
#include "marionette/train/disentangler.hpp"
#include "marionette/train/gan.hpp"

namespace fs = std::filesystem;
using namespace mnet;
using geometry::Landmark68;

namespace {

// Reported with exit status 1.
struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 1;
  std::string config;
  std::string out;
  CLI::Option* seed_option = nullptr;
};

void add_common(CLI::App* cmd, Common& c) {
  c.seed_option = cmd->add_option("--seed", c.seed, "Random seed (default 1)");
  cmd->add_option("--config", c.config, "Configuration file of name = value lines");
  cmd->add_option("--out", c.out, "Output directory")->required();
}

fs::path require_path(const std::string& p, const char* what) {
  if (!fs::exists(p)) throw PreconditionError(std::string(what) + " not found: " + p);
  return p;
}

fs::path prepare_out(const Common& c) {
  fs::create_directories(c.out);
  return c.out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PreconditionError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string frame_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03d.ppm", t);
  return buf;
}

train::TrainConfig train_config(const Common& c) {
  train::TrainConfig config;
  if (!c.config.empty()) config = train::load_train_config(require_path(c.config, "config file"));
  if (c.seed_option->count() > 0) config.seed = c.seed;
  config.validate();
  return config;
}

// Synth settings use the same name = value format, keyed by the manifest's
// config fields.
synth::SynthConfig synth_config(const Common& c) {
  auto j = nlohmann::json::parse(synth::config_to_json(synth::SynthConfig{}));
  if (!c.config.empty()) {
    std::istringstream in(read_text(require_path(c.config, "config file")));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
      const auto eq = line.find('=');
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected 'name = value'");
      auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(" \t\r"));
        s.erase(s.find_last_not_of(" \t\r") + 1);
        return s;
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (!j.contains(key)) throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      if (j[key].is_boolean()) {
        if (value != "true" && value != "false") throw std::invalid_argument("config: " + key + " must be true or false");
        j[key] = value == "true";
      } else {
        const auto parsed = nlohmann::json::parse(value, nullptr, false);
        if (parsed.is_discarded() || !parsed.is_number()) throw std::invalid_argument("config: bad value for " + key);
        j[key] = parsed;
      }
    }
  }
  if (c.seed_option->count() > 0) j["seed"] = c.seed;
  return synth::config_from_json(j.dump());
}

synth::CorpusSplit read_split(const fs::path& path) {
  const auto j = nlohmann::json::parse(read_text(require_path(path.string(), "split file")));
  synth::CorpusSplit s;
  s.train = j.at("train").get<std::vector<int>>();
  s.held_out = j.at("held_out").get<std::vector<int>>();
  return s;
}

std::vector<int> clips_of(const synth::Corpus& corpus, const std::vector<int>& identities) {
  std::vector<int> out;
  for (std::size_t c = 0; c < corpus.clips.size(); ++c) {
    if (std::binary_search(identities.begin(), identities.end(), corpus.clips[c].identity)) out.push_back(static_cast<int>(c));
  }
  return out;
}

int find_clip(const synth::Corpus& corpus, const std::string& name) {
  for (std::size_t c = 0; c < corpus.clips.size(); ++c) {
    if (corpus.clips[c].name == name) return static_cast<int>(c);
  }
  throw PreconditionError("no clip named '" + name + "' in the corpus");
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
  Common common;
  int identities = 0, clips = 0, frames = 0, size = 0;
};

int run_synth(const SynthArgs& a) {
  synth::SynthConfig config = synth_config(a.common);
  if (a.identities > 0) config.identities = a.identities;
  if (a.clips > 0) config.clips_per_identity = a.clips;
  if (a.frames > 0) config.frames_per_clip = a.frames;
  if (a.size > 0) config.image_size = a.size;
  config.validate();
  const auto corpus = synth::generate_corpus(config);
  synth::save_corpus(corpus, prepare_out(a.common));
  std::cout << "synth: " << corpus.identities.size() << " identities, " << corpus.clips.size() << " clips, "
            << config.frames_per_clip << " frames each at " << config.image_size << " px -> " << a.common.out << "\n";
  return 0;
}

// -------------------------------------------------------------- fit-basis

struct FitBasisArgs {
  Common common;
  std::string corpus;
  double train_fraction = 0.8;
};

int run_fit_basis(const FitBasisArgs& a) {
  const auto corpus = synth::load_corpus(require_path(a.corpus, "corpus"));
  const auto split = synth::corpus_split(corpus, a.train_fraction, a.common.seed);
  std::vector<std::vector<Landmark68>> videos;
  for (int c : clips_of(corpus, split.train)) videos.push_back(corpus.clips[static_cast<std::size_t>(c)].landmarks);
  const auto fit = geometry::fit_basis_from_videos(videos);
  const fs::path out = prepare_out(a.common);
  geometry::save_basis(out / "basis.mnet", fit.basis);
  nlohmann::json j;
  j["train_fraction"] = a.train_fraction;
  j["seed"] = a.common.seed;
  j["train"] = split.train;
  j["held_out"] = split.held_out;
  write_text(out / "split.json", j.dump(2) + "\n");
  std::cout << "fit-basis: " << videos.size() << " training clips, " << split.held_out.size()
            << " held-out identities -> " << (out / "basis.mnet").string() << "\n";
  return 0;
}

// ----------------------------------------------------- train-disentangler

struct TrainDisentanglerArgs {
  Common common;
  std::string corpus, basis;
  int steps = 0;
};

int run_train_disentangler(const TrainDisentanglerArgs& a) {
  train::TrainConfig config = train_config(a.common);
  if (a.steps > 0) config.disentangler_steps = a.steps;
  const auto corpus = synth::load_corpus(require_path(a.corpus, "corpus"));
  const fs::path basis_dir = require_path(a.basis, "basis directory");
  const auto basis = geometry::load_basis(require_path((basis_dir / "basis.mnet").string(), "basis file"));
  const auto split = read_split(basis_dir / "split.json");
  const auto train_clips = clips_of(corpus, split.train);
  const auto held_clips = clips_of(corpus, split.held_out);
  const auto train_ex = train::make_disentangler_examples(corpus, train_clips, basis);
  const auto held_ex = train::make_disentangler_examples(corpus, held_clips, basis);

  Rng init = Rng(config.seed).split(0xd1);
  train::Disentangler model(corpus.config.image_size, config.disentangler_hidden, init);
  const auto report = train::train_disentangler(model, corpus, train_ex, held_ex, basis, config);

  const fs::path out = prepare_out(a.common);
  quantize_parameters(model.parameters());
  Checkpoint ckpt;
  train::put_disentangler(ckpt, model);
  ckpt.save(out / "disentangler.mnet");
  std::ostringstream csv;
  csv.precision(17);
  csv << "step,loss\n";
  for (std::size_t i = 0; i < report.train_loss.size(); ++i) csv << i + 1 << ',' << report.train_loss[i] << '\n';
  write_text(out / "disentangler_loss.csv", csv.str());
  nlohmann::json j;
  j["steps"] = config.disentangler_steps;
  j["held_out_mse"] = report.held_out_mse;
  j["zero_baseline"] = report.zero_baseline;
  j["train_examples"] = train_ex.size();
  j["held_out_examples"] = held_ex.size();
  write_text(out / "report.json", j.dump(2) + "\n");
  std::cout << "train-disentangler: " << config.disentangler_steps << " steps, held-out MSE " << report.held_out_mse
            << " (zero predictor " << report.zero_baseline << ")\n";
  return 0;
}

// -------------------------------------------------------------- train-gan

struct TrainGanArgs {
  Common common;
  std::string corpus, split, resume;
  int steps = 0;
};

int run_train_gan(const TrainGanArgs& a) {
  train::TrainConfig config = train_config(a.common);
  if (a.steps > 0) config.steps = a.steps;
  const auto corpus = synth::load_corpus(require_path(a.corpus, "corpus"));
  const auto split = a.split.empty() ? synth::corpus_split(corpus, 0.8, config.seed) : read_split(a.split);
  train::GanTrainer trainer(config, corpus, clips_of(corpus, split.train));
  if (!a.resume.empty()) trainer.restore(Checkpoint::load(require_path(a.resume, "checkpoint")));
  const fs::path out = prepare_out(a.common);
  std::vector<train::StepLosses> rows;
  while (trainer.steps_done() < config.steps) {
    rows.push_back(trainer.step());
    const auto& r = rows.back();
    if (!r.finite()) {
      train::write_metrics_csv(out / "metrics.csv", rows);
      throw PreconditionError("training diverged at step " + std::to_string(r.step));
    }
    if (config.checkpoint_every > 0 && r.step % config.checkpoint_every == 0 && r.step < config.steps) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06lld.mnet", static_cast<long long>(r.step));
      trainer.checkpoint().save(out / name);
    }
  }
  trainer.checkpoint().save(out / "checkpoint.mnet");
  train::write_metrics_csv(out / "metrics.csv", rows);
  if (trainer.replacement_draws() > 0) {
    std::cerr << "train-gan: " << trainer.replacement_draws()
              << " batches sampled frames with replacement (clip shorter than K + 1)\n";
  }
  std::cout << "train-gan: " << rows.size() << " steps (total " << trainer.steps_done() << ") -> "
            << (out / "checkpoint.mnet").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- reenact

struct ReenactArgs {
  Common common;
  std::string corpus, generator, driver_clip, target_clip, disentangler, basis;
  int targets = 8;
  int frames = 0;
  bool landmark_transformer = false;
  double lambda_exp = geometry::kDefaultLambdaExp;
};

std::vector<int> pick_targets(int frames, int k, std::uint64_t seed) {
  Rng rng = Rng(seed).split(0x7a76);
  std::vector<int> order(static_cast<std::size_t>(frames));
  for (int i = 0; i < frames; ++i) order[static_cast<std::size_t>(i)] = i;
  if (k <= frames) {
    rng.shuffle(order);
    order.resize(static_cast<std::size_t>(k));
    std::sort(order.begin(), order.end());
    return order;
  }
  std::vector<int> out;
  for (int i = 0; i < k; ++i) out.push_back(rng.uniform_int(frames));
  return out;
}

int run_reenact(const ReenactArgs& a) {
  if (a.targets < 1) throw PreconditionError("--targets must be at least 1");
  const auto corpus = synth::load_corpus(require_path(a.corpus, "corpus"));
  const auto generator = train::load_generator(Checkpoint::load(require_path(a.generator, "generator checkpoint")));
  const int size = corpus.config.image_size;
  if (generator->config().image_size != size) {
    throw PreconditionError("generator expects " + std::to_string(generator->config().image_size) + " px, corpus has " +
                            std::to_string(size) + " px");
  }
  const int driver = find_clip(corpus, a.driver_clip);
  const int target = find_clip(corpus, a.target_clip);
  const auto& dclip = corpus.clips[static_cast<std::size_t>(driver)];
  const auto& tclip = corpus.clips[static_cast<std::size_t>(target)];
  const int frames = a.frames > 0 ? std::min(a.frames, dclip.frames()) : dclip.frames();
  const auto picks = pick_targets(tclip.frames(), a.targets, a.common.seed);

  std::vector<Image> y, r_y;
  for (int t : picks) {
    y.push_back(corpus.render(target, t));
    r_y.push_back(train::landmark_image(tclip.landmarks[static_cast<std::size_t>(t)], size));
  }
  const Tensor y_t = images_to_tensor(y);
  const Tensor r_y_t = images_to_tensor(r_y);

  std::unique_ptr<train::Disentangler> model;
  geometry::ExpressionBasis<double> basis;
  std::vector<Landmark68> target_ids;
  if (a.landmark_transformer) {
    model = train::get_disentangler(Checkpoint::load(require_path(a.disentangler, "disentangler checkpoint")));
    basis = geometry::load_basis(require_path((fs::path(a.basis) / "basis.mnet").string(), "basis file"));
    if (model->image_size() != size) throw PreconditionError("disentangler image size differs from the corpus");
    for (std::size_t i = 0; i < picks.size(); ++i) {
      const auto n = geometry::normalize_landmark(tclip.landmarks[static_cast<std::size_t>(picks[i])], basis.mean_landmark);
      target_ids.push_back(train::estimate_landmark_parts(*model, y[i], n.landmark, basis, a.lambda_exp).identity);
    }
  }

  const fs::path out = prepare_out(a.common);
  fs::create_directories(out / "frames");
  fs::create_directories(out / "reference" / "frames");
  std::vector<geometry::LandmarkRecord> driving, reference;
  generator->parameters().set_trainable(false);
  for (int t = 0; t < frames; ++t) {
    const Landmark68& l = dclip.landmarks[static_cast<std::size_t>(t)];
    const Image x = corpus.render(driver, t);
    Landmark68 drive = l;
    if (a.landmark_transformer) {
      const auto n = geometry::normalize_landmark(l, basis.mean_landmark);
      const auto parts = train::estimate_landmark_parts(*model, x, n.landmark, basis, a.lambda_exp);
      drive = geometry::denormalize(geometry::transform_landmark<double>(target_ids, parts.expression, basis.mean_landmark),
                                    n.transform);
    }
    const Tensor r_x = image_to_tensor(train::landmark_image(drive, size));
    const Tensor out_img = (*generator)(r_x, y_t, r_y_t, static_cast<int>(picks.size()));
    write_ppm(out / "frames" / frame_name(t), to_unit(tensor_to_image(out_img)));
    write_ppm(out / "reference" / "frames" / frame_name(t), to_unit(x));
    driving.push_back({"generated", t, drive});
    reference.push_back({dclip.name, t, l});
  }
  geometry::write_landmarks_jsonl(out / "landmarks.jsonl", driving);
  geometry::write_landmarks_jsonl(out / "reference" / "landmarks.jsonl", reference);
  nlohmann::json j;
  j["driver_clip"] = dclip.name;
  j["target_clip"] = tclip.name;
  j["target_frames"] = picks;
  j["landmark_transformer"] = a.landmark_transformer;
  j["lambda_exp"] = a.lambda_exp;
  write_text(out / "reenact.json", j.dump(2) + "\n");
  std::cout << "reenact: " << frames << " frames of " << dclip.name << " onto " << tclip.name << " (K=" << picks.size()
            << (a.landmark_transformer ? ", landmark transformer" : "") << ") -> " << out.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  Common common;
  std::string reference, generated;
};

struct FrameSet {
  std::vector<Image> images;
  std::vector<Landmark68> landmarks;
};

FrameSet read_frame_set(const fs::path& dir) {
  FrameSet s;
  for (const auto& r : geometry::read_landmarks_jsonl(require_path((dir / "landmarks.jsonl").string(), "landmark file"))) {
    s.images.push_back(read_ppm(require_path((dir / "frames" / frame_name(r.frame)).string(), "frame")));
    s.landmarks.push_back(r.points);
  }
  if (s.images.empty()) throw PreconditionError("no frames listed in " + (dir / "landmarks.jsonl").string());
  return s;
}

int run_eval(const EvalArgs& a) {
  const FrameSet ref = read_frame_set(require_path(a.reference, "reference directory"));
  const FrameSet gen = read_frame_set(require_path(a.generated, "generated directory"));
  if (ref.images.size() != gen.images.size()) {
    throw PreconditionError("reference has " + std::to_string(ref.images.size()) + " frames, generated has " +
                            std::to_string(gen.images.size()));
  }
  const Landmark68 templ = geometry::generalized_procrustes_mean(ref.landmarks);
  const auto report = eval::evaluate_frames(ref.images, gen.images, ref.landmarks, gen.landmarks, templ);
  const fs::path out = prepare_out(a.common);
  write_text(out / "metrics.csv", eval::format_report_csv(report));
  std::printf("eval: %zu frames  SSIM %.4f  PSNR %.2f dB  M-SSIM %.4f  M-PSNR %.2f dB  PRMSE %.3f deg\n",
              report.frames.size(), report.mean.ssim, report.mean.psnr, report.mean.m_ssim, report.mean.m_psnr,
              report.mean.pose_error);
  return 0;
}

// -------------------------------------------------------- export-attention

struct ExportAttentionArgs {
  Common common;
  std::string corpus, generator, driver_clip, target_clip;
  int targets = 4, frame = 0, row = -1, col = -1, block = 0;
};

int run_export_attention(const ExportAttentionArgs& a) {
  const auto corpus = synth::load_corpus(require_path(a.corpus, "corpus"));
  const auto g = train::load_generator(Checkpoint::load(require_path(a.generator, "generator checkpoint")));
  const int size = corpus.config.image_size;
  if (g->config().image_size != size) throw PreconditionError("generator image size differs from the corpus");
  if (a.block < 0 || a.block >= kBlenderBlocks) throw PreconditionError("--block must be in [0, 3)");
  const int driver = find_clip(corpus, a.driver_clip);
  const int target = find_clip(corpus, a.target_clip);
  const auto& dclip = corpus.clips[static_cast<std::size_t>(driver)];
  const auto& tclip = corpus.clips[static_cast<std::size_t>(target)];
  if (a.frame < 0 || a.frame >= dclip.frames()) throw PreconditionError("--frame outside the driver clip");
  const auto picks = pick_targets(tclip.frames(), a.targets, a.common.seed);
  std::vector<Image> y, r_y;
  for (int t : picks) {
    y.push_back(corpus.render(target, t));
    r_y.push_back(train::landmark_image(tclip.landmarks[static_cast<std::size_t>(t)], size));
  }
  g->parameters().set_trainable(false);
  const Tensor r_x = image_to_tensor(train::landmark_image(dclip.landmarks[static_cast<std::size_t>(a.frame)], size));
  const auto fwd = g->forward(r_x, images_to_tensor(y), images_to_tensor(r_y), static_cast<int>(picks.size()));
  Tensor z = fwd.z_x;
  for (int b = 0; b < a.block; ++b) z = attention_block(z, fwd.z_y, g->blender.blocks[static_cast<std::size_t>(b)]);
  const int row = a.row >= 0 ? a.row : z.dim(2) / 2;
  const int col = a.col >= 0 ? a.col : z.dim(3) / 2;
  if (row >= z.dim(2) || col >= z.dim(3)) throw PreconditionError("query position outside the driver feature grid");
  const Tensor map = export_attention_map(z, fwd.z_y, g->blender.blocks[static_cast<std::size_t>(a.block)], row, col);
  const auto files = write_attention_maps(prepare_out(a.common), "attention", map);
  std::cout << "export-attention: block " << a.block << " query (" << row << ", " << col << "), " << files.size()
            << " maps -> " << a.common.out << "\n";
  return 0;
}

// ---------------------------------------------------- inspect-checkpoint

struct InspectArgs {
  Common common;
  std::string checkpoint;
};

int run_inspect(const InspectArgs& a) {
  const Checkpoint ckpt = Checkpoint::load(require_path(a.checkpoint, "checkpoint"));
  std::ostringstream os;
  std::size_t total = 0;
  for (const auto& [name, rec] : ckpt.records()) {
    os << name << " [";
    for (std::size_t i = 0; i < rec.dims.size(); ++i) os << (i ? "," : "") << rec.dims[i];
    os << "] " << rec.values.size() << "\n";
    total += rec.values.size();
  }
  os << "records " << ckpt.records().size() << ", values " << total << "\n";
  if (ckpt.contains("config.image_size")) {
    const GeneratorConfig c = get_config(ckpt);
    os << "generator image_size " << c.image_size << " base_channels " << c.base_channels << " max_channels "
       << c.max_channels << " targets " << c.targets << " identities " << c.identities << "\n";
  }
  if (ckpt.contains("train.step")) os << "training step " << ckpt.get_u64("train.step") << "\n";
  write_text(prepare_out(a.common) / "checkpoint.txt", os.str());
  std::cout << os.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot face reenactment on synthetic landmark corpora"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus");
  add_common(synth_cmd, synth_args.common);
  synth_cmd->add_option("--identities", synth_args.identities, "Number of identities");
  synth_cmd->add_option("--clips", synth_args.clips, "Clips per identity");
  synth_cmd->add_option("--frames", synth_args.frames, "Frames per clip");
  synth_cmd->add_option("--size", synth_args.size, "Image size in pixels");

  FitBasisArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit-basis", "Fit the expression basis on the training identities");
  add_common(fit_cmd, fit_args.common);
  fit_cmd->add_option("--corpus", fit_args.corpus, "Corpus directory")->required();
  fit_cmd->add_option("--train-fraction", fit_args.train_fraction, "Fraction of identities used for fitting");

  TrainDisentanglerArgs dis_args;
  auto* dis_cmd = app.add_subcommand("train-disentangler", "Train the expression-coefficient regressor");
  add_common(dis_cmd, dis_args.common);
  dis_cmd->add_option("--corpus", dis_args.corpus, "Corpus directory")->required();
  dis_cmd->add_option("--basis", dis_args.basis, "fit-basis output directory")->required();
  dis_cmd->add_option("--steps", dis_args.steps, "Override disentangler_steps");

  TrainGanArgs gan_args;
  auto* gan_cmd = app.add_subcommand("train-gan", "Train the generator and discriminator");
  add_common(gan_cmd, gan_args.common);
  gan_cmd->add_option("--corpus", gan_args.corpus, "Corpus directory")->required();
  gan_cmd->add_option("--split", gan_args.split, "split.json from fit-basis (default: 80% split by seed)");
  gan_cmd->add_option("--steps", gan_args.steps, "Override steps (total, including resumed ones)");
  gan_cmd->add_option("--resume", gan_args.resume, "Checkpoint to resume from");

  ReenactArgs re_args;
  auto* re_cmd = app.add_subcommand("reenact", "Drive a target identity with a driver clip");
  add_common(re_cmd, re_args.common);
  re_cmd->add_option("--corpus", re_args.corpus, "Corpus directory")->required();
  re_cmd->add_option("--generator", re_args.generator, "train-gan checkpoint")->required();
  re_cmd->add_option("--driver-clip", re_args.driver_clip, "Driver clip name")->required();
  re_cmd->add_option("--target-clip", re_args.target_clip, "Target clip name")->required();
  re_cmd->add_option("--targets", re_args.targets, "Number of target frames K (default 8)");
  re_cmd->add_option("--frames", re_args.frames, "Limit the number of driver frames");
  auto* dis_opt = re_cmd->add_option("--disentangler", re_args.disentangler, "train-disentangler checkpoint");
  auto* basis_opt = re_cmd->add_option("--basis", re_args.basis, "fit-basis output directory");
  re_cmd->add_flag("--landmark-transformer", re_args.landmark_transformer, "Transfer the driver expression onto the target identity")
      ->needs(dis_opt)
      ->needs(basis_opt);
  re_cmd->add_option("--lambda-exp", re_args.lambda_exp, "Expression intensity (default 1.5)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "SSIM, PSNR, masked variants and PRMSE as CSV");
  add_common(eval_cmd, eval_args.common);
  eval_cmd->add_option("--reference", eval_args.reference, "Directory with frames/ and landmarks.jsonl")->required();
  eval_cmd->add_option("--generated", eval_args.generated, "Directory with frames/ and landmarks.jsonl")->required();

  ExportAttentionArgs att_args;
  auto* att_cmd = app.add_subcommand("export-attention", "Write blender attention maps as PGM images");
  add_common(att_cmd, att_args.common);
  att_cmd->add_option("--corpus", att_args.corpus, "Corpus directory")->required();
  att_cmd->add_option("--generator", att_args.generator, "train-gan checkpoint")->required();
  att_cmd->add_option("--driver-clip", att_args.driver_clip, "Driver clip name")->required();
  att_cmd->add_option("--target-clip", att_args.target_clip, "Target clip name")->required();
  att_cmd->add_option("--targets", att_args.targets, "Number of target frames K (default 4)");
  att_cmd->add_option("--frame", att_args.frame, "Driver frame index");
  att_cmd->add_option("--row", att_args.row, "Query row in the driver feature grid (default: center)");
  att_cmd->add_option("--col", att_args.col, "Query column (default: center)");
  att_cmd->add_option("--block", att_args.block, "Blender block 0-2");

  InspectArgs insp_args;
  auto* insp_cmd = app.add_subcommand("inspect-checkpoint", "List the records of a checkpoint");
  add_common(insp_cmd, insp_args.common);
  insp_cmd->add_option("--checkpoint", insp_args.checkpoint, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth_args);
    if (fit_cmd->parsed()) return run_fit_basis(fit_args);
    if (dis_cmd->parsed()) return run_train_disentangler(dis_args);
    if (gan_cmd->parsed()) return run_train_gan(gan_args);
    if (re_cmd->parsed()) return run_reenact(re_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (att_cmd->parsed()) return run_export_attention(att_args);
    if (insp_cmd->parsed()) return run_inspect(insp_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
