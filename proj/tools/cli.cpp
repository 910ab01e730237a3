#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "cleardr/checkpoint.hpp"
#include "cleardr/clear.hpp"
#include "cleardr/discovery.hpp"
#include "cleardr/error.hpp"
#include "cleardr/image.hpp"
#include "cleardr/selftest.hpp"
#include "cleardr/sequencer.hpp"
#include "cleardr/synthetic.hpp"

namespace cleardr::cli {
namespace {

struct TrainArgs {
  std::string csv;
  std::string images;
  std::string out = "model.clrs";
  std::string metrics = "metrics.csv";
  std::string laterality = "all";
  std::string layers;
  std::string grades;
  std::size_t size = 64;
  double crop_threshold = 10.0;
  TrainConfig train;
  bool no_hflip = false;
  bool no_vflip = false;
};

struct GradeArgs {
  std::string model;
  std::string image;
  double crop_threshold = 10.0;
};

struct ClearArgs {
  std::string model;
  std::string image;
  std::string out = "clear.png";
  std::string gating = "deconvnet";
  std::string overlay_out;
  std::string sidecar;
  std::string full_sidecar;
  std::string palette = "default";
  double alpha = -1.0;
  std::size_t box = 0;
  double crop_threshold = 10.0;
};

struct EvalArgs {
  std::string model;
  std::string csv;
  std::string images;
  std::string laterality = "all";
  double crop_threshold = 10.0;
};

struct SelftestArgs {
  std::uint64_t seed = 1;
  std::string inject_fault;
};

struct SynthArgs {
  std::string out;
  std::size_t count = 600;
  std::size_t classes = 3;
  std::uint64_t seed = 7;
};

// Reads plain key=value files and files every section-less key under the
// subcommand being run, so `cleardr train --config f` can set `epochs=5`.
class SubcommandConfig : public CLI::ConfigBase {
 public:
  explicit SubcommandConfig(const CLI::App& app) : app_(app) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigBase::from_config(input);
    const auto subs = app_.get_subcommands();
    if (subs.empty()) return items;
    for (auto& item : items) {
      if (item.parents.empty() && item.name != "++" && item.name != "--") item.parents = {subs.front()->get_name()};
    }
    return items;
  }

 private:
  const CLI::App& app_;
};

void enable_config(CLI::App& app) {
  app.set_config("--config", "", "key=value file for the subcommand's flags; '#' starts a comment; "
                 "command-line flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.config_formatter(std::make_shared<SubcommandConfig>(app));
}

void add_config(CLI::App* sub) {
  sub->fallthrough();
  sub->footer("Also accepts --config FILE: key=value lines using the long flag names above.");
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(item);
  return out;
}

LabeledDataset load_dataset(const std::string& csv, const std::string& images, Laterality filter,
                            const SequencerConfig& cfg, double crop_threshold) {
  const DatasetManifest manifest = load_manifest(csv, images, filter, cfg.grades.count());
  LabeledDataset data{{}, cfg.grades.count()};
  for (const auto& row : manifest.rows) {
    data.samples.push_back(
        Sample{load_preprocessed(row.file, cfg.input.h, cfg.input.w, crop_threshold), row.grade, row.image});
  }
  return data;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (!std::filesystem::is_regular_file(a.csv)) throw IoError("label CSV not found: " + a.csv);
  if (!std::filesystem::is_directory(a.images)) throw IoError("image directory not found: " + a.images);
  GradeSet grades = a.grades.empty() ? GradeSet::diabetic_retinopathy() : GradeSet{split_names(a.grades)};
  SequencerConfig cfg = SequencerConfig::desk_default(grades);
  cfg.input = Shape{1, 3, a.size, a.size};
  if (!a.layers.empty()) cfg.layers = parse_layers(a.layers);
  cfg.validate();

  TrainConfig tc = a.train;
  tc.augment = AugmentFlags{!a.no_hflip, !a.no_vflip};
  tc.validate();

  const LabeledDataset data = load_dataset(a.csv, a.images, parse_laterality(a.laterality), cfg, a.crop_threshold);
  if (data.empty()) throw DomainError("no images selected from " + a.csv);
  auto [train_set, test_set] = split(data, tc.split_fraction, tc.seed);
  out << "train=" << train_set.data.size() << " test=" << test_set.data.size() << "\n";

  std::ofstream metrics(a.metrics, std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics file " + a.metrics);
  const SequencerModel initial = initialize(cfg, tc.seed);
  const TrainResult result = train(
      initial, train_set, tc,
      [&](const EpochMetrics& m) {
        const std::string line = format_metrics_line(m);
        metrics << line << "\n";
        metrics.flush();
        out << "epoch " << line << "\n";
      },
      &test_set);
  save_model(result.model, a.out);
  out << "checkpoint=" << a.out << "\n";
  return kOk;
}

int cmd_grade(const GradeArgs& a, std::ostream& out) {
  const SequencerModel model = load_model(a.model);
  const Shape& in = model.config.input;
  const Tensor image = normalize_channels(load_preprocessed(a.image, in.h, in.w, a.crop_threshold), model.normalization);
  const GradePrediction p = predict_grade(model, image);
  out << "grade=" << p.grade << " name=" << model.config.grades.names[p.grade] << " probs=";
  for (std::size_t i = 0; i < p.probabilities.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", p.probabilities[i]);
    out << (i ? "," : "") << buf;
  }
  out << "\n";
  return kOk;
}

std::string default_overlay_path(const std::string& out) {
  std::filesystem::path p(out);
  return (p.parent_path() / (p.stem().string() + "_overlay.png")).string();
}

int cmd_clear_map(const ClearArgs& a, std::ostream& out) {
  const GatingPolicy policy = parse_gating(a.gating);
  if (a.palette != "default" && a.palette != "even") {
    throw DomainError("unknown palette '" + a.palette + "' (valid: default, even)");
  }
  const SequencerModel model = load_model(a.model);
  const Shape& in = model.config.input;
  RawImage source = read_image(a.image);
  if (a.crop_threshold >= 0.0) source = selective_crop(source, a.crop_threshold);
  source = resize(source, in.h, in.w);
  const Tensor image = normalize_channels(to_tensor(source), model.normalization);
  const ForwardTrace trace = forward(model, image);
  const AttentiveResponseStack stack = attentive_stack(trace, model, policy);
  const DominantClassMap classes = dominant_class_map(stack);
  const DominantResponseMap response = dominant_response_map(stack, classes);
  const ColorMapDictionary colors = a.palette == "even" ? ColorMapDictionary::evenly_spaced(stack.count())
                                                        : ColorMapDictionary::for_grades(stack.count());
  const ClearMap map = compose_clear_map(
      classes, response, colors,
      ClearProvenance{model.fingerprint(), std::filesystem::path(a.image).stem().string(), policy});
  write_png(map.image, a.out);
  out << "grade=" << trace.predicted_grade() << " name=" << model.config.grades.names[trace.predicted_grade()]
      << " gating=" << gating_name(policy) << "\n";
  out << "clear_map=" << a.out << "\n";

  if (a.alpha >= 0.0 || a.box > 0) {
    const double alpha = a.alpha >= 0.0 ? a.alpha : 0.5;
    RawImage blended = overlay(map.image, source, alpha);
    if (a.box > 0) {
      const Box box = most_attentive_region(response.rectified, a.box);
      draw_box(blended, box);
      out << "box=" << box.x << "," << box.y << "," << box.width << "," << box.height << "\n";
    }
    const std::string path = a.overlay_out.empty() ? default_overlay_path(a.out) : a.overlay_out;
    write_png(blended, path);
    out << "overlay=" << path << "\n";
  }
  if (!a.sidecar.empty()) {
    write_stack_sidecar(stack.maps, a.sidecar);
    out << "sidecar=" << a.sidecar << "\n";
  }
  if (!a.full_sidecar.empty()) {
    write_stack_sidecar(back_project(model, trace, trace.final_response(), policy), a.full_sidecar);
    out << "full_sidecar=" << a.full_sidecar << "\n";
  }
  return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const SequencerModel model = load_model(a.model);
  const TestSet test{load_dataset(a.csv, a.images, parse_laterality(a.laterality), model.config, a.crop_threshold)};
  const Evaluation ev = evaluate(model, test);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "accuracy=%.6f", ev.accuracy);
  out << buf << "\n";
  for (const auto& row : ev.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? " " : "") << row[j];
    out << "\n";
  }
  return kOk;
}

int cmd_selftest(const SelftestArgs& a, std::ostream& out) {
  SelftestOptions opts;
  opts.seed = a.seed;
  if (!a.inject_fault.empty()) {
    if (a.inject_fault != "adjoint") throw DomainError("unknown fault '" + a.inject_fault + "' (valid: adjoint)");
    opts.perturb_adjoint = true;
  }
  bool all = true;
  for (const auto& r : run_selftest(opts)) {
    out << r.name << ": " << (r.ok ? "ok" : "FAIL") << " " << r.detail << "\n";
    all = all && r.ok;
  }
  return all ? kOk : kCheckFailed;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  synthetic::PlantedOptions opts;
  opts.classes = a.classes;
  opts.seed = a.seed;
  const auto images = synthetic::generate(a.count, opts);
  synthetic::write_fixture(images, a.out);
  out << "wrote " << images.size() << " images to " << a.out << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CLEAR-DR: interpretable grading with class-enhanced attentive response maps", "cleardr"};
  app.require_subcommand(1);
  enable_config(app);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a sequencer from an image,level CSV");
  add_config(train_cmd);
  train_cmd->add_option("--csv", train_args.csv, "Label CSV with header image,level")->required();
  train_cmd->add_option("--images", train_args.images, "Directory holding the images")->required();
  train_cmd->add_option("--out", train_args.out, "Checkpoint path")->capture_default_str();
  train_cmd->add_option("--metrics", train_args.metrics, "Per-epoch metrics CSV")->capture_default_str();
  train_cmd->add_option("--seed", train_args.train.seed, "Seed for init, split, shuffle and augmentation")
      ->capture_default_str();
  train_cmd->add_option("--epochs", train_args.train.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--lr", train_args.train.learning_rate, "SGD learning rate")->capture_default_str();
  train_cmd->add_option("--momentum", train_args.train.momentum, "SGD momentum")->capture_default_str();
  train_cmd->add_option("--batch", train_args.train.batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--split", train_args.train.split_fraction, "Training fraction of the data")
      ->capture_default_str();
  train_cmd->add_option("--laterality", train_args.laterality, "all, left or right")->capture_default_str();
  train_cmd->add_option("--layers", train_args.layers, "Layer stack, e.g. conv(16,3,3,1,1),relu,...,gap");
  train_cmd->add_option("--grades", train_args.grades, "Comma-separated grade names (default: 5 DR grades)");
  train_cmd->add_option("--size", train_args.size, "Square input canvas")->capture_default_str();
  train_cmd->add_option("--crop-threshold", train_args.crop_threshold, "Crop luma threshold; negative disables")
      ->capture_default_str();
  train_cmd->add_flag("--no-hflip", train_args.no_hflip, "Disable horizontal flip augmentation");
  train_cmd->add_flag("--no-vflip", train_args.no_vflip, "Disable vertical flip augmentation");

  GradeArgs grade_args;
  auto* grade_cmd = app.add_subcommand("grade", "Predict the grade of one image");
  add_config(grade_cmd);
  grade_cmd->add_option("--model", grade_args.model, "Checkpoint")->required();
  grade_cmd->add_option("--image", grade_args.image, "PNG or JPEG image")->required();
  grade_cmd->add_option("--crop-threshold", grade_args.crop_threshold, "Crop luma threshold; negative disables")
      ->capture_default_str();

  ClearArgs clear_args;
  auto* clear_cmd = app.add_subcommand("clear-map", "Render the CLEAR map of one image");
  add_config(clear_cmd);
  clear_cmd->add_option("--model", clear_args.model, "Checkpoint")->required();
  clear_cmd->add_option("--image", clear_args.image, "PNG or JPEG image")->required();
  clear_cmd->add_option("--out", clear_args.out, "CLEAR map PNG")->capture_default_str();
  clear_cmd->add_option("--gating", clear_args.gating, "Backward ReLU policy: deconvnet, guided, none")
      ->capture_default_str();
  clear_cmd->add_option("--alpha", clear_args.alpha, "Write an overlay blended with this CLEAR weight in [0,1]");
  clear_cmd->add_option("--overlay-out", clear_args.overlay_out, "Overlay PNG (default <out>_overlay.png)");
  clear_cmd->add_option("--box", clear_args.box, "Draw the most attentive SxS region on the overlay");
  clear_cmd->add_option("--sidecar", clear_args.sidecar, "Write the raw per-grade maps (CLRA)");
  clear_cmd->add_option("--full-sidecar", clear_args.full_sidecar,
                        "Write the back-projection of the whole final response (CLRA, N=1)");
  clear_cmd->add_option("--palette", clear_args.palette, "default or even")->capture_default_str();
  clear_cmd->add_option("--crop-threshold", clear_args.crop_threshold, "Crop luma threshold; negative disables")
      ->capture_default_str();

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy and confusion matrix over a labeled set");
  add_config(eval_cmd);
  eval_cmd->add_option("--model", eval_args.model, "Checkpoint")->required();
  eval_cmd->add_option("--csv", eval_args.csv, "Label CSV with header image,level")->required();
  eval_cmd->add_option("--images", eval_args.images, "Directory holding the images")->required();
  eval_cmd->add_option("--laterality", eval_args.laterality, "all, left or right")->capture_default_str();
  eval_cmd->add_option("--crop-threshold", eval_args.crop_threshold, "Crop luma threshold; negative disables")
      ->capture_default_str();

  SelftestArgs selftest_args;
  auto* selftest_cmd = app.add_subcommand("selftest", "Run the embedded oracle checks");
  selftest_cmd->add_option("--seed", selftest_args.seed, "Seed for the random instances")->capture_default_str();
  selftest_cmd->add_option("--inject-fault", selftest_args.inject_fault, "Debug hook: 'adjoint' perturbs a kernel");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Write a planted-lesion fixture dataset");
  synth_cmd->add_option("--out", synth_args.out, "Output directory")->required();
  synth_cmd->add_option("--count", synth_args.count, "Number of images")->capture_default_str();
  synth_cmd->add_option("--classes", synth_args.classes, "Number of classes (1-4)")->capture_default_str();
  synth_cmd->add_option("--seed", synth_args.seed, "Generator seed")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_args, out);
    if (grade_cmd->parsed()) return cmd_grade(grade_args, out);
    if (clear_cmd->parsed()) return cmd_clear_map(clear_args, out);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, out);
    if (selftest_cmd->parsed()) return cmd_selftest(selftest_args, out);
    if (synth_cmd->parsed()) return cmd_synth(synth_args, out);
  } catch (const DivergenceError& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kInputError;
}

}  // namespace cleardr::cli
