#include "cmdf/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "cmdf/data.hpp"
#include "cmdf/errors.hpp"
#include "cmdf/metrics.hpp"
#include "cmdf/trainer.hpp"

namespace cmdf::cli {

namespace fs = std::filesystem;

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ValidationError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ValidationError(where + ": empty key");
    if (!out.emplace(key, value).second) throw ValidationError(where + ": key '" + key + "' repeated");
  }
  return out;
}

namespace {

struct GenOpts {
  std::string out;
  std::size_t scenes = 8;
  SceneGenConfig cfg;
};

struct TrainOpts {
  std::string data;
  std::string out;
  std::string log;
  std::string ckpt;
  std::size_t tta = 1;
  std::size_t seeds = 5;
  std::string gate = "channel";
  std::string activation = "leaky_relu";
  std::string schedule = "cosine";
  bool no_cmd = false;
  bool no_2to3 = false;
  bool no_3to2 = false;
  TrainConfig cfg;
};

struct ProjectOpts {
  std::string scene;
  std::string out;
  std::size_t classes = 4;
};

void add_model_flags(CLI::App* sub, TrainOpts& o) {
  sub->add_option("--epochs", o.cfg.epochs, "Training epochs");
  sub->add_option("--lr", o.cfg.lr, "SGD learning rate");
  sub->add_option("--momentum", o.cfg.momentum, "SGD momentum");
  sub->add_option("--seed", o.cfg.seed, "Run seed");
  sub->add_option("--classes", o.cfg.classes, "Class count C");
  sub->add_option("--width", o.cfg.width, "Feature width d");
  sub->add_option("--hidden", o.cfg.hidden, "Point encoder hidden width");
  sub->add_option("--fusion-depth", o.cfg.fusion_depth, "Layers per fusion MLP");
  sub->add_option("--gate", o.gate, "Fusion gate: channel or scalar")->check(CLI::IsMember({"channel", "scalar"}));
  sub->add_option("--activation", o.activation, "relu or leaky_relu")->check(CLI::IsMember({"relu", "leaky_relu"}));
  sub->add_option("--schedule", o.schedule, "Learning-rate schedule: constant or cosine")
      ->check(CLI::IsMember({"constant", "cosine"}));
  sub->add_option("--coord-scale", o.cfg.coord_scale, "Multiplier on raw coordinates in the point features");
  sub->add_option("--tta-angles", o.cfg.tta_angles, "Rotations for test-time voting");
  sub->add_option("--flip-prob", o.cfg.augment.flip_prob, "Joint image/correspondence flip probability");
  sub->add_flag("--cmd-squared", o.cfg.cmd_squared, "Squared distance in the distillation loss");
}

void add_toggle_flags(CLI::App* sub, TrainOpts& o) {
  sub->add_flag("--no-cmd", o.no_cmd, "Disable cross-modality distillation");
  sub->add_flag("--no-2to3", o.no_2to3, "Disable 2D-to-3D fusion");
  sub->add_flag("--no-3to2", o.no_3to2, "Disable 3D-to-2D fusion and its loss");
}

void finish_train_config(TrainOpts& o) {
  o.cfg.use_cmd = !o.no_cmd;
  o.cfg.use_2to3 = !o.no_2to3;
  o.cfg.use_3to2 = !o.no_3to2;
  o.cfg.gate = o.gate == "scalar" ? GateMode::scalar : GateMode::channel;
  o.cfg.activation = o.activation == "leaky_relu" ? Activation::leaky_relu : Activation::relu;
  o.cfg.schedule = o.schedule == "constant" ? LrSchedule::constant : LrSchedule::cosine;
  o.cfg.validate();
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError(path.string() + ": cannot open config file");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string option_key(const CLI::Option* opt) {
  return opt->get_lnames().empty() ? std::string() : opt->get_lnames().front();
}

// Config-file values become leading flags so that command-line flags, which
// come later, win under the take-last policy.
std::vector<std::string> config_args(const CLI::App* sub, const std::string& path) {
  std::vector<std::string> args;
  std::set<std::string> known;
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string key = option_key(opt);
    if (!key.empty() && key != "help" && key != "config") known.insert(key);
  }
  for (const auto& [key, value] : parse_config_text(read_text(path), path)) {
    if (!known.count(key)) throw ValidationError(path + ": unknown key '" + key + "' for '" + sub->get_name() + "'");
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

std::string find_config_path(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  return path;
}

void echo_config(const CLI::App* sub, std::ostream& err) {
  err << "# resolved config: " << sub->get_name() << "\n";
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string key = option_key(opt);
    if (key.empty() || key == "help") continue;
    std::string value;
    if (opt->count() > 0 && !opt->results().empty()) {
      value = opt->results().back();
    } else if (opt->get_expected_min() == 0) {
      value = opt->count() > 0 ? "true" : "false";
    } else {
      value = opt->get_default_str();
    }
    err << key << " = " << value << "\n";
  }
}

int cmd_gen(const GenOpts& o, std::ostream& out) {
  o.cfg.validate();
  const auto scenes = generate_dataset(o.cfg, o.scenes);
  try {
    save_dataset(scenes, o.out);
  } catch (const FormatError& e) {
    throw ValidationError(e.what());
  }
  out << "wrote " << scenes.size() << " scenes to " << o.out << "\n";
  return kOk;
}

std::vector<Scene> load_data(const std::string& dir) {
  const auto scenes = load_dataset(dir);
  if (scenes.empty()) throw ValidationError(dir + ": dataset has no scenes");
  return scenes;
}

int cmd_train(TrainOpts& o, std::ostream& out, std::ostream& err) {
  finish_train_config(o);
  const auto scenes = load_data(o.data);
  const std::string log_path = o.log.empty() ? o.out + ".csv" : o.log;
  std::vector<LogRow> partial;
  TrainResult result;
  try {
    result = train(scenes, o.cfg, [&](const LogRow& row) { partial.push_back(row); });
  } catch (const NumericError& e) {
    std::ofstream(log_path, std::ios::binary) << format_train_log_csv(partial);
    err << "error: " << e.what() << " (step " << e.step() << ")\n";
    return kNumeric;
  }
  save_model(result.state, o.out);
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw FormatError(log_path + ": cannot open for writing");
  log << format_train_log_csv(result.log);
  out << "trained " << result.log.size() << " steps; checkpoint " << o.out << ", log " << log_path << "\n";
  return kOk;
}

int cmd_eval(const TrainOpts& o, std::ostream& out) {
  if (o.tta < 1) throw ValidationError("--tta must be >= 1");
  const ModelState state = load_model(o.ckpt);
  const auto scenes = load_data(o.data);
  for (const auto& s : scenes) {
    try {
      s.validate(state.classes);
    } catch (const ValidationError& e) {
      throw FormatError(std::string("dataset does not match checkpoint: ") + e.what());
    }
  }
  out << format_report_csv(evaluate(scenes, state, o.tta));
  return kOk;
}

int cmd_project(const ProjectOpts& o, std::ostream& out) {
  Scene scene;
  try {
    scene = load_scene(o.scene);
  } catch (const FormatError& e) {
    throw ValidationError(e.what());
  }
  scene.validate(o.classes);
  const CorrespondenceTable corr = build_correspondence(scene.cloud, scene.cam);
  Image overlay = scene.image;
  for (std::size_t k = 0; k < corr.n_overlap(); ++k) {
    const Eigen::Vector3d c = class_color(scene.labels[corr.indices[k]], o.classes);
    for (int ch = 0; ch < 3; ++ch) overlay.at(corr.pixels[k].row, corr.pixels[k].col, ch) = c[ch];
  }
  write_ppm(overlay, o.out);
  out << "in_fov_points " << corr.n_overlap() << "\n";
  out << "out_of_fov_points " << corr.n_points() - corr.n_overlap() << "\n";
  return kOk;
}

int cmd_ablate(TrainOpts& o, std::ostream& out) {
  finish_train_config(o);
  if (o.seeds < 1) throw ValidationError("--seeds must be >= 1");
  const auto split = split_dataset(load_data(o.data));
  AblationConfig cfg;
  cfg.base = o.cfg;
  cfg.seeds = o.seeds;
  out << format_ablation_markdown(run_ablation(split, cfg));
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Camera-LIDAR fusion with cross-modality distillation"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  std::string config_path;

  GenOpts gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "Generate a synthetic paired dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--scenes", gen.scenes, "Scene count");
  gen_cmd->add_option("--seed", gen.cfg.seed, "Generator seed");
  gen_cmd->add_option("--classes", gen.cfg.classes, "Class count C");
  gen_cmd->add_option("--fov-frac", gen.cfg.fov_fraction, "Share of the sweep the camera sees, in (0, 1]");
  gen_cmd->add_option("--points-per-class", gen.cfg.points_per_class, "Points per class");
  gen_cmd->add_option("--objects-per-class", gen.cfg.objects_per_class, "Objects per class");
  gen_cmd->add_option("--extent", gen.cfg.world_extent, "Maximum object range in meters");
  gen_cmd->add_option("--noise", gen.cfg.noise_sigma, "Point jitter sigma in meters");
  gen_cmd->add_option("--color-noise", gen.cfg.color_noise, "Image noise sigma");
  gen_cmd->add_option("--image-width", gen.cfg.image_width, "Image width");
  gen_cmd->add_option("--image-height", gen.cfg.image_height, "Image height");

  TrainOpts tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train and write a checkpoint plus CSV log");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", tr.log, "Training log CSV (default <out>.csv)");
  add_model_flags(train_cmd, tr);
  add_toggle_flags(train_cmd, tr);

  TrainOpts ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Print the per-class IoU report");
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--tta", ev.tta, "Rotations for test-time voting (1 = off)");

  ProjectOpts pr;
  CLI::App* project_cmd = app.add_subcommand("project", "Overlay projected points on the camera image");
  project_cmd->add_option("--scene", pr.scene, "Scene directory")->required();
  project_cmd->add_option("--out", pr.out, "Overlay PPM path")->required();
  project_cmd->add_option("--classes", pr.classes, "Class count used for colours");

  TrainOpts ab;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Fusion / distillation ablation table");
  ablate_cmd->add_option("--data", ab.data, "Dataset directory")->required();
  ablate_cmd->add_option("--seeds", ab.seeds, "Seeds per configuration");
  add_model_flags(ablate_cmd, ab);

  for (CLI::App* sub : app.get_subcommands({})) {
    sub->add_option("--config", config_path, "Flat key = value file; flags override it");
  }

  try {
    std::vector<std::string> argv = args;
    const std::string cfg_file = find_config_path(args);
    if (!cfg_file.empty() && !args.empty()) {
      if (CLI::App* sub = app.get_subcommand_no_throw(args.front())) {
        const auto extra = config_args(sub, cfg_file);
        argv.insert(argv.begin() + 1, extra.begin(), extra.end());
      }
    }
    std::reverse(argv.begin(), argv.end());
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    for (CLI::App* sub : app.get_subcommands()) echo_config(sub, err);
    if (gen_cmd->parsed()) return cmd_gen(gen, out);
    if (train_cmd->parsed()) return cmd_train(tr, out, err);
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (project_cmd->parsed()) return cmd_project(pr, out);
    if (ablate_cmd->parsed()) return cmd_ablate(ab, out);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kArtifact;
  } catch (const std::invalid_argument& e) {  // ValidationError, ShapeError
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace cmdf::cli
