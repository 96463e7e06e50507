// toon3d command line: align, eval, export, synth, validate.
//
// Exit status: 0 success, 1 pipeline error ("error: <module>: <message>" on
// stderr), 2 usage error.

#include <CLI11.hpp>
#include <toml.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "toon3d/toon3d.hpp"

namespace fs = std::filesystem;
using namespace toon3d;

namespace {

enum class Mode { Full, CameraOnly, TraditionalBa };

Mode parse_mode(const std::string& s) {
  if (s == "full") return Mode::Full;
  if (s == "camera-only") return Mode::CameraOnly;
  if (s == "traditional-ba") return Mode::TraditionalBa;
  throw Error("config", "unknown mode '" + s + "' (expected full, camera-only or traditional-ba)");
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::Full: return "full";
    case Mode::CameraOnly: return "camera-only";
    default: return "traditional-ba";
  }
}

DataTerm parse_data_term(const std::string& s) {
  if (s == "l3d") return DataTerm::L3D;
  if (s == "l2d") return DataTerm::L2D;
  throw Error("config", "unknown data term '" + s + "' (expected l3d or l2d)");
}

int default_threads() {
  if (const char* env = std::getenv("TOON3D_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw Error("config", std::string("TOON3D_THREADS must be a positive integer, got '") + env + "'");
  }
  return static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
}

struct RunConfig {
  OptimizerConfig optimizer;
  LossWeights weights;
  Mode mode = Mode::Full;
  int holdout = 5;
  std::vector<double> alphas{0.03};
  std::vector<std::string> methods{"full", "camera-only", "traditional-ba"};
  int stride = 2;
  int threads = 1;
};

nlohmann::json config_to_json(const RunConfig& c) {
  const OptimizerConfig& o = c.optimizer;
  return {{"mode", mode_name(c.mode)},
          {"optimizer",
           {{"lr_rotation", o.lr_rotation},
            {"lr_translation", o.lr_translation},
            {"lr_intrinsics", o.lr_intrinsics},
            {"lr_scale_shift", o.lr_scale_shift},
            {"lr_vertices", o.lr_vertices},
            {"lr_points", o.lr_points},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"epsilon", o.epsilon},
            {"camera_iterations", o.camera_iterations},
            {"deform_iterations", o.deform_iterations},
            {"ba_iterations", o.ba_iterations},
            {"ba_camera_lr_scale", o.ba_camera_lr_scale},
            {"seed", o.seed},
            {"jitter_degrees", o.jitter_degrees},
            {"data_term", o.data_term == DataTerm::L3D ? "l3d" : "l2d"}}},
          {"weights", weights_to_json(c.weights)},
          {"eval", {{"holdout", c.holdout}, {"alphas", c.alphas}, {"methods", c.methods}}},
          {"output", {{"stride", c.stride}, {"threads", c.threads}}}};
}

// --- TOML ------------------------------------------------------------------------

template <class T>
void take(const toml::table& t, const std::string& key, T& out) {
  const auto* node = t.get(key);
  if (node == nullptr) return;
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = node->value<double>()) {
      out = *v;
      return;
    }
  } else if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t>) {
    if (auto v = node->value<std::int64_t>()) {
      out = static_cast<T>(*v);
      return;
    }
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node->value<std::string>()) {
      out = *v;
      return;
    }
  }
  throw Error("config", "bad value for '" + key + "'");
}

void check_keys(const toml::table& t, const std::string& section, const std::vector<std::string>& allowed) {
  for (const auto& [k, v] : t) {
    if (std::find(allowed.begin(), allowed.end(), std::string(k.str())) == allowed.end()) {
      throw Error("config", "unknown key '" + section + (section.empty() ? "" : ".") + std::string(k.str()) + "'");
    }
  }
}

const toml::table* section(const toml::table& root, const std::string& name) {
  const auto* node = root.get(name);
  if (node == nullptr) return nullptr;
  if (!node->is_table()) throw Error("config", "'" + name + "' must be a table");
  return node->as_table();
}

void apply_toml(const fs::path& path, RunConfig& c) {
  toml::table root;
  try {
    root = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << path.string() << ": " << e.description() << " at line " << e.source().begin.line;
    throw Error("config", msg.str());
  }
  check_keys(root, "", {"optimizer", "weights", "eval", "output"});
  if (const auto* t = section(root, "optimizer")) {
    check_keys(*t, "optimizer",
               {"lr_rotation", "lr_translation", "lr_intrinsics", "lr_scale_shift", "lr_vertices", "lr_points", "beta1",
                "beta2", "epsilon", "camera_iterations", "deform_iterations", "ba_iterations", "ba_camera_lr_scale",
                "seed", "jitter_degrees", "data_term", "mode"});
    OptimizerConfig& o = c.optimizer;
    take(*t, "lr_rotation", o.lr_rotation);
    take(*t, "lr_translation", o.lr_translation);
    take(*t, "lr_intrinsics", o.lr_intrinsics);
    take(*t, "lr_scale_shift", o.lr_scale_shift);
    take(*t, "lr_vertices", o.lr_vertices);
    take(*t, "lr_points", o.lr_points);
    take(*t, "beta1", o.beta1);
    take(*t, "beta2", o.beta2);
    take(*t, "epsilon", o.epsilon);
    take(*t, "camera_iterations", o.camera_iterations);
    take(*t, "deform_iterations", o.deform_iterations);
    take(*t, "ba_iterations", o.ba_iterations);
    take(*t, "ba_camera_lr_scale", o.ba_camera_lr_scale);
    take(*t, "seed", o.seed);
    take(*t, "jitter_degrees", o.jitter_degrees);
    std::string s;
    take(*t, "data_term", s);
    if (!s.empty()) o.data_term = parse_data_term(s);
    s.clear();
    take(*t, "mode", s);
    if (!s.empty()) c.mode = parse_mode(s);
  }
  if (const auto* t = section(root, "weights")) {
    check_keys(*t, "weights", {"scale", "aspect", "focal", "neg", "arap2d", "flip", "z"});
    take(*t, "scale", c.weights.scale);
    take(*t, "aspect", c.weights.aspect);
    take(*t, "focal", c.weights.focal);
    take(*t, "neg", c.weights.neg);
    take(*t, "arap2d", c.weights.arap2d);
    take(*t, "flip", c.weights.flip);
    take(*t, "z", c.weights.z);
  }
  if (const auto* t = section(root, "eval")) {
    check_keys(*t, "eval", {"holdout", "alphas", "methods"});
    take(*t, "holdout", c.holdout);
    if (const auto* a = t->get_as<toml::array>("alphas")) {
      c.alphas.clear();
      for (const auto& v : *a) {
        const auto d = v.value<double>();
        if (!d) throw Error("config", "eval.alphas must hold numbers");
        c.alphas.push_back(*d);
      }
    }
    if (const auto* m = t->get_as<toml::array>("methods")) {
      c.methods.clear();
      for (const auto& v : *m) {
        const auto s = v.value<std::string>();
        if (!s) throw Error("config", "eval.methods must hold strings");
        c.methods.push_back(*s);
      }
    }
  }
  if (const auto* t = section(root, "output")) {
    check_keys(*t, "output", {"stride", "threads"});
    take(*t, "stride", c.stride);
    take(*t, "threads", c.threads);
  }
}

// --- flags -------------------------------------------------------------------------

struct Flags {
  std::optional<std::string> config;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode, data_term;
  std::optional<int> camera_iters, deform_iters, ba_iters, stride, holdout;
  std::optional<double> lr_rotation, lr_translation, lr_intrinsics, lr_scale_shift, lr_vertices, lr_points;
  std::optional<double> w_scale, w_aspect, w_focal, w_neg, w_arap2d, w_flip, w_z;
  std::vector<double> alphas;
  std::vector<std::string> methods;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "TOML configuration file (flags take precedence)")->check(CLI::ExistingFile);
  cmd->add_option("--threads", f.threads, "Worker threads (default: $TOON3D_THREADS or hardware)")->check(
      CLI::PositiveNumber);
  cmd->add_option("--seed", f.seed, "Seed for all randomness");
}

void add_optimizer(CLI::App* cmd, Flags& f) {
  cmd->add_option("--mode", f.mode, "full | camera-only | traditional-ba");
  cmd->add_option("--data-term", f.data_term, "l3d | l2d");
  cmd->add_option("--camera-iters", f.camera_iters, "Camera stage iterations")->check(CLI::NonNegativeNumber);
  cmd->add_option("--deform-iters", f.deform_iters, "Deformation stage iterations")->check(CLI::NonNegativeNumber);
  cmd->add_option("--ba-iters", f.ba_iters, "Traditional BA iterations")->check(CLI::NonNegativeNumber);
  cmd->add_option("--lr-rotation", f.lr_rotation);
  cmd->add_option("--lr-translation", f.lr_translation);
  cmd->add_option("--lr-intrinsics", f.lr_intrinsics);
  cmd->add_option("--lr-scale-shift", f.lr_scale_shift);
  cmd->add_option("--lr-vertices", f.lr_vertices);
  cmd->add_option("--lr-points", f.lr_points);
  cmd->add_option("--w-scale", f.w_scale);
  cmd->add_option("--w-aspect", f.w_aspect);
  cmd->add_option("--w-focal", f.w_focal);
  cmd->add_option("--w-neg", f.w_neg);
  cmd->add_option("--w-arap2d", f.w_arap2d);
  cmd->add_option("--w-flip", f.w_flip);
  cmd->add_option("--w-z", f.w_z);
}

template <class T>
void over(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

RunConfig resolve(const Flags& f) {
  RunConfig c;
  c.threads = default_threads();
  if (f.config) apply_toml(*f.config, c);
  over(f.threads, c.threads);
  over(f.seed, c.optimizer.seed);
  if (f.mode) c.mode = parse_mode(*f.mode);
  if (f.data_term) c.optimizer.data_term = parse_data_term(*f.data_term);
  over(f.camera_iters, c.optimizer.camera_iterations);
  over(f.deform_iters, c.optimizer.deform_iterations);
  over(f.ba_iters, c.optimizer.ba_iterations);
  over(f.stride, c.stride);
  over(f.holdout, c.holdout);
  over(f.lr_rotation, c.optimizer.lr_rotation);
  over(f.lr_translation, c.optimizer.lr_translation);
  over(f.lr_intrinsics, c.optimizer.lr_intrinsics);
  over(f.lr_scale_shift, c.optimizer.lr_scale_shift);
  over(f.lr_vertices, c.optimizer.lr_vertices);
  over(f.lr_points, c.optimizer.lr_points);
  over(f.w_scale, c.weights.scale);
  over(f.w_aspect, c.weights.aspect);
  over(f.w_focal, c.weights.focal);
  over(f.w_neg, c.weights.neg);
  over(f.w_arap2d, c.weights.arap2d);
  over(f.w_flip, c.weights.flip);
  over(f.w_z, c.weights.z);
  if (!f.alphas.empty()) c.alphas = f.alphas;
  if (!f.methods.empty()) c.methods = f.methods;
  c.optimizer.deformation = c.mode == Mode::Full;
  if (!c.optimizer.valid()) throw Error("config", "invalid optimizer settings");
  if (!c.weights.valid()) throw Error("config", "loss weights must be non-negative");
  if (c.stride < 1) throw Error("config", "stride must be positive");
  if (c.threads < 1) throw Error("config", "threads must be positive");
  if (c.holdout < 0) throw Error("config", "holdout must be non-negative");
  for (double a : c.alphas) {
    if (!(a > 0.0 && a < 1.0)) throw Error("config", "alphas must lie in (0, 1)");
  }
  for (const auto& m : c.methods) parse_mode(m);
  return c;
}

nlohmann::json trace_to_json(const LossTrace& trace) {
  nlohmann::json out = nlohmann::json::object();
  if (trace.empty()) return out;
  out["total"] = nlohmann::json::array();
  for (const auto& [name, _] : trace.front().terms) out[name] = nlohmann::json::array();
  for (const auto& b : trace) {
    out["total"].push_back(b.total);
    for (const auto& [name, value] : b.terms) out[name].push_back(value);
  }
  return out;
}

nlohmann::json breakdown_to_json(const LossBreakdown& b) {
  nlohmann::json j = b.terms;
  j["total"] = b.total;
  return j;
}

struct MethodRun {
  AlignmentState state;
  nlohmann::json report;
};

MethodRun run_method(const Scene& scene, const RunConfig& config, Mode mode) {
  MethodRun run;
  OptimizerConfig opt = config.optimizer;
  opt.deformation = mode == Mode::Full;
  if (mode == Mode::TraditionalBa) {
    const BaResult ba = traditional_ba(scene, opt);
    run.state = ba_alignment_state(scene, ba);
    run.report = {{"reprojection_trace", trace_to_json(ba.trace)},
                  {"mean_reprojection_px", ba.mean_reprojection_px}};
    return run;
  }
  AlignmentResult r = align(scene, opt, config.weights);
  run.state = std::move(r.state);
  run.report = {{"camera_trace", trace_to_json(r.camera_trace)}, {"deform_trace", trace_to_json(r.deform_trace)}};
  const LossTrace& last = r.deform_trace.empty() ? r.camera_trace : r.deform_trace;
  if (!last.empty()) run.report["final_loss"] = breakdown_to_json(last.back());
  return run;
}

Scene load_normalized(const std::string& dir) {
  Scene scene = load_scene(dir);
  const ValidationReport report = validate_scene(scene);
  if (!report.ok()) throw StructuralError(report.errors.front());
  for (const auto& w : report.warnings) std::cerr << "warning: scene: " << w << '\n';
  return normalize_depths(std::move(scene));
}

// --- subcommands ---------------------------------------------------------------------

int cmd_align(const std::string& scene_dir, const std::string& out_dir, const RunConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  const Scene scene = load_normalized(scene_dir);
  MethodRun run = run_method(scene, config, config.mode);
  nlohmann::json report = run.report;
  report["config"] = config_to_json(config);
  report["scene"] = {{"images", scene.n_images()},
                     {"correspondences", scene.correspondences.n_points()},
                     {"depth_normalizer", scene.depth_normalizer}};
  ExportOptions options;
  options.stride = config.stride;
  options.threads = config.threads;
  options.report = std::move(report);
  export_all(scene, run.state, out_dir, options);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "aligned " << scene.n_images() << " images (" << mode_name(config.mode) << ") in " << seconds
            << " s -> " << out_dir << '\n';
  return 0;
}

int cmd_eval(const std::string& scene_dir, const std::string& out_dir, const RunConfig& config) {
  const Scene scene = load_normalized(scene_dir);
  const HoldoutSplit split = holdout_split(scene.correspondences, config.holdout, config.optimizer.seed);
  if (split.holdout.n_points() == 0) throw EvaluationError("evaluation", "holdout count must be positive for eval");
  Scene train = scene;
  train.correspondences = split.train;

  std::optional<synth::GroundTruth> gt;
  if (fs::exists(fs::path(scene_dir) / "ground_truth.json")) {
    gt = synth::ground_truth_from_json(scene, read_json(fs::path(scene_dir) / "ground_truth.json"));
  }
  nlohmann::json methods = nlohmann::json::object();
  std::map<std::string, std::vector<CameraParams>> cams;
  for (const auto& name : config.methods) {
    const MethodRun run = run_method(train, config, parse_mode(name));
    nlohmann::json m;
    nlohmann::json per_alpha = nlohmann::json::array();
    for (double alpha : config.alphas) {
      const PccResult r = pcc(train, run.state, split.holdout, alpha);
      per_alpha.push_back({{"alpha", alpha}, {"pcc", r.fraction()}, {"correct", r.n_correct}, {"evaluated", r.n_evaluated}});
    }
    m["pcc"] = per_alpha;
    if (gt) m["rotation_error_deg"] = relative_rotation_error(run.state.cams, gt->cams);
    if (run.report.contains("mean_reprojection_px")) m["mean_reprojection_px"] = run.report["mean_reprojection_px"];
    methods[name] = m;
    cams[name] = run.state.cams;
  }
  nlohmann::json out = {{"holdout", config.holdout},
                        {"holdout_ids", nlohmann::json::array()},
                        {"alphas", config.alphas},
                        {"methods", methods},
                        {"config", config_to_json(config)}};
  for (int c = 0; c < split.holdout.n_points(); ++c) out["holdout_ids"].push_back(split.holdout.id(c));
  if (cams.count("full") && cams.count("traditional-ba")) {
    out["rotation_error_full_vs_traditional_ba_deg"] = relative_rotation_error(cams["full"], cams["traditional-ba"]);
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("output", "cannot create " + out_dir + ": " + ec.message());
  write_json(fs::path(out_dir) / "eval.json", out);
  for (const auto& name : config.methods) {
    std::cout << name;
    for (const auto& e : methods[name]["pcc"]) std::cout << "  PCC@" << e["alpha"].get<double>() << "=" << e["pcc"].get<double>();
    std::cout << '\n';
  }
  return 0;
}

int cmd_export(const std::string& scene_dir, const std::string& state_path, const std::string& out_dir,
               const RunConfig& config) {
  const Scene scene = load_normalized(scene_dir);
  const AlignmentState state = state_from_json(scene, read_json(state_path));
  ExportOptions options;
  options.stride = config.stride;
  options.threads = config.threads;
  options.report = {{"config", config_to_json(config)}, {"state", state_path}};
  export_all(scene, state, out_dir, options);
  std::cout << "exported " << scene.n_images() << " images -> " << out_dir << '\n';
  return 0;
}

int cmd_synth(const synth::SyntheticSpec& spec, const std::string& out_dir) {
  auto [scene, gt] = synth::generate_scene(spec);
  if (spec.inconsistency > 0.0) scene = synth::perturb_scene(scene, spec.inconsistency, spec.seed);
  try {
    save_scene(scene, out_dir);
  } catch (const std::filesystem::filesystem_error& e) {
    throw IoError("synthetic", e.what());
  }
  write_json(fs::path(out_dir) / "ground_truth.json", synth::ground_truth_to_json(scene, gt));
  std::cout << "wrote " << scene.n_images() << " images, " << scene.correspondences.n_points()
            << " correspondences -> " << out_dir << '\n';
  return 0;
}

int cmd_validate(const std::string& scene_dir) {
  const Scene scene = load_scene(scene_dir);
  const ValidationReport report = validate_scene(scene);
  for (const auto& w : report.warnings) std::cout << "warning: " << w << '\n';
  if (!report.ok()) {
    for (std::size_t k = 1; k < report.errors.size(); ++k) std::cerr << "  " << report.errors[k] << '\n';
    throw StructuralError(report.errors.front());
  }
  std::cout << "ok: " << scene.n_images() << " images, " << scene.correspondences.n_points() << " correspondences\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reconstruction from geometrically inconsistent images with monocular depth"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Flags f;
  std::string scene_dir, out_dir, state_path;

  auto* align_cmd = app.add_subcommand("align", "Align cameras and deform meshes, then export artifacts");
  align_cmd->add_option("--scene", scene_dir, "Scene directory")->required();
  align_cmd->add_option("--out", out_dir, "Output directory")->required();
  align_cmd->add_option("--stride", f.stride, "Point cloud pixel stride")->check(CLI::PositiveNumber);
  add_common(align_cmd, f);
  add_optimizer(align_cmd, f);

  auto* eval_cmd = app.add_subcommand("eval", "Hold out correspondences, align on the rest, report PCC");
  eval_cmd->add_option("--scene", scene_dir, "Scene directory")->required();
  eval_cmd->add_option("--out", out_dir, "Directory for eval.json")->default_val(".");
  eval_cmd->add_option("--holdout", f.holdout, "Correspondences to hold out")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--alpha", f.alphas, "PCC radius as a fraction of max(w, h); repeatable")->delimiter(',');
  eval_cmd->add_option("--methods", f.methods, "Comma list of full, camera-only, traditional-ba")->delimiter(',');
  add_common(eval_cmd, f);
  add_optimizer(eval_cmd, f);

  auto* export_cmd = app.add_subcommand("export", "Re-export artifacts from a saved state.json");
  export_cmd->add_option("--scene", scene_dir, "Scene directory")->required();
  export_cmd->add_option("--state", state_path, "state.json from a previous align")->required()->check(
      CLI::ExistingFile);
  export_cmd->add_option("--out", out_dir, "Output directory")->required();
  export_cmd->add_option("--stride", f.stride, "Point cloud pixel stride")->check(CLI::PositiveNumber);
  add_common(export_cmd, f);

  synth::SyntheticSpec spec;
  std::string texture = "checkerboard";
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic scene with ground truth");
  synth_cmd->add_option("--out", out_dir, "Output scene directory")->required();
  synth_cmd->add_option("--seed", spec.seed, "Generator seed");
  synth_cmd->add_option("--cameras", spec.n_cameras, "Number of cameras")->check(CLI::Range(2, 64));
  synth_cmd->add_option("--points", spec.n_correspondences, "Number of correspondences")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--delta", spec.inconsistency, "Inconsistency warp, fraction of max(w, h)")->check(
      CLI::NonNegativeNumber);
  synth_cmd->add_option("--depth-noise", spec.depth_noise, "Smooth additive depth error, fraction of max depth")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--width", spec.width, "Image width")->check(CLI::Range(16, 8192));
  synth_cmd->add_option("--height", spec.height, "Image height")->check(CLI::Range(16, 8192));
  synth_cmd->add_option("--focal", spec.focal_px, "Focal length in pixels")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--arc", spec.ring_arc_degrees, "Yaw spread of the camera arc in degrees");
  synth_cmd->add_option("--texture", texture, "checkerboard | gradient")
      ->check(CLI::IsMember({"checkerboard", "gradient"}));

  auto* validate_cmd = app.add_subcommand("validate", "Check a scene's annotations");
  validate_cmd->add_option("--scene", scene_dir, "Scene directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*align_cmd) return cmd_align(scene_dir, out_dir, resolve(f));
    if (*eval_cmd) return cmd_eval(scene_dir, out_dir, resolve(f));
    if (*export_cmd) return cmd_export(scene_dir, state_path, out_dir, resolve(f));
    if (*synth_cmd) {
      spec.texture = texture == "gradient" ? synth::Texture::Gradient : synth::Texture::Checkerboard;
      return cmd_synth(spec, out_dir);
    }
    if (*validate_cmd) return cmd_validate(scene_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.module() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
