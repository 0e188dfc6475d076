// Command-line front end: run the pipeline, generate synthetic scenes,
// evaluate label grids.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "ssc/errors.hpp"
#include "ssc/pipeline.hpp"

namespace {

using nlohmann::json;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ssc::InputError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ssc::InputError("bad JSON in " + path + ": " + e.what());
  }
}

// "a.b.c=value": value is parsed as JSON, falling back to a plain string.
void apply_override(json& j, const std::string& expr) {
  const auto eq = expr.find('=');
  if (eq == std::string::npos || eq == 0) throw ssc::InputError("--set expects key=value, got " + expr);
  const std::string key = expr.substr(0, eq);
  const std::string raw = expr.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

struct RunArgs {
  std::string config;
  std::optional<std::string> out;
  bool dump = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> history;
  std::optional<double> lambda;
  std::optional<std::int64_t> step;
  std::optional<std::string> schedule;
  std::optional<double> warmup;
  std::optional<int> bins;
  std::optional<std::string> depth_range;
  std::optional<std::string> input_dir;
  bool no_lidar = false;
  std::vector<std::string> disable;
  std::vector<std::string> sets;
};

int run(const RunArgs& a) {
  json j = a.config.empty() ? json::object() : read_json(a.config);
  if (a.seed) j["seed"] = *a.seed;
  if (a.history) j["history"] = *a.history;
  if (a.lambda) j["curriculum"]["lambda"] = *a.lambda;
  if (a.step) j["curriculum"]["step"] = *a.step;
  if (a.schedule) j["curriculum"]["shape"] = *a.schedule;
  if (a.warmup) j["curriculum"]["warmup_fraction"] = *a.warmup;
  if (a.bins) j["depth"]["bins"] = *a.bins;
  if (a.depth_range) {
    const auto comma = a.depth_range->find(',');
    if (comma == std::string::npos) throw ssc::InputError("--depth-range expects MIN,MAX");
    j["depth"]["min"] = std::stod(a.depth_range->substr(0, comma));
    j["depth"]["max"] = std::stod(a.depth_range->substr(comma + 1));
  }
  if (a.input_dir) j["input_dir"] = *a.input_dir;
  if (a.no_lidar) j["use_lidar"] = false;
  for (const auto& name : a.disable) j["ablation"][name] = false;
  for (const auto& s : a.sets) apply_override(j, s);
  if (a.dump) j["dump_intermediates"] = true;

  const std::filesystem::path base =
      a.config.empty() ? std::filesystem::path{} : std::filesystem::path(a.config).parent_path();
  ssc::PipelineConfig cfg = ssc::pipeline_config_from_json(j, base);
  if (a.out) cfg.out_dir = *a.out;
  if (cfg.out_dir.empty()) cfg.out_dir = "ssc_out";

  std::vector<std::string> names;
  ssc::PipelineResult result;
  if (!cfg.input_dir.empty()) {
    const auto inputs = ssc::load_scene(cfg.input_dir, cfg.history);
    names = inputs.class_names;
    result = ssc::run_pipeline(cfg, inputs);
  } else {
    ssc::SceneConfig scene;
    if (cfg.scene) {
      scene = *cfg.scene;
    } else {
      ssc::RandomSceneOptions opt;
      opt.frames = std::max(3, cfg.history + 1);
      scene = ssc::random_scene(cfg.seed, opt);
    }
    names = scene.class_names;
    result = ssc::run_pipeline(cfg, ssc::synth_inputs(scene, cfg.history, cfg.voxel));
  }
  ssc::write_outputs(result, names, cfg.out_dir);
  {
    std::ofstream out(cfg.out_dir / "config.json");
    out << ssc::pipeline_config_to_json(cfg).dump(2) << '\n';
  }
  const json report = ssc::result_report(result, names);
  std::cout << json{{"losses", report.at("losses")}, {"metrics", report.at("metrics")}, {"out", cfg.out_dir.string()}}
                   .dump(2)
            << '\n';
  return 0;
}

int synth_gen(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed) {
  json j = read_json(config);
  ssc::VoxelSpec spec;
  if (j.contains("voxel")) {
    spec = ssc::voxel_spec_from_json(j.at("voxel"));
    j.erase("voxel");
  }
  if (seed) j["seed"] = *seed;
  const ssc::SceneConfig scene = ssc::scene_from_json(j);
  ssc::write_scene(scene, spec, out);
  std::cout << "wrote " << scene.frames << " frames to " << out << '\n';
  return 0;
}

int eval(const std::string& pred, const std::string& gt, int num_classes, const std::string& voxel,
         const std::string& out) {
  ssc::VoxelSpec spec;
  if (!voxel.empty()) spec = ssc::voxel_spec_from_json(read_json(voxel));
  const auto report = ssc::eval_only(pred, gt, spec, num_classes);
  const json j = ssc::to_json(report);
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw ssc::InputError("cannot write " + out);
    f << j.dump(2) << '\n';
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic scene completion forward pass"};
  app.require_subcommand(1);

  RunArgs ra;
  auto* run_cmd = app.add_subcommand("run", "Run the full pipeline");
  run_cmd->add_option("--config", ra.config, "Pipeline config JSON");
  run_cmd->add_option("--out", ra.out, "Output directory (default ssc_out)");
  run_cmd->add_flag("--dump-intermediates", ra.dump, "Write every stage output as a tensor file");
  run_cmd->add_option("--seed", ra.seed, "Seed for weights and the default scene");
  run_cmd->add_option("--history", ra.history, "Number of history frames");
  run_cmd->add_option("--lambda", ra.lambda, "Force the LiDAR weight");
  run_cmd->add_option("--step", ra.step, "Training step for the curriculum weight");
  run_cmd->add_option("--lambda-shape", ra.schedule, "Curriculum decay: linear or cosine");
  run_cmd->add_option("--warmup-frac", ra.warmup, "Curriculum warm-up fraction");
  run_cmd->add_option("--depth-bins", ra.bins, "Number of depth bins");
  run_cmd->add_option("--depth-range", ra.depth_range, "Depth bin range MIN,MAX in meters");
  run_cmd->add_option("--input-dir", ra.input_dir, "Scene directory written by `synth gen`");
  run_cmd->add_flag("--no-lidar", ra.no_lidar, "Drop the LiDAR input");
  run_cmd->add_option("--disable", ra.disable, "Ablate a stage: mask_gate, nca, cdf, cga3d, distill");
  run_cmd->add_option("--set", ra.sets, "Override any config key, e.g. model.nca_window=5");

  auto* synth_cmd = app.add_subcommand("synth", "Synthetic scenes");
  synth_cmd->require_subcommand(1);
  std::string scene_config, scene_out;
  std::optional<std::uint64_t> scene_seed;
  auto* gen_cmd = synth_cmd->add_subcommand("gen", "Render a scene to tensor files");
  gen_cmd->add_option("--config", scene_config, "Scene config JSON")->required();
  gen_cmd->add_option("--out", scene_out, "Output directory")->required();
  gen_cmd->add_option("--seed", scene_seed, "Override the scene seed");

  std::string pred, gt, voxel, eval_out;
  int num_classes = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Score a predicted label grid");
  eval_cmd->add_option("--pred", pred, "Predicted label tensor")->required();
  eval_cmd->add_option("--gt", gt, "Ground-truth label tensor")->required();
  eval_cmd->add_option("--num-classes", num_classes, "Semantic class count (default: largest label)");
  eval_cmd->add_option("--voxel", voxel, "Voxel spec JSON for the range metrics");
  eval_cmd->add_option("--out", eval_out, "Write the metrics JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return run(ra);
    if (*gen_cmd) return synth_gen(scene_config, scene_out, scene_seed);
    if (*eval_cmd) return eval(pred, gt, num_classes, voxel, eval_out);
  } catch (const ssc::PipelineError& e) {
    std::cerr << "error in stage " << e.stage() << ": " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
