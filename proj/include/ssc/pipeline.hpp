#pragma once

// End-to-end forward pass: temporal alignment, curriculum depth fusion,
// depth volumes, voxel lifting and refinement, classification, losses and
// metrics, with per-stage timing and optional intermediate dumps.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssc/depth_fusion.hpp"
#include "ssc/flow_align.hpp"
#include "ssc/geometry.hpp"
#include "ssc/losses.hpp"
#include "ssc/metrics.hpp"
#include "ssc/synth.hpp"
#include "ssc/tensor_io.hpp"
#include "ssc/voxel_lift.hpp"

namespace ssc {

/// Each switch replaces its stage by a pass-through when off:
///   mask_gate: warped history is used ungated
///   nca:       F_fuse is the mean of the current and gated history features
///   cdf:       the fused depth is the stereo depth
///   cga3d:     both depth volumes skip the cross attention
///   distill:   the 2D distillation losses are 0
struct AblationSwitches {
  bool mask_gate = true;
  bool nca = true;
  bool cdf = true;
  bool cga3d = true;
  bool distill = true;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::optional<SceneConfig> scene;           // synthetic input
  std::filesystem::path input_dir;            // or a directory written by `synth gen`
  int history = 2;                            // history frames
  bool use_lidar = true;

  CurriculumSchedule curriculum;
  std::int64_t step = 5000;                   // training step at which λ is evaluated
  std::optional<double> lambda_override;

  DepthBins bins{32, 2.0, 58.0};
  double stereo_softness = 0.25;
  CompletionParams completion;
  VoxelSpec voxel;
  ConsistencyParams consistency;

  int feature_channels = 16;
  int fusion_channels = 8;
  int nca_window = 3;
  int nca_dim = 8;
  int cga_dim = 4;
  int dca_points = 4;
  int dsa_points = 4;
  double proposal_threshold = 0.0;
  std::size_t max_proposals = 1024;
  double occ_fusion = 0.5;

  LossWeights loss_weights;
  ClassWeightPolicy class_policy;
  std::vector<int> scal_scales{1, 2};
  std::vector<double> ranges = kDefaultRanges;

  AblationSwitches ablation;
  std::filesystem::path weights_dir;
  std::filesystem::path out_dir;
  bool dump_intermediates = false;

  void validate() const;
};

VoxelSpec voxel_spec_from_json(const nlohmann::json& j);
nlohmann::json voxel_spec_to_json(const VoxelSpec& spec);

/// Unknown keys are rejected; relative paths resolve against `base`.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
nlohmann::json pipeline_config_to_json(const PipelineConfig& c);

/// Everything the forward pass consumes for one current frame.
struct SceneInputs {
  int num_classes = 0;
  std::vector<std::string> class_names;
  FeatureMap current;
  std::vector<FeatureMap> history;  // history[i] is frame t-(i+1)
  std::vector<FlowField> flow_fwd;  // t-(i+1) -> t, on the history grid
  std::vector<FlowField> flow_bwd;  // t -> t-(i+1), on the current grid
  std::optional<DepthMap> lidar;
  DepthMap stereo;
  CameraModel camera;
  LabelGrid gt;
  FeatureMap pseudo_labels;         // H × W × (num_classes + 1)

  void validate() const;
};

/// Renders the last frame of `scene` with `history` preceding frames.
SceneInputs synth_inputs(const SceneConfig& scene, int history, const VoxelSpec& spec);

/// Writes every frame and the flows between each earlier frame and the last
/// one, plus manifest.json, so any window up to frames - 1 can be loaded.
void write_scene(const SceneConfig& scene, const VoxelSpec& spec, const std::filesystem::path& dir);
SceneInputs load_scene(const std::filesystem::path& dir, int history);

struct StageTiming {
  std::string stage;
  double ms = 0.0;
};

struct PipelineResult {
  Classification output;  // labels and (num_classes + 1)-channel logits
  TpvPlanes plane_logits;
  FeatureMap seg_probs;   // 2D distillation head output
  LossParts losses;
  double total_loss = 0.0;
  MetricsReport metrics;
  double lambda = 0.0;
  std::size_t proposals = 0;
  std::size_t dropped_points = 0;
  std::vector<StageTiming> timings;
  std::map<std::string, Tensor> intermediates;  // filled with dump_intermediates
};

/// Throws PipelineError naming the stage whose output is not finite or
/// whose module rejected its inputs.
PipelineResult run_pipeline(const PipelineConfig& config, const SceneInputs& inputs);
/// Resolves the inputs from the config (scene, input_dir, or a random scene
/// drawn from the seed) and runs.
PipelineResult run_pipeline(const PipelineConfig& config);

nlohmann::json loss_report(const LossParts& parts, double total);
nlohmann::json result_report(const PipelineResult& r, const std::vector<std::string>& class_names);

/// Writes labels, logits, reports and (when present) intermediates to `dir`.
void write_outputs(const PipelineResult& r, const std::vector<std::string>& class_names,
                   const std::filesystem::path& dir);

/// Metrics of a predicted label tensor against a ground-truth one.
/// num_classes <= 0 takes the largest non-ignore label found in either file.
MetricsReport eval_only(const std::filesystem::path& pred, const std::filesystem::path& gt, const VoxelSpec& spec,
                        int num_classes = 0);

}  // namespace ssc
