#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "skelocc/carving.hpp"
#include "skelocc/config.hpp"
#include "skelocc/dataset.hpp"
#include "skelocc/metrics.hpp"
#include "skelocc/occupancy.hpp"
#include "skelocc/renderer.hpp"

namespace skelocc {

/// Missing or inconsistent inputs on disk (checkpoints, datasets, ids).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Logger = std::function<void(const std::string&)>;

OccupancyConfig occupancy_config(const RunConfig& cfg);
RadianceConfig radiance_config(const RunConfig& cfg);
UpsamplerConfig upsampler_config(const RunConfig& cfg);
OccupancySpace occupancy_space(const RunConfig& cfg);
/// Occupancy-bounded 8+8 sampling (or dense box sampling when `dense`).
RenderOptions render_options(const RunConfig& cfg, const Aabb& scene_box, bool dense = false);

/// Fresh models with one code per dataset identity.
Models make_models(const RunConfig& cfg, const Dataset& ds);

/// Opens the dataset and checks every configured view exists.
Dataset open_dataset(const RunConfig& cfg);

TwoHandPose dataset_pose(const Dataset& ds, int pose);

std::filesystem::path carve_path(const RunConfig& cfg, int pose);
std::filesystem::path occupancy_checkpoint(const RunConfig& cfg);
std::filesystem::path model_checkpoint(const RunConfig& cfg);

/// Carves every pose from the training views. Labels: 1 kept, 0 rejected
/// candidate, 2 rejected fresh candidate. Returns per-pose counts and oracle
/// precision/recall.
nlohmann::json run_carve(const RunConfig& cfg, const Logger& log = {});

/// Labelled training points per pose in the occupancy query frame.
std::vector<OccupancySample> occupancy_samples(const RunConfig& cfg, const Dataset& ds);
/// n uniform box points per pose labelled by the analytic hand.
std::vector<LabelledPoints> occupancy_validation(const RunConfig& cfg, const Dataset& ds, int n_per_pose,
                                                 uint64_t seed);

/// Trains and saves the occupancy checkpoint; returns the IoU/loss log.
nlohmann::json run_train_occ(const RunConfig& cfg, std::optional<int> steps = std::nullopt, const Logger& log = {});

/// Training frames of the configured train views (all poses).
std::vector<TrainFrame> training_frames(const RunConfig& cfg, const Dataset& ds);

/// Trains radiance, codes and upsampler on top of the saved occupancy model
/// and saves the full checkpoint.
nlohmann::json run_train_render(const RunConfig& cfg, std::optional<int> steps = std::nullopt,
                                const Logger& log = {});

/// Loads the full checkpoint. Throws DataError when it is missing.
Models load_trained(const RunConfig& cfg, const Dataset& ds);

struct FrameMetrics {
    int pose = 0, view = 0, identity = 0;
    double psnr = 0.0, ssim = 0.0;
    double psnr_up = 0.0, psnr_bilinear = 0.0;
    int64_t rays = 0, rays_alive = 0, samples = 0;
    double ms = 0.0;
};

struct EvalSummary {
    std::vector<FrameMetrics> frames;
    double psnr = 0.0, ssim = 0.0;
    double psnr_up = 0.0, psnr_bilinear = 0.0;
    double ms = 0.0;
    int64_t rays = 0, rays_alive = 0, samples = 0;
};

/// Renders every (test view, pose) crop and scores it against the analytic
/// render of the same crop camera.
EvalSummary evaluate(const Models& models, const RunConfig& cfg, const Dataset& ds, const RenderOptions& opt,
                     const std::vector<int>& views);

nlohmann::json metric_report(const EvalSummary& s);
/// One JSON line per frame: frame, psnr, ssim, rays_alive, ms.
std::string frame_lines(const EvalSummary& s);

/// Evaluation on the test views; writes eval.json and eval_frames.jsonl.
nlohmann::json run_eval(const RunConfig& cfg, const Logger& log = {});

/// Pruned 8+8 versus dense box rendering on the test views; writes bench.json.
nlohmann::json run_bench(const RunConfig& cfg, const Logger& log = {});

/// Crop render of (pose, view) under an appearance id (default: the pose's).
RenderedFrame render_view(const Models& models, const RunConfig& cfg, const Dataset& ds, int pose, int view,
                          std::optional<int> identity = std::nullopt);

}  // namespace skelocc
