#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "skelocc/appearance.hpp"
#include "skelocc/camera.hpp"
#include "skelocc/image.hpp"
#include "skelocc/nn.hpp"
#include "skelocc/occupancy.hpp"
#include "skelocc/optim.hpp"
#include "skelocc/rays.hpp"
#include "skelocc/synth.hpp"
#include "skelocc/upsampler.hpp"

namespace skelocc {

struct RadianceConfig {
    int width = 128;
    int depth = 8;
    int features = 32;   // m, occupancy feature size
    int code_dim = 16;   // n_a
    int extra = 8;       // d, composited features for the upsampler
    int view_freqs = 4;
    bool view_dependent = true;
    uint64_t seed = 2;
};

struct RadianceOutput {
    Tensor sigma;  // N×1, softplus
    Tensor color;  // N×3, sigmoid
    Tensor extra;  // N×d
};

/// MLP (features ⊕ signed probability ⊕ code ⊕ encoded direction) →
/// (density, colour, extra features).
class RadianceModel {
public:
    explicit RadianceModel(const RadianceConfig& cfg = {});

    const RadianceConfig& config() const { return cfg_; }
    int view_dim() const;
    int input_dim() const;
    RadianceOutput forward(const Tensor& input) const;

    NamedTensors parameters() const;  // "rad.*"
    void load(const std::map<std::string, Tensor>& source);

private:
    RadianceConfig cfg_;
    std::vector<Linear> layers_;
    Linear sigma_, color_, extra_;
};

/// [d, sin(2^k·π·d), cos(2^k·π·d)] for k < freqs, 3 + 6·freqs values.
std::vector<float> encode_direction(const Vec3& d, int freqs);

/// Everything a frame needs at render time.
struct Models {
    OccupancyModel occupancy;
    RadianceModel radiance;
    CodeTable codes;
    Upsampler upsampler;
    OccupancySpace space = OccupancySpace::observed;
    Skeleton templ = canonical_template();

    Models(const OccupancyConfig& oc, const RadianceConfig& rc, const UpsamplerConfig& uc)
        : occupancy(oc), radiance(rc), codes(rc.code_dim), upsampler(uc) {}
};

struct RenderOptions {
    int k_u = 8;
    int k_h = 8;
    /// Occupancy bounds and pruning when set; otherwise every ray that meets
    /// `box` is alive over its box chord.
    bool prune = true;
    BoundsOptions bounds;
    Aabb box;
    /// Bounds search is restricted to the joint box grown by this margin
    /// (intersected with bounds.bbox); negative disables.
    double joint_margin = 0.025;
    bool hierarchical = true;
    bool jitter = false;
    uint64_t seed = 0;
    /// Length unit of the density: σ·δ uses δ divided by this.
    double density_unit = 1e-3;
    std::array<float, 3> background{0.0f, 0.0f, 0.0f};
};

/// Per-sample network inputs that do not depend on trainable parameters.
struct PreparedRays {
    int width = 0, height = 0;
    int samples = 0;
    int m = 0, view_dim = 0;
    std::vector<int32_t> pixel;     // per alive ray
    std::vector<int32_t> sample_row;  // per sample, alive-ray index
    std::vector<float> features;    // per sample × m
    std::vector<float> signed_p;    // per sample
    std::vector<float> view;        // per alive ray × view_dim
    std::vector<float> delta;       // per sample, in density units
    int64_t rays = 0;
    int64_t occupancy_queries = 0;  // bounds marching plus sample queries
    int64_t fallbacks = 0;

    int64_t alive() const { return static_cast<int64_t>(pixel.size()); }
    int64_t count() const { return static_cast<int64_t>(signed_p.size()); }
};

/// Joint box of both hands grown by `margin`.
Aabb joint_box(const TwoHandPose& pose, double margin);

/// Rays → bounds or box chords → k_u stratified (+ k_h hierarchical) depths →
/// occupancy features and signed probabilities.
PreparedRays prepare_rays(const Models& models, const TwoHandPose& pose, const Camera& cam, const RenderOptions& opt);

/// Radiance evaluation for prepared samples under appearance `code_id`.
/// Throws std::out_of_range for an unknown id.
RadianceOutput eval_radiance(const Models& models, const PreparedRays& prep, int code_id);

struct RenderTensors {
    Tensor rgb;      // 3×H×W
    Tensor extra;    // d×H×W
    Tensor opacity;  // 1×H×W
};

/// Differentiable render of prepared rays. Pruned pixels carry the
/// background, zero features and zero opacity.
RenderTensors render_prepared(const Models& models, const PreparedRays& prep, int code_id, const RenderOptions& opt);

struct RenderedFrame {
    Image rgb;        // H×W×3
    Image features;   // H×W×d
    Image opacity;    // H×W×1
    Image pruned;     // H×W×1, 1 where the ray was pruned
    Image upsampled;  // 2H×2W×3 from the upsampler
    int64_t rays_alive = 0;
    int64_t samples = 0;
    int64_t occupancy_queries = 0;
    double ms = 0.0;
};

/// Full render through `cam` (typically a crop camera from crop_camera).
RenderedFrame render_frame(const Models& models, const TwoHandPose& pose, const Camera& cam, int code_id,
                           const RenderOptions& opt, bool upsample = true);

/// Crop geometry of one frame: T maps the full image onto the high-resolution
/// crop of crop·k pixels; `camera` renders the crop·crop low-resolution view.
struct CropView {
    Mat3 T = Mat3::Identity();
    Camera camera;
    Camera hires;
};
CropView make_crop(const Camera& full, const TwoHandPose& pose, int crop, double k, const CropJitter& jitter = {},
                   uint64_t seed = 0);

/// One training image with its full-resolution camera. A precropped frame
/// is rendered through `camera` as given and compared with `image` directly
/// (and with `image_high` after upsampling when present); it is not jittered.
struct TrainFrame {
    TwoHandPose pose;
    int code_id = 0;
    Camera camera;
    Image image;  // full-resolution RGB
    bool precropped = false;
    Image image_high;
};

struct RenderTrainConfig {
    int steps = 6000;
    AdamConfig adam{5e-4f, 0.9f, 0.999f, 1e-8f};
    float lr_final = 5e-5f;
    float w_l1 = 0.6f;
    float w_mse = 0.4f;
    float code_reg = 1e-4f;
    float upsample_weight = 1.0f;
    int crop = 64;
    double k = 2.0;
    int variants = 3;  // jittered crops prepared per frame
    CropJitter jitter = train_jitter();
    int log_every = 100;
    uint64_t seed = 5;
};

struct RenderTrainReport {
    std::vector<std::pair<int, double>> loss;  // (step, mean loss since last report)
    std::vector<double> step_loss;             // every step
    double prepare_seconds = 0.0;
    double train_seconds = 0.0;
    int64_t rays_alive = 0;  // over all prepared crops
    int64_t rays = 0;
};

/// Optimizes radiance, codes and upsampler with the occupancy model frozen.
/// Loss: w_l1·L1 + w_mse·MSE on the low-resolution crop plus, for k = 2, the
/// same on the upsampled crop. Throws std::invalid_argument on an empty set.
RenderTrainReport train_renderer(Models& models, const std::vector<TrainFrame>& frames, const RenderTrainConfig& cfg,
                                 const RenderOptions& opt,
                                 const std::function<void(int, double)>& on_log = {});

/// All named parameters of the trainable and frozen parts.
NamedTensors model_parameters(const Models& models);
void load_models(Models& models, const std::map<std::string, Tensor>& source);

}  // namespace skelocc
