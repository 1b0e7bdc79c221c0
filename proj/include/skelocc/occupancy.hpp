#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "skelocc/checkpoint.hpp"
#include "skelocc/nn.hpp"
#include "skelocc/skeleton.hpp"
#include "skelocc/tensor.hpp"

namespace skelocc {

struct OccupancyConfig {
    int embedding = 64;
    int width = 128;
    int blocks = 4;
    int features = 32;     // m
    int pe_freqs = 6;      // sinusoidal encoding of the query point, 0 = raw coordinates
    float coord_scale = 8.0f;  // metres → network units
    uint64_t seed = 1;
};

/// Per-hand conditioning: embedding plus the per-layer scale/shift it drives.
struct Conditioning {
    Tensor embedding;            // G×E
    std::vector<Tensor> gamma;   // per modulated layer, G×W
    std::vector<Tensor> beta;
};

struct OccForward {
    Tensor logits;    // K×1
    Tensor prob;      // K×1
    Tensor features;  // K×m
};

struct OccResult {
    std::vector<float> prob;      // K
    std::vector<float> features;  // K×m row-major
    int m = 0;
};

/// Skeleton-conditioned occupancy: PointNet-style encoder over the 21 joints
/// (shared per-joint MLP, max-pool, projection) and a residual decoder over
/// the query point whose layers are scaled and shifted by the embedding.
class OccupancyModel {
public:
    explicit OccupancyModel(const OccupancyConfig& cfg = {});

    const OccupancyConfig& config() const { return cfg_; }

    /// 1×E embedding of a canonical skeleton. Throws std::invalid_argument
    /// when the root is not at the origin (norm > 1e-6).
    Tensor encode(const Skeleton& canonical) const;
    /// Stacks G skeleton embeddings and derives the modulation tables.
    Conditioning condition(const std::vector<Skeleton>& canonical) const;

    /// Differentiable forward. points K×3 in the root-centred frame, group
    /// selects the conditioning row for each point.
    OccForward forward(const Tensor& points, const Conditioning& cond, std::span<const int32_t> group) const;

    /// Batched evaluation without gradient tracking.
    OccResult query(const Points& points, const Skeleton& canonical, int64_t chunk = 8192) const;
    OccResult query(const Points& points, const Conditioning& cond, int64_t chunk = 8192) const;

    NamedTensors parameters() const;
    void load(const NamedTensors& source);

private:
    Tensor encode_points(const Tensor& p) const;

    OccupancyConfig cfg_;
    Linear enc0_, enc1_, enc_out_;
    Linear dec_in_;
    std::vector<Linear> dec_lin_;   // 2 per block
    std::vector<Linear> film_g_;    // 2 per block
    std::vector<Linear> film_b_;
    Linear feat_, head_;
};

enum class OccupancySpace { observed, canonical };

/// Maps world points of one observed hand into the model's query frame.
/// Observed space: f(P − s₀) with f the x-mirror for left hands.
/// Canonical space: the mirrored, root-centred points are additionally
/// deformed to the template pose bone by bone.
class HandFrame {
public:
    HandFrame(const Skeleton& observed, OccupancySpace space, const Skeleton& templ);

    Points to_query(const Points& world) const;
    /// Canonical (root at origin) conditioning skeleton, right-handed.
    const Skeleton& condition() const { return cond_; }
    bool mirrored() const { return mirror_; }

private:
    OccupancySpace space_;
    bool mirror_;
    Skeleton observed_right_;  // mirrored if left, world frame
    Skeleton templ_;
    std::vector<BoneTransform> bones_;
    Skeleton cond_;
};

/// Signed encoding: p_r if p_r ≥ p_l, else −p_l.
float signed_probability(float p_r, float p_l);

struct TwoHandResult {
    std::vector<float> p_r, p_l, signed_p;
    std::vector<float> features;  // from the hand with the larger probability
    int m = 0;
};

/// Right hand queried at P − s₀ᴿ with S̃_R, left hand at f(P − s₀ᴸ) with
/// f(S̃_L). A missing left hand has probability 0.
TwoHandResult query_two_hands(const OccupancyModel& model, const Points& world, const TwoHandPose& pose,
                              OccupancySpace space = OccupancySpace::observed,
                              const Skeleton* templ = nullptr);

/// Labelled training points of one hand, already in its query frame.
struct OccupancySample {
    Skeleton condition;
    Points positives;
    Points negatives;
    Points fresh_negatives;  // uniform resamples rejected by carving
};

struct OccTrainConfig {
    int steps = 10000;
    int batch = 2048;
    float lr = 1e-3f;
    float lr_final = 1e-4f;
    float fresh_fraction = 0.25f;   // of the negatives in each batch
    float positive_fraction = 0.5f;
    int eval_every = 1000;
    uint64_t seed = 1;
};

struct LabelledPoints {
    int hand = 0;  // index into the training samples (conditioning)
    Points points; // query frame
    std::vector<uint8_t> labels;
};

struct OccTrainReport {
    std::vector<std::pair<int, double>> loss;  // (step, mean BCE since last report)
    std::vector<std::pair<int, double>> iou;   // (step, validation IoU)
    double first_loss = 0.0;
    double final_iou = 0.0;
};

double occupancy_iou(const OccupancyModel& model, const std::vector<OccupancySample>& hands,
                     const std::vector<LabelledPoints>& validation);

/// Minimises binary cross-entropy with Adam. Throws std::invalid_argument if
/// any hand lacks positives or negatives.
OccTrainReport train_occupancy(OccupancyModel& model, const std::vector<OccupancySample>& hands,
                               const OccTrainConfig& cfg, const std::vector<LabelledPoints>& validation = {},
                               const std::function<void(int, double)>& on_log = {});

/// Marches from t=0 along o + t·d in steps of `step` within [t_begin, t_end]
/// and returns the first crossing of p_min, refined by 10 bisections.
/// `prob` evaluates a batch of world points.
using ProbFn = std::function<std::vector<float>(const Points&)>;
std::optional<double> surface_extract(const ProbFn& prob, const Vec3& o, const Vec3& d, double t_begin,
                                      double t_end, double step, double p_min);

}  // namespace skelocc
