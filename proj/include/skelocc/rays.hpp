#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "skelocc/camera.hpp"
#include "skelocc/occupancy.hpp"
#include "skelocc/skeleton.hpp"
#include "skelocc/synth.hpp"

namespace skelocc {

/// Axis-aligned pixel rectangle [x0, x1) × [y0, y1) in continuous coordinates.
struct Rect {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
};

struct CropJitter {
    double scale_sigma = 0.0;  // relative box size
    double shift_sigma = 0.0;  // pixels of the source image
};

/// Train-time jitter defaults.
inline CropJitter train_jitter() { return {0.05, 3.0}; }

/// Affine map taking the (jittered) box onto [0, w) × [0, h).
Mat3 crop_transform(const Rect& box, int target_w, int target_h, const CropJitter& jitter, uint64_t seed);

/// K′ = diag(1/k, 1/k, 1)·T·K.
Mat3 update_intrinsics(const Mat3& K, const Mat3& T, double k);

/// Camera with intrinsics K′ and the given output resolution.
Camera crop_camera(const Camera& cam, const Mat3& T, double k, int width, int height);

/// Square box around the projected joints, grown by `margin` metres at each
/// joint's depth and then by `pad` relative to its side.
Rect skeleton_box(const Camera& cam, const Skeleton& s, double margin = 0.03, double pad = 0.15);

/// Uniform [0,1) value from a hash of (seed, a, b). Stateless, so rays can be
/// processed in any order with identical results.
double counter_uniform(uint64_t seed, uint64_t a, uint64_t b);
/// Standard normal from the same hash family.
double counter_normal(uint64_t seed, uint64_t a, uint64_t b);

struct RayBatch {
    Points origins;     // R×3
    Points directions;  // R×3 unit
    std::vector<int32_t> pixel;  // y·width + x
    std::vector<double> t_near, t_far;
    std::vector<uint8_t> alive;
    int width = 0, height = 0;

    int64_t size() const { return origins.rows(); }
    int64_t alive_count() const;
    std::vector<int32_t> alive_rays() const;
};

/// One ray per pixel centre. With no pixel list every pixel is used.
RayBatch generate_rays(const Camera& cam);
RayBatch generate_rays(const Camera& cam, std::span<const int32_t> pixels);

struct BoundsOptions {
    double p_min = 0.1;
    double p_max = 0.99;
    double d_fix = 0.02;
    double step = 0.0;           // 0 selects d_fix/8
    double min_thickness = 0.0;  // 0 selects d_fix/4
    Aabb bbox;
    int round_steps = 16;
};

struct BoundsStats {
    int64_t rays = 0;
    int64_t alive = 0;
    int64_t queries = 0;
};

/// Marches every ray through the box at a fixed step, takes the first
/// crossing of p_min (refined by 10 bisections) as t_near and
/// t_far = min(p_max crossing past t_near, t_near + d_fix), floored at
/// t_near + min_thickness. Rays with no crossing are marked dead.
BoundsStats compute_bounds(RayBatch& batch, const ProbFn& prob, const BoundsOptions& opt = {});

/// Bounds from the box alone with every box-hitting ray alive.
void box_bounds(RayBatch& batch, const Aabb& bbox);

/// Depth samples for the alive rays of a batch.
struct SampleSet {
    int samples = 0;
    std::vector<int32_t> ray;    // batch index per row
    std::vector<double> depth;   // rows×samples, strictly ascending per row
    std::vector<double> delta;   // rows×samples segment lengths
    /// Merged sets only: index of the coarse sample each entry came from, −1
    /// for newly drawn depths.
    std::vector<int32_t> source;

    int64_t rows() const { return static_cast<int64_t>(ray.size()); }
    int64_t count() const { return static_cast<int64_t>(depth.size()); }
    /// World positions, row-major over (row, sample).
    Points positions(const RayBatch& batch) const;
};

/// k_u samples per alive ray, one per equal sub-interval of [t_near, t_far].
/// Without jitter each sits at its sub-interval centre.
SampleSet uniform_samples(const RayBatch& batch, int k_u, uint64_t seed, bool jitter = true);

/// Inverse CDF of the piecewise-constant density with mass weights[i] on
/// [edges[i], edges[i+1]). Weights need not be normalized.
double sample_piecewise(std::span<const double> edges, std::span<const double> weights, double u);

/// Adds k_h depths per row drawn from the occupancy weights of the coarse
/// samples over their midpoint segments, then merges and re-sorts. Rows with
/// all-zero weight fall back to uniform draws and are counted in `fallbacks`.
SampleSet hierarchical_samples(const RayBatch& batch, const SampleSet& coarse, std::span<const float> weights,
                               int k_h, uint64_t seed, int64_t* fallbacks = nullptr);

}  // namespace skelocc
