#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "skelocc/camera.hpp"
#include "skelocc/image.hpp"
#include "skelocc/skeleton.hpp"
#include "skelocc/synth.hpp"

namespace skelocc {

/// One calibrated observation. depth (ray distance per pixel, +inf on
/// background) is optional; mask is optional for sampling but required by
/// the filter.
struct CarveView {
    Camera camera;
    const Image* rgb = nullptr;
    const Image* mask = nullptr;
    const std::vector<float>* depth = nullptr;
};

struct CarveOptions {
    double sigma_max = 0.08;
    double rho = 1.0;
    /// A view is dropped from the colour statistics when the candidate lies
    /// more than this far behind the view's depth buffer.
    double occlusion_margin = 0.01;
    /// A candidate closer to a camera than that view's visible surface (by
    /// more than this margin) lies in free space and is rejected. Negative
    /// disables the test.
    double free_space_margin = 0.0002;
    bool use_depth = true;
    /// Image normalisation applied before sampling; identity when empty.
    std::function<Image(const Image&)> preprocess;
    int partitions = 1;
};

struct CandidateCloud {
    Points points;
    int n_views = 0;
    std::vector<float> colors;      // M×N×3
    std::vector<uint8_t> valid;     // M×N, in frame and unoccluded
    std::vector<uint8_t> in_mask;   // M×N, projection lands on a mask pixel
    std::vector<float> stddev;      // M, channel std over valid views, averaged
    std::vector<uint8_t> free_space;  // M, seen in front of a depth buffer
    std::vector<uint8_t> keep;      // M, filled by consistency_filter

    int64_t size() const { return points.rows(); }
    int64_t kept() const;
};

/// Deterministic uniform samples in the box.
Points sample_bbox(const Aabb& box, int64_t count, uint64_t seed);

/// Bilinear colour lookup per view, validity flags, mask hits and the
/// per-point standard deviation. Views whose projection falls outside the
/// frame are invalid. A point with no valid view gets std 0.
CandidateCloud project_and_sample(const Points& points, std::span<const CarveView> views,
                                  const CarveOptions& opt = {});

/// keep = std ≤ σ_max, then mask agreement in at least ρ·N views, then not
/// flagged as free space.
void consistency_filter(CandidateCloud& cloud, double sigma_max, double rho);

/// project_and_sample + consistency_filter over `opt.partitions` contiguous
/// chunks run in parallel; the merged result does not depend on the count.
CandidateCloud carve(const Points& points, std::span<const CarveView> views, const CarveOptions& opt = {});

struct PointCloud {
    Points points;
    std::vector<uint8_t> labels;  // optional, one per point
};

void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_point_cloud(const std::filesystem::path& path);

}  // namespace skelocc
