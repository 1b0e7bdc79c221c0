#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "skelocc/camera.hpp"
#include "skelocc/image.hpp"
#include "skelocc/skeleton.hpp"
#include "skelocc/synth.hpp"

namespace skelocc {

// On-disk layout:
//   DIR/cameras.json                 list of camera objects
//   DIR/dataset.json                 identities, pose specs, light, bbox
//   DIR/poses/<p>/skeleton.json
//   DIR/poses/<p>/view_<v>.png, mask_<v>.png, depth_<v>.bin (float32, optional)

std::filesystem::path pose_dir(const std::filesystem::path& dir, int pose);
std::filesystem::path view_path(const std::filesystem::path& dir, int pose, int view);
std::filesystem::path mask_path(const std::filesystem::path& dir, int pose, int view);
std::filesystem::path depth_path(const std::filesystem::path& dir, int pose, int view);

nlohmann::json identity_to_json(const Identity& id);
Identity identity_from_json(const nlohmann::json& j);

/// Writes cameras.json and dataset.json.
void write_scene_meta(const std::filesystem::path& dir, const SceneBundle& scene);

struct Frame {
    Image rgb;
    Image mask;
    std::vector<float> depth;  // empty when absent
};

class Dataset {
public:
    /// Throws std::runtime_error naming the offending path on missing or
    /// malformed files.
    explicit Dataset(std::filesystem::path dir);

    const std::filesystem::path& dir() const { return dir_; }
    int n_views() const { return static_cast<int>(cameras_.size()); }
    int n_poses() const { return static_cast<int>(skeletons_.size()); }
    int n_identities() const { return static_cast<int>(identities_.size()); }
    const std::vector<Camera>& cameras() const { return cameras_; }
    const Camera& camera(int v) const { return cameras_.at(static_cast<size_t>(v)); }
    const Skeleton& skeleton(int p) const { return skeletons_.at(static_cast<size_t>(p)); }
    int identity_of(int p) const { return poses_.at(static_cast<size_t>(p)).identity; }
    const std::vector<Identity>& identities() const { return identities_; }
    const std::vector<PoseSpec>& pose_specs() const { return poses_; }
    const Light& light() const { return light_; }
    const Aabb& bbox() const { return bbox_; }
    const std::array<double, kBones>& radii() const { return radii_; }

    /// Analytic capsule hand of pose p (for oracles); needs dataset.json.
    CapsuleHand hand(int pose) const;
    Frame load_frame(int pose, int view, bool with_depth = true) const;

private:
    std::filesystem::path dir_;
    std::vector<Camera> cameras_;
    std::vector<Skeleton> skeletons_;
    std::vector<Identity> identities_;
    std::vector<PoseSpec> poses_;
    std::array<double, kBones> radii_{};
    Light light_;
    Aabb bbox_;
};

}  // namespace skelocc
