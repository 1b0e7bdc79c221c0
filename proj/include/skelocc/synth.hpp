#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "skelocc/camera.hpp"
#include "skelocc/image.hpp"
#include "skelocc/skeleton.hpp"

namespace skelocc {

/// Albedo groups: thumb..pinky phalanges, then the four palm bones.
inline constexpr int kAlbedoGroups = 6;
int albedo_group(int bone);

struct Identity {
    Vec3 albedo = Vec3::Constant(0.5);
    std::array<Vec3, kAlbedoGroups> modulation{};

    Vec3 bone_albedo(int bone) const;
};

struct CapsuleHand {
    Skeleton skeleton;
    std::array<double, kBones> radii{};
    Identity identity;
};

struct Capsule {
    Vec3 a, b;
    double radius = 0.0;
    Vec3 albedo = Vec3::Zero();
};

struct Aabb {
    Vec3 min = Vec3::Constant(-0.125);
    Vec3 max = Vec3::Constant(0.125);

    bool contains(const Vec3& p) const { return (p.array() >= min.array()).all() && (p.array() <= max.array()).all(); }
    /// Ray parameter interval inside the box, or nullopt.
    std::optional<std::pair<double, double>> intersect(const Vec3& o, const Vec3& d) const;
};

/// Scene box: a 0.25 m cube centred on the world origin.
Aabb scene_bbox();

/// Open right hand, palm facing +z, fingers along +y.
const Skeleton& canonical_template();
const std::array<double, kBones>& template_radii();

/// Deterministic in seed. Articulation 0 returns the template; 1 curls every
/// joint by a random fraction of its limit and rotates the hand about the
/// wrist by up to 25°.
CapsuleHand generate_pose(uint64_t seed, double articulation);

/// Identity k draws its base albedo from a fixed palette of well-separated
/// colours (jittered by at most 0.03 per channel).
Identity make_identity(int index, uint64_t seed);

std::vector<Capsule> capsules_of(const CapsuleHand& hand);

bool oracle_occupancy(std::span<const Capsule> caps, const Vec3& p);
bool oracle_occupancy(const CapsuleHand& hand, const Vec3& p);

struct Light {
    Vec3 direction = Vec3(0.3, 0.6, 0.75).normalized();  // towards the light
    double ambient = 0.75;
    double diffuse = 0.25;
};

struct Hit {
    double t = 0.0;
    int capsule = -1;
    Vec3 normal = Vec3::Zero();
};

/// Entry distance of the ray o + t·d (unit d, t > 0) into one capsule.
std::optional<double> intersect_capsule(const Capsule& c, const Vec3& o, const Vec3& d);
std::optional<Hit> intersect_hand(std::span<const Capsule> caps, const Vec3& o, const Vec3& d);
Vec3 shade(const Capsule& c, const Vec3& normal, const Light& light);

struct AnalyticRender {
    Image rgb;    // 3 channels, black background
    Image mask;   // 1 channel, 0 or 1
    std::vector<float> depth;  // row-major ray distance to the nearest hit, +inf on background
};

/// Per-pixel closed-form render through pixel centres. The output size is
/// the camera's resolution.
AnalyticRender render_analytic(std::span<const Capsule> caps, const Camera& cam, const Light& light = {});
AnalyticRender render_analytic(const CapsuleHand& hand, const Camera& cam, const Light& light = {});

struct DatasetOptions {
    int width = 512;
    int height = 512;
    double focal = 800.0;
    double ring_radius = 0.5;
    uint64_t seed = 1;
};

/// Ring cameras around the y axis with per-view elevation jitter, all
/// looking at the world origin.
std::vector<Camera> ring_cameras(int n_views, const DatasetOptions& opt);

/// Pose p uses identity p mod n_identities.
struct PoseSpec {
    uint64_t seed = 0;
    double articulation = 0.0;
    int identity = 0;
};
std::vector<PoseSpec> pose_specs(int n_poses, int n_identities, uint64_t seed);
CapsuleHand build_hand(const PoseSpec& spec, const std::vector<Identity>& identities);

struct SceneBundle {
    std::vector<Camera> cameras;
    std::vector<Identity> identities;
    std::vector<PoseSpec> poses;
    std::vector<CapsuleHand> hands;
    Light light;
    Aabb bbox;
};

/// Renders every (pose, view) pair and writes the dataset layout under
/// out_dir. Throws std::runtime_error if the directory cannot be written.
SceneBundle make_dataset(int n_views, int n_poses, int n_identities, const std::filesystem::path& out_dir,
                         const DatasetOptions& opt = {});

}  // namespace skelocc
