#pragma once

#include <array>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "skelocc/camera.hpp"

namespace skelocc {

inline constexpr int kJoints = 21;
inline constexpr int kBones = 20;

/// Row-major m×3 point matrix.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using JointMatrix = Eigen::Matrix<double, kJoints, 3, Eigen::RowMajor>;

enum class Handedness { right, left };

/// Wrist is joint 0; finger f (thumb..pinky) owns joints 4f+1 .. 4f+4,
/// base to tip. Bone b runs from parent(b+1) to joint b+1.
const std::array<int, kJoints>& hand_parents();
inline int bone_child(int b) { return b + 1; }
inline int bone_parent(int b) { return hand_parents()[static_cast<size_t>(b + 1)]; }
/// 0..4 thumb..pinky.
inline int bone_finger(int b) { return b / 4; }

struct Skeleton {
    JointMatrix joints = JointMatrix::Zero();
    Handedness handedness = Handedness::right;
    std::array<int, kJoints> parents = hand_parents();

    Vec3 joint(int i) const { return joints.row(i).transpose(); }
    Vec3 root() const { return joint(0); }
    double bone_length(int b) const { return (joint(bone_child(b)) - joint(bone_parent(b))).norm(); }
};

/// S̃ = S − 1·s₀ᵀ.
Skeleton canonicalize(const Skeleton& s);
Points mirror_x(const Points& p);
/// Mirrors the joints and flips the handedness label.
Skeleton mirror_x(const Skeleton& s);

struct TwoHandPose {
    Skeleton right;
    std::optional<Skeleton> left;

    Vec3 offset() const { return left ? Vec3(left->root() - right.root()) : Vec3::Zero(); }
};

/// P − s₀ᴿ.
Points right_query_frame(const Points& p, const TwoHandPose& pose);
/// f(P − s₀ᴸ), f = mirror about x. Requires a left hand.
Points left_query_frame(const Points& p, const TwoHandPose& pose);
/// f(S̃_L), expressed as a right hand.
Skeleton left_query_skeleton(const TwoHandPose& pose);

/// Rigid map x ↦ R·x + t.
struct BoneTransform {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Vec3 apply(const Vec3& x) const { return R * x + t; }
    BoneTransform inverse() const { return {R.transpose(), -R.transpose() * t}; }
};

/// Minimal rotation taking unit direction a onto unit direction b. For
/// anti-parallel inputs the axis is the cross product of a with the
/// coordinate axis least aligned with it.
Mat3 shortest_arc(const Vec3& a, const Vec3& b);

/// Least-squares rotation aligning the palm joints (wrist, thumb base and the
/// four knuckles) of `from` onto `to`, both taken relative to their wrists.
Mat3 palm_rotation(const Skeleton& from, const Skeleton& to);

/// Per-bone transforms mapping the observed pose onto the canonical pose.
/// Each bone's parent joint lands on the canonical parent joint and its
/// direction is aligned by the palm rotation followed by the shortest arc.
/// Throws std::invalid_argument naming the bone for zero-length bones.
std::vector<BoneTransform> bone_transforms(const Skeleton& observed, const Skeleton& canonical);

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b);

/// Nearest bone per point; ties (within 1e-9 m) go to the lowest bone index.
std::vector<int> segment_by_bone(const Points& p, const Skeleton& s);
Points apply_bone_transforms(const Points& p, const std::vector<int>& bone_of,
                             const std::vector<BoneTransform>& transforms);
Points deform_to_canonical(const Points& p, const Skeleton& observed, const Skeleton& canonical);

/// n×2 pixel coordinates. Throws std::invalid_argument naming the first
/// joint at or behind the camera.
Eigen::Matrix<double, kJoints, 2, Eigen::RowMajor> project_skeleton(const Skeleton& s, const Camera& cam);

nlohmann::json skeleton_to_json(const Skeleton& s);
Skeleton skeleton_from_json(const nlohmann::json& j);

}  // namespace skelocc
