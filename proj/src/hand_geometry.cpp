#include "skelocc/skeleton.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace skelocc {

const std::array<int, kJoints>& hand_parents() {
    static const std::array<int, kJoints> parents = [] {
        std::array<int, kJoints> p{};
        p[0] = -1;
        for (int f = 0; f < 5; ++f)
            for (int k = 0; k < 4; ++k) p[static_cast<size_t>(4 * f + 1 + k)] = k == 0 ? 0 : 4 * f + k;
        return p;
    }();
    return parents;
}

Skeleton canonicalize(const Skeleton& s) {
    Skeleton out = s;
    const Eigen::RowVector3d r = s.joints.row(0);
    out.joints.rowwise() -= r;
    return out;
}

Points mirror_x(const Points& p) {
    Points out = p;
    out.col(0) = -p.col(0);
    return out;
}

Skeleton mirror_x(const Skeleton& s) {
    Skeleton out = s;
    out.joints.col(0) = -s.joints.col(0);
    out.handedness = s.handedness == Handedness::right ? Handedness::left : Handedness::right;
    return out;
}

Points right_query_frame(const Points& p, const TwoHandPose& pose) {
    Points out = p;
    out.rowwise() -= pose.right.root().transpose();
    return out;
}

Points left_query_frame(const Points& p, const TwoHandPose& pose) {
    if (!pose.left) throw std::invalid_argument("left_query_frame: pose has no left hand");
    Points out = p;
    out.rowwise() -= pose.left->root().transpose();
    return mirror_x(out);
}

Skeleton left_query_skeleton(const TwoHandPose& pose) {
    if (!pose.left) throw std::invalid_argument("left_query_skeleton: pose has no left hand");
    return mirror_x(canonicalize(*pose.left));
}

Mat3 shortest_arc(const Vec3& a_in, const Vec3& b_in) {
    const Vec3 a = a_in.normalized(), b = b_in.normalized();
    const double c = std::clamp(a.dot(b), -1.0, 1.0);
    if (c > 1.0 - 1e-15) return Mat3::Identity();
    if (c < -1.0 + 1e-12) {
        int k = 0;
        a.cwiseAbs().minCoeff(&k);
        const Vec3 axis = a.cross(Vec3::Unit(k)).normalized();
        return Eigen::AngleAxisd(M_PI, axis).toRotationMatrix();
    }
    // Rodrigues with v = a×b, |v| = sin θ
    const Vec3 v = a.cross(b);
    Mat3 vx;
    vx << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return Mat3::Identity() + vx + vx * vx / (1.0 + c);
}

namespace {

constexpr std::array<int, 6> kPalmJoints{0, 1, 5, 9, 13, 17};

}  // namespace

Mat3 palm_rotation(const Skeleton& from, const Skeleton& to) {
    Mat3 H = Mat3::Zero();
    for (int j : kPalmJoints) {
        const Vec3 a = from.joint(j) - from.root();
        const Vec3 b = to.joint(j) - to.root();
        H += a * b.transpose();
    }
    Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 D = Mat3::Identity();
    if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) D(2, 2) = -1.0;
    return svd.matrixV() * D * svd.matrixU().transpose();
}

std::vector<BoneTransform> bone_transforms(const Skeleton& observed, const Skeleton& canonical) {
    if (observed.parents != canonical.parents)
        throw std::invalid_argument("bone_transforms: skeleton topologies differ");
    const Mat3 Rp = palm_rotation(observed, canonical);
    std::vector<BoneTransform> out(kBones);
    for (int b = 0; b < kBones; ++b) {
        const Vec3 oa = observed.joint(bone_parent(b)), ob = observed.joint(bone_child(b));
        const Vec3 ca = canonical.joint(bone_parent(b)), cb = canonical.joint(bone_child(b));
        if ((ob - oa).norm() < 1e-12 || (cb - ca).norm() < 1e-12)
            throw std::invalid_argument("bone_transforms: zero-length bone " + std::to_string(b));
        const Mat3 R = shortest_arc(Rp * (ob - oa), cb - ca) * Rp;
        out[static_cast<size_t>(b)] = {R, ca - R * oa};
    }
    return out;
}

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double len2 = ab.squaredNorm();
    const double s = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (p - (a + s * ab)).norm();
}

std::vector<int> segment_by_bone(const Points& p, const Skeleton& s) {
    std::vector<int> bone(static_cast<size_t>(p.rows()), 0);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const Vec3 x = p.row(i).transpose();
        double best = std::numeric_limits<double>::infinity();
        for (int b = 0; b < kBones; ++b) {
            const double d = point_segment_distance(x, s.joint(bone_parent(b)), s.joint(bone_child(b)));
            // distances within 1 nm count as ties (shared joints tie exactly
            // in exact arithmetic but not after rounding)
            if (d < best - 1e-9) {
                best = d;
                bone[static_cast<size_t>(i)] = b;
            }
        }
    }
    return bone;
}

Points apply_bone_transforms(const Points& p, const std::vector<int>& bone_of,
                             const std::vector<BoneTransform>& transforms) {
    Points out(p.rows(), 3);
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        out.row(i) = transforms.at(static_cast<size_t>(bone_of[static_cast<size_t>(i)]))
                         .apply(p.row(i).transpose())
                         .transpose();
    return out;
}

Points deform_to_canonical(const Points& p, const Skeleton& observed, const Skeleton& canonical) {
    return apply_bone_transforms(p, segment_by_bone(p, observed), bone_transforms(observed, canonical));
}

Eigen::Matrix<double, kJoints, 2, Eigen::RowMajor> project_skeleton(const Skeleton& s, const Camera& cam) {
    Eigen::Matrix<double, kJoints, 2, Eigen::RowMajor> uv;
    for (int j = 0; j < kJoints; ++j) {
        const Vec3 q = cam.project(s.joint(j));
        if (!(q.z() > 0.0))
            throw std::invalid_argument("project_skeleton: joint " + std::to_string(j) + " is behind the camera");
        uv.row(j) << q.x(), q.y();
    }
    return uv;
}

nlohmann::json skeleton_to_json(const Skeleton& s) {
    nlohmann::json joints = nlohmann::json::array();
    for (int j = 0; j < kJoints; ++j) joints.push_back({s.joints(j, 0), s.joints(j, 1), s.joints(j, 2)});
    return {{"handedness", s.handedness == Handedness::right ? "right" : "left"},
            {"joints", joints},
            {"parents", s.parents}};
}

Skeleton skeleton_from_json(const nlohmann::json& j) {
    Skeleton s;
    const std::string h = j.at("handedness").get<std::string>();
    if (h != "right" && h != "left") throw std::invalid_argument("skeleton handedness must be right or left, got " + h);
    s.handedness = h == "right" ? Handedness::right : Handedness::left;
    const auto& joints = j.at("joints");
    if (!joints.is_array() || joints.size() != kJoints)
        throw std::invalid_argument("skeleton must have 21 joints");
    for (int r = 0; r < kJoints; ++r)
        for (int c = 0; c < 3; ++c) s.joints(r, c) = joints[static_cast<size_t>(r)].at(static_cast<size_t>(c)).get<double>();
    if (j.contains("parents")) {
        const auto parents = j.at("parents").get<std::vector<int>>();
        if (parents.size() != kJoints) throw std::invalid_argument("skeleton parents must have 21 entries");
        std::copy(parents.begin(), parents.end(), s.parents.begin());
        if (s.parents[0] != -1) throw std::invalid_argument("skeleton joint 0 must be the root");
    }
    return s;
}

}  // namespace skelocc
