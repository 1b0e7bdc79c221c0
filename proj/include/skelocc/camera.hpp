#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <json.hpp>

namespace skelocc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole camera. x_cam = R·X + t; pixel = K·x_cam (continuous coordinates,
/// pixel i spans [i, i+1) so its centre sits at i+0.5).
struct Camera {
    Mat3 K = Mat3::Identity();
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    int width = 0;
    int height = 0;

    Vec3 center() const { return -R.transpose() * t; }
    Vec3 to_camera(const Vec3& X) const { return R * X + t; }
    /// Returns (u, v, depth along the optical axis).
    Vec3 project(const Vec3& X) const;
    /// Unit world-space direction through continuous pixel location (u, v).
    Vec3 direction(double u, double v) const;
    bool in_frame(double u, double v) const { return u >= 0 && v >= 0 && u < width && v < height; }

    /// Throws std::invalid_argument if K is not upper triangular with
    /// positive focals or R is not a rotation.
    void validate() const;
};

/// Camera at `eye` looking at `target`, with image rows pointing along −up.
Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width, int height);

nlohmann::json camera_to_json(const Camera& c);
Camera camera_from_json(const nlohmann::json& j);

}  // namespace skelocc
