#include "skelocc/camera.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <stdexcept>

namespace skelocc {

Vec3 Camera::project(const Vec3& X) const {
    const Vec3 xc = to_camera(X);
    const Vec3 p = K * xc;
    return {p.x() / p.z(), p.y() / p.z(), xc.z()};
}

Vec3 Camera::direction(double u, double v) const {
    const Vec3 d_cam = K.inverse() * Vec3(u, v, 1.0);
    return (R.transpose() * d_cam).normalized();
}

void Camera::validate() const {
    if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || K(2, 2) != 1.0)
        throw std::invalid_argument("camera K must be upper triangular with K[2][2] = 1");
    if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0)) throw std::invalid_argument("camera focal lengths must be positive");
    if ((R.transpose() * R - Mat3::Identity()).norm() > 1e-6 || R.determinant() < 0.0)
        throw std::invalid_argument("camera R is not a rotation");
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera resolution must be positive");
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width, int height) {
    const Vec3 z = (target - eye).normalized();
    const Vec3 x = z.cross(-up).normalized();
    const Vec3 y = z.cross(x);
    Camera c;
    c.R.row(0) = x.transpose();
    c.R.row(1) = y.transpose();
    c.R.row(2) = z.transpose();
    c.t = -c.R * eye;
    c.K << focal, 0, width / 2.0, 0, focal, height / 2.0, 0, 0, 1;
    c.width = width;
    c.height = height;
    return c;
}

namespace {

nlohmann::json mat_to_json(const Mat3& m) {
    nlohmann::json j = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) j.push_back({m(r, 0), m(r, 1), m(r, 2)});
    return j;
}

Mat3 mat_from_json(const nlohmann::json& j, const char* key) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument(std::string("camera ") + key + " must be 3x3");
    Mat3 m;
    for (int r = 0; r < 3; ++r) {
        if (!j[r].is_array() || j[r].size() != 3)
            throw std::invalid_argument(std::string("camera ") + key + " must be 3x3");
        for (int c = 0; c < 3; ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
}

}  // namespace

nlohmann::json camera_to_json(const Camera& c) {
    return {{"K", mat_to_json(c.K)},
            {"R", mat_to_json(c.R)},
            {"t", {c.t.x(), c.t.y(), c.t.z()}},
            {"width", c.width},
            {"height", c.height}};
}

Camera camera_from_json(const nlohmann::json& j) {
    Camera c;
    c.K = mat_from_json(j.at("K"), "K");
    c.R = mat_from_json(j.at("R"), "R");
    const auto& t = j.at("t");
    if (!t.is_array() || t.size() != 3) throw std::invalid_argument("camera t must have 3 entries");
    c.t = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.validate();
    return c;
}

}  // namespace skelocc
