#include "skelocc/synth.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <random>
#include <stdexcept>

#include "skelocc/dataset.hpp"

namespace skelocc {

namespace fs = std::filesystem;

namespace {

constexpr double kDeg = M_PI / 180.0;
const Vec3 kPalmNormal(0, 0, 1);
const Vec3 kWrist(0.0, -0.085, 0.0);

struct FingerSpec {
    Vec3 base;       // first joint, relative to the wrist
    double splay;    // radians, positive towards +x
    std::array<double, 3> lengths;
};

// index..pinky; joint 4f+1 is the knuckle
const std::array<FingerSpec, 4> kFingers{{
    {{0.026, 0.085, 0.0}, 0.10, {0.040, 0.024, 0.021}},
    {{0.006, 0.090, 0.0}, 0.00, {0.044, 0.028, 0.022}},
    {{-0.013, 0.085, 0.0}, -0.08, {0.041, 0.026, 0.021}},
    {{-0.030, 0.075, 0.0}, -0.18, {0.032, 0.019, 0.018}},
}};
const Vec3 kThumbBase(0.022, 0.022, 0.008);
const Vec3 kThumbDir = Vec3(0.75, 0.6, 0.28).normalized();
const std::array<double, 3> kThumbLengths{0.035, 0.032, 0.026};
const Vec3 kThumbCurlAxis = Vec3(0.75, 0.6, 0.28).normalized().cross(Vec3(-0.4, 0.0, 1.0)).normalized();

Mat3 rot(const Vec3& axis, double angle) { return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix(); }

// Joint positions relative to the wrist for the given per-joint flexion.
JointMatrix build_joints(const std::array<std::array<double, 3>, 5>& flex, const std::array<double, 5>& abduct) {
    JointMatrix J = JointMatrix::Zero();
    {
        Vec3 p = kThumbBase;
        J.row(1) = p.transpose();
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) {
            acc += flex[0][static_cast<size_t>(k)];
            const Vec3 d = rot(kThumbCurlAxis, acc) * rot(kPalmNormal, abduct[0]) * kThumbDir;
            p += kThumbLengths[static_cast<size_t>(k)] * d;
            J.row(2 + k) = p.transpose();
        }
    }
    for (int f = 1; f < 5; ++f) {
        const FingerSpec& s = kFingers[static_cast<size_t>(f - 1)];
        const Vec3 d0 = rot(kPalmNormal, abduct[static_cast<size_t>(f)]) * Vec3(std::sin(s.splay), std::cos(s.splay), 0.0);
        const Vec3 lateral = d0.cross(kPalmNormal);
        Vec3 p = s.base;
        J.row(4 * f + 1) = p.transpose();
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) {
            acc += flex[static_cast<size_t>(f)][static_cast<size_t>(k)];
            p += s.lengths[static_cast<size_t>(k)] * (rot(lateral, acc) * d0);
            J.row(4 * f + 2 + k) = p.transpose();
        }
    }
    return J;
}


const std::array<Vec3, 6> kPalette{{
    {0.82, 0.36, 0.28},
    {0.30, 0.76, 0.34},
    {0.30, 0.40, 0.82},
    {0.80, 0.74, 0.26},
    {0.66, 0.30, 0.74},
    {0.30, 0.74, 0.76},
}};

}  // namespace

int albedo_group(int bone) {
    // first bone of each non-thumb finger lies in the palm
    if (bone >= 4 && bone % 4 == 0) return 5;
    return bone_finger(bone);
}

Vec3 Identity::bone_albedo(int bone) const {
    return albedo.cwiseProduct(modulation[static_cast<size_t>(albedo_group(bone))]).cwiseMax(0.0).cwiseMin(1.0);
}

std::optional<std::pair<double, double>> Aabb::intersect(const Vec3& o, const Vec3& d) const {
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
        if (std::fabs(d[k]) < 1e-300) {
            if (o[k] < min[k] || o[k] > max[k]) return std::nullopt;
            continue;
        }
        double a = (min[k] - o[k]) / d[k], b = (max[k] - o[k]) / d[k];
        if (a > b) std::swap(a, b);
        t0 = std::max(t0, a);
        t1 = std::min(t1, b);
    }
    if (t1 < std::max(t0, 0.0)) return std::nullopt;
    return std::make_pair(std::max(t0, 0.0), t1);
}

Aabb scene_bbox() { return {}; }

const Skeleton& canonical_template() {
    static const Skeleton s = [] {
        Skeleton t;
        std::array<std::array<double, 3>, 5> flex{};
        t.joints = build_joints(flex, {});
        t.joints.rowwise() += kWrist.transpose();
        return t;
    }();
    return s;
}

const std::array<double, kBones>& template_radii() {
    static const std::array<double, kBones> r = [] {
        std::array<double, kBones> out{};
        out[0] = 0.013;
        out[1] = 0.0115;
        out[2] = 0.0105;
        out[3] = 0.0095;
        for (int f = 1; f < 5; ++f) {
            const double s = f == 4 ? 0.9 : 1.0;
            out[static_cast<size_t>(4 * f)] = 0.0135;
            out[static_cast<size_t>(4 * f + 1)] = 0.0095 * s;
            out[static_cast<size_t>(4 * f + 2)] = 0.0088 * s;
            out[static_cast<size_t>(4 * f + 3)] = 0.0080 * s;
        }
        return out;
    }();
    return r;
}

CapsuleHand generate_pose(uint64_t seed, double articulation) {
    const double a = std::clamp(articulation, 0.0, 1.0);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    // joint limits (radians): knuckle, middle, distal
    const std::array<double, 3> finger_limit{80 * kDeg, 95 * kDeg, 65 * kDeg};
    const std::array<double, 3> thumb_limit{35 * kDeg, 45 * kDeg, 60 * kDeg};
    std::array<std::array<double, 3>, 5> flex{};
    std::array<double, 5> abduct{};
    for (int f = 0; f < 5; ++f) {
        const double curl = 0.35 + 0.65 * u01(rng);
        const auto& lim = f == 0 ? thumb_limit : finger_limit;
        for (int k = 0; k < 3; ++k)
            flex[static_cast<size_t>(f)][static_cast<size_t>(k)] = a * curl * (0.8 + 0.2 * u01(rng)) * lim[static_cast<size_t>(k)];
        abduct[static_cast<size_t>(f)] = a * (2.0 * u01(rng) - 1.0) * 10 * kDeg;
    }
    Vec3 axis(2.0 * u01(rng) - 1.0, 2.0 * u01(rng) - 1.0, 2.0 * u01(rng) - 1.0);
    if (axis.norm() < 1e-6) axis = Vec3::UnitZ();
    const double angle = a * 25 * kDeg * u01(rng);
    const Vec3 shift = a * 0.01 * Vec3(2.0 * u01(rng) - 1.0, 2.0 * u01(rng) - 1.0, 2.0 * u01(rng) - 1.0);

    CapsuleHand h;
    if (a == 0.0) {
        h.skeleton = canonical_template();
    } else {
        const Mat3 Rg = rot(axis, angle);
        const JointMatrix local = build_joints(flex, abduct);
        for (int j = 0; j < kJoints; ++j)
            h.skeleton.joints.row(j) = (Rg * local.row(j).transpose() + kWrist + shift).transpose();
    }
    h.radii = template_radii();
    h.identity = make_identity(0, seed);
    return h;
}

Identity make_identity(int index, uint64_t seed) {
    std::mt19937_64 rng(seed * 7919 + static_cast<uint64_t>(index) * 104729 + 17);
    std::uniform_real_distribution<double> jitter(-0.03, 0.03);
    Identity id;
    id.albedo = kPalette[static_cast<size_t>(index) % kPalette.size()];
    for (int c = 0; c < 3; ++c) id.albedo[c] += jitter(rng);
    // per-group hue shift; phases differ per identity
    for (int g = 0; g < kAlbedoGroups; ++g)
        for (int c = 0; c < 3; ++c)
            id.modulation[static_cast<size_t>(g)][c] =
                1.0 + 0.3 * std::cos(2.0 * M_PI * g / kAlbedoGroups + 2.0 * M_PI * c / 3.0 + index);
    return id;
}

std::vector<Capsule> capsules_of(const CapsuleHand& hand) {
    std::vector<Capsule> caps;
    caps.reserve(kBones);
    for (int b = 0; b < kBones; ++b)
        caps.push_back({hand.skeleton.joint(bone_parent(b)), hand.skeleton.joint(bone_child(b)),
                        hand.radii[static_cast<size_t>(b)], hand.identity.bone_albedo(b)});
    return caps;
}

bool oracle_occupancy(std::span<const Capsule> caps, const Vec3& p) {
    for (const Capsule& c : caps)
        if (point_segment_distance(p, c.a, c.b) <= c.radius) return true;
    return false;
}

bool oracle_occupancy(const CapsuleHand& hand, const Vec3& p) {
    const auto caps = capsules_of(hand);
    return oracle_occupancy(caps, p);
}

std::optional<double> intersect_capsule(const Capsule& c, const Vec3& ro, const Vec3& rd) {
    const Vec3 ba = c.b - c.a, oa = ro - c.a;
    const double baba = ba.dot(ba), bard = ba.dot(rd), baoa = ba.dot(oa), rdoa = rd.dot(oa), oaoa = oa.dot(oa);
    const double r2 = c.radius * c.radius;
    const double A = baba - bard * bard;
    if (A > 1e-14 * baba) {
        const double B = baba * rdoa - baoa * bard;
        const double C = baba * oaoa - baoa * baoa - r2 * baba;
        const double h = B * B - A * C;
        if (h < 0.0) return std::nullopt;
        const double t = (-B - std::sqrt(h)) / A;
        const double y = baoa + t * bard;
        if (y > 0.0 && y < baba) return t > 0.0 ? std::optional<double>(t) : std::nullopt;
    }
    // spherical caps: nearest entry over both
    std::optional<double> best;
    for (const Vec3& centre : {c.a, c.b}) {
        const Vec3 oc = ro - centre;
        const double B = rd.dot(oc), C = oc.dot(oc) - r2;
        const double h = B * B - C;
        if (h < 0.0) continue;
        const double t = -B - std::sqrt(h);
        if (t > 0.0 && (!best || t < *best)) best = t;
    }
    return best;
}

std::optional<Hit> intersect_hand(std::span<const Capsule> caps, const Vec3& o, const Vec3& d) {
    std::optional<Hit> best;
    for (size_t i = 0; i < caps.size(); ++i) {
        const auto t = intersect_capsule(caps[i], o, d);
        if (t && (!best || *t < best->t)) best = Hit{*t, static_cast<int>(i), Vec3::Zero()};
    }
    if (best) {
        const Capsule& c = caps[static_cast<size_t>(best->capsule)];
        const Vec3 p = o + best->t * d;
        const Vec3 ab = c.b - c.a;
        const double s = std::clamp((p - c.a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
        best->normal = (p - (c.a + s * ab)).normalized();
    }
    return best;
}

Vec3 shade(const Capsule& c, const Vec3& normal, const Light& light) {
    const double lambert = std::max(0.0, normal.dot(light.direction));
    return (c.albedo * (light.ambient + light.diffuse * lambert)).cwiseMin(1.0);
}

AnalyticRender render_analytic(std::span<const Capsule> caps, const Camera& cam, const Light& light) {
    AnalyticRender out;
    out.rgb = Image(cam.width, cam.height, 3);
    out.mask = Image(cam.width, cam.height, 1);
    out.depth.assign(static_cast<size_t>(cam.width) * cam.height, std::numeric_limits<float>::infinity());
    const Vec3 o = cam.center();
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const Vec3 d = cam.direction(x + 0.5, y + 0.5);
            const auto hit = intersect_hand(caps, o, d);
            if (!hit) continue;
            const Vec3 c = shade(caps[static_cast<size_t>(hit->capsule)], hit->normal, light);
            for (int k = 0; k < 3; ++k) out.rgb.at(x, y, k) = static_cast<float>(c[k]);
            out.mask.at(x, y, 0) = 1.0f;
            out.depth[static_cast<size_t>(y) * cam.width + x] = static_cast<float>(hit->t);
        }
    return out;
}

AnalyticRender render_analytic(const CapsuleHand& hand, const Camera& cam, const Light& light) {
    const auto caps = capsules_of(hand);
    return render_analytic(caps, cam, light);
}

std::vector<Camera> ring_cameras(int n_views, const DatasetOptions& opt) {
    std::mt19937_64 rng(opt.seed * 31 + 5);
    std::uniform_real_distribution<double> az_jitter(-5 * kDeg, 5 * kDeg);
    std::uniform_real_distribution<double> elev(-30 * kDeg, 30 * kDeg);
    std::vector<Camera> cams;
    for (int v = 0; v < n_views; ++v) {
        const double az = 2.0 * M_PI * v / n_views + az_jitter(rng);
        const double el = elev(rng);
        const Vec3 eye = opt.ring_radius * Vec3(std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el));
        cams.push_back(look_at(eye, Vec3::Zero(), Vec3::UnitY(), opt.focal, opt.width, opt.height));
    }
    return cams;
}

std::vector<PoseSpec> pose_specs(int n_poses, int n_identities, uint64_t seed) {
    std::vector<PoseSpec> out;
    for (int p = 0; p < n_poses; ++p) {
        const double a = n_poses > 1 ? 0.25 + 0.5 * p / (n_poses - 1) : 0.5;
        out.push_back({seed * 1000 + static_cast<uint64_t>(p), a, p % std::max(1, n_identities)});
    }
    return out;
}

CapsuleHand build_hand(const PoseSpec& spec, const std::vector<Identity>& identities) {
    CapsuleHand h = generate_pose(spec.seed, spec.articulation);
    h.identity = identities.at(static_cast<size_t>(spec.identity));
    return h;
}

SceneBundle make_dataset(int n_views, int n_poses, int n_identities, const fs::path& out_dir,
                         const DatasetOptions& opt) {
    if (n_views < 2) throw std::invalid_argument("make_dataset: need at least 2 views");
    if (n_poses < 1 || n_identities < 1) throw std::invalid_argument("make_dataset: need at least one pose and identity");
    SceneBundle scene;
    scene.cameras = ring_cameras(n_views, opt);
    for (int i = 0; i < n_identities; ++i) scene.identities.push_back(make_identity(i, opt.seed));
    scene.poses = pose_specs(n_poses, n_identities, opt.seed);
    for (const PoseSpec& p : scene.poses) scene.hands.push_back(build_hand(p, scene.identities));
    scene.bbox = scene_bbox();

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
    write_scene_meta(out_dir, scene);
    for (int p = 0; p < n_poses; ++p) {
        fs::create_directories(pose_dir(out_dir, p), ec);
        if (ec) throw std::runtime_error("cannot create " + pose_dir(out_dir, p).string() + ": " + ec.message());
        {
            const auto path = pose_dir(out_dir, p) / "skeleton.json";
            std::ofstream os(path);
            if (!os) throw std::runtime_error("cannot write " + path.string());
            os << skeleton_to_json(scene.hands[static_cast<size_t>(p)].skeleton).dump(1) << "\n";
        }
        const auto caps = capsules_of(scene.hands[static_cast<size_t>(p)]);
        for (int v = 0; v < n_views; ++v) {
            const AnalyticRender r = render_analytic(caps, scene.cameras[static_cast<size_t>(v)], scene.light);
            write_png(view_path(out_dir, p, v), r.rgb);
            write_png(mask_path(out_dir, p, v), r.mask);
            write_f32(depth_path(out_dir, p, v), r.depth);
        }
    }
    return scene;
}

}  // namespace skelocc
