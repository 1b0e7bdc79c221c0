#include "skelocc/dataset.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

namespace skelocc {

namespace fs = std::filesystem;

fs::path pose_dir(const fs::path& dir, int pose) { return dir / "poses" / std::to_string(pose); }
fs::path view_path(const fs::path& dir, int pose, int view) {
    return pose_dir(dir, pose) / ("view_" + std::to_string(view) + ".png");
}
fs::path mask_path(const fs::path& dir, int pose, int view) {
    return pose_dir(dir, pose) / ("mask_" + std::to_string(view) + ".png");
}
fs::path depth_path(const fs::path& dir, int pose, int view) {
    return pose_dir(dir, pose) / ("depth_" + std::to_string(view) + ".bin");
}

namespace {

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
Vec3 vec_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

nlohmann::json read_json(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw std::runtime_error("missing file: " + p.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed JSON in " + p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << j.dump(1) << "\n";
}

}  // namespace

nlohmann::json identity_to_json(const Identity& id) {
    nlohmann::json mod = nlohmann::json::array();
    for (const Vec3& m : id.modulation) mod.push_back(vec_json(m));
    return {{"albedo", vec_json(id.albedo)}, {"modulation", mod}};
}

Identity identity_from_json(const nlohmann::json& j) {
    Identity id;
    id.albedo = vec_from(j.at("albedo"));
    const auto& mod = j.at("modulation");
    if (mod.size() != kAlbedoGroups) throw std::invalid_argument("identity modulation must have 6 entries");
    for (int g = 0; g < kAlbedoGroups; ++g) id.modulation[static_cast<size_t>(g)] = vec_from(mod.at(static_cast<size_t>(g)));
    return id;
}

void write_scene_meta(const fs::path& dir, const SceneBundle& scene) {
    nlohmann::json cams = nlohmann::json::array();
    for (const Camera& c : scene.cameras) cams.push_back(camera_to_json(c));
    write_json(dir / "cameras.json", cams);

    nlohmann::json ids = nlohmann::json::array();
    for (const Identity& id : scene.identities) ids.push_back(identity_to_json(id));
    nlohmann::json poses = nlohmann::json::array();
    for (const PoseSpec& p : scene.poses)
        poses.push_back({{"seed", p.seed}, {"articulation", p.articulation}, {"identity", p.identity}});
    const auto& radii = scene.hands.empty() ? template_radii() : scene.hands.front().radii;
    nlohmann::json meta = {
        {"identities", ids},
        {"poses", poses},
        {"radii", std::vector<double>(radii.begin(), radii.end())},
        {"bbox", {{"min", vec_json(scene.bbox.min)}, {"max", vec_json(scene.bbox.max)}}},
        {"light",
         {{"direction", vec_json(scene.light.direction)},
          {"ambient", scene.light.ambient},
          {"diffuse", scene.light.diffuse}}},
    };
    write_json(dir / "dataset.json", meta);
}

Dataset::Dataset(fs::path dir) : dir_(std::move(dir)) {
    const auto cams = read_json(dir_ / "cameras.json");
    try {
        for (const auto& c : cams) cameras_.push_back(camera_from_json(c));
    } catch (const std::exception& e) {
        throw std::runtime_error("bad camera in " + (dir_ / "cameras.json").string() + ": " + e.what());
    }
    if (cameras_.empty()) throw std::runtime_error("no cameras in " + (dir_ / "cameras.json").string());

    const auto meta_path = dir_ / "dataset.json";
    const auto meta = read_json(meta_path);
    try {
        for (const auto& j : meta.at("identities")) identities_.push_back(identity_from_json(j));
        for (const auto& j : meta.at("poses"))
            poses_.push_back({j.at("seed").get<uint64_t>(), j.at("articulation").get<double>(), j.at("identity").get<int>()});
        const auto r = meta.at("radii").get<std::vector<double>>();
        if (r.size() != kBones) throw std::invalid_argument("radii must have 20 entries");
        std::copy(r.begin(), r.end(), radii_.begin());
        bbox_.min = vec_from(meta.at("bbox").at("min"));
        bbox_.max = vec_from(meta.at("bbox").at("max"));
        light_.direction = vec_from(meta.at("light").at("direction"));
        light_.ambient = meta.at("light").at("ambient").get<double>();
        light_.diffuse = meta.at("light").at("diffuse").get<double>();
    } catch (const std::exception& e) {
        throw std::runtime_error("malformed " + meta_path.string() + ": " + e.what());
    }
    for (const PoseSpec& p : poses_)
        if (p.identity < 0 || p.identity >= n_identities())
            throw std::runtime_error("pose references unknown identity " + std::to_string(p.identity) + " in " +
                                     meta_path.string());

    for (int p = 0; p < static_cast<int>(poses_.size()); ++p) {
        const auto sp = pose_dir(dir_, p) / "skeleton.json";
        try {
            skeletons_.push_back(skeleton_from_json(read_json(sp)));
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("malformed " + sp.string() + ": " + e.what());
        }
    }
}

CapsuleHand Dataset::hand(int pose) const {
    CapsuleHand h;
    h.skeleton = skeleton(pose);
    h.radii = radii_;
    h.identity = identities_.at(static_cast<size_t>(identity_of(pose)));
    return h;
}

Frame Dataset::load_frame(int pose, int view, bool with_depth) const {
    Frame f;
    f.rgb = read_png(view_path(dir_, pose, view));
    f.mask = read_png(mask_path(dir_, pose, view));
    if (f.mask.channels != 1) f.mask = to_gray(f.mask);
    if (with_depth && fs::exists(depth_path(dir_, pose, view))) f.depth = read_f32(depth_path(dir_, pose, view));
    const Camera& c = camera(view);
    if (f.rgb.width != c.width || f.rgb.height != c.height || f.rgb.channels != 3)
        throw std::runtime_error("image size does not match camera: " + view_path(dir_, pose, view).string());
    if (!f.depth.empty() && f.depth.size() != static_cast<size_t>(c.width) * c.height)
        throw std::runtime_error("depth size does not match camera: " + depth_path(dir_, pose, view).string());
    return f;
}

}  // namespace skelocc
