#include "skelocc/carving.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <thread>

namespace skelocc {

int64_t CandidateCloud::kept() const { return std::count(keep.begin(), keep.end(), uint8_t{1}); }

Points sample_bbox(const Aabb& box, int64_t count, uint64_t seed) {
    if (!((box.max - box.min).array() > 0.0).all()) throw std::invalid_argument("sample_bbox: box has no volume");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Points p(count, 3);
    for (int64_t i = 0; i < count; ++i)
        for (int k = 0; k < 3; ++k) p(i, k) = box.min[k] + (box.max[k] - box.min[k]) * u(rng);
    return p;
}

namespace {

bool mask_at(const Image& mask, double u, double v) {
    if (u < 0.0 || v < 0.0 || u >= mask.width || v >= mask.height) return false;
    return mask.at(static_cast<int>(u), static_cast<int>(v), 0) > 0.5f;
}

float depth_at(const std::vector<float>& depth, int width, double u, double v) {
    return depth[static_cast<size_t>(static_cast<int>(v)) * width + static_cast<int>(u)];
}

// Nearest surface among the (up to) four pixels around the projection.
float depth_min_around(const std::vector<float>& depth, int width, int height, double u, double v) {
    const int x0 = std::clamp(static_cast<int>(std::floor(u - 0.5)), 0, width - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(v - 0.5)), 0, height - 1);
    const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    return std::min({depth[static_cast<size_t>(y0) * width + x0], depth[static_cast<size_t>(y0) * width + x1],
                     depth[static_cast<size_t>(y1) * width + x0], depth[static_cast<size_t>(y1) * width + x1]});
}

// Population std per channel, averaged. Values are sorted first so the
// result does not depend on view order.
float channel_std(std::array<std::vector<float>, 3>& ch) {
    const size_t n = ch[0].size();
    if (n == 0) return 0.0f;
    double acc = 0.0;
    for (auto& c : ch) {
        std::sort(c.begin(), c.end());
        double mean = 0.0;
        for (float x : c) mean += x;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (float x : c) var += (x - mean) * (x - mean);
        acc += std::sqrt(var / static_cast<double>(n));
    }
    return static_cast<float>(acc / 3.0);
}

void sample_range(const Points& points, std::span<const CarveView> views, const std::vector<Image>& rgb,
                  const CarveOptions& opt, CandidateCloud& out, int64_t begin, int64_t end) {
    const int N = static_cast<int>(views.size());
    std::array<std::vector<float>, 3> ch;
    for (int64_t i = begin; i < end; ++i) {
        const Vec3 X = points.row(i).transpose();
        for (auto& c : ch) c.clear();
        for (int v = 0; v < N; ++v) {
            const CarveView& view = views[static_cast<size_t>(v)];
            const size_t slot = static_cast<size_t>(i) * N + v;
            const Vec3 q = view.camera.project(X);
            if (!(q.z() > 0.0) || !view.camera.in_frame(q.x(), q.y())) continue;
            if (view.mask) out.in_mask[slot] = mask_at(*view.mask, q.x(), q.y());
            if (opt.use_depth && view.depth && !view.depth->empty()) {
                const double dist = (X - view.camera.center()).norm();
                const float buf = depth_at(*view.depth, view.camera.width, q.x(), q.y());
                if (opt.free_space_margin >= 0.0 &&
                    dist < depth_min_around(*view.depth, view.camera.width, view.camera.height, q.x(), q.y()) -
                               opt.free_space_margin)
                    out.free_space[static_cast<size_t>(i)] = 1;
                if (std::isfinite(buf) && dist > buf + opt.occlusion_margin) continue;
            }
            const auto c = sample_bilinear_rgb(rgb[static_cast<size_t>(v)], q.x(), q.y());
            if (!c) continue;
            out.valid[slot] = 1;
            for (int k = 0; k < 3; ++k) {
                out.colors[slot * 3 + k] = (*c)[k];
                ch[static_cast<size_t>(k)].push_back((*c)[k]);
            }
        }
        out.stddev[static_cast<size_t>(i)] = channel_std(ch);
    }
}

CandidateCloud allocate(const Points& points, int n_views) {
    CandidateCloud c;
    c.points = points;
    c.n_views = n_views;
    const size_t M = static_cast<size_t>(points.rows());
    c.colors.assign(M * n_views * 3, 0.0f);
    c.valid.assign(M * n_views, 0);
    c.in_mask.assign(M * n_views, 0);
    c.stddev.assign(M, 0.0f);
    c.free_space.assign(M, 0);
    c.keep.assign(M, 0);
    return c;
}

std::vector<Image> prepared_images(std::span<const CarveView> views, const CarveOptions& opt) {
    std::vector<Image> rgb;
    for (const CarveView& v : views) {
        if (!v.rgb) throw std::invalid_argument("carving: view without an image");
        rgb.push_back(opt.preprocess ? opt.preprocess(*v.rgb) : *v.rgb);
    }
    return rgb;
}

void filter_range(CandidateCloud& cloud, double sigma_max, double rho, int64_t begin, int64_t end) {
    const int N = cloud.n_views;
    const double need = rho * N - 1e-9;
    for (int64_t i = begin; i < end; ++i) {
        const size_t idx = static_cast<size_t>(i);
        bool keep = cloud.stddev[idx] <= sigma_max;
        if (keep) {
            int hits = 0;
            for (int v = 0; v < N; ++v) hits += cloud.in_mask[idx * N + v];
            keep = hits >= need;
        }
        if (keep && !cloud.free_space.empty()) keep = !cloud.free_space[idx];
        cloud.keep[idx] = keep ? 1 : 0;
    }
}

}  // namespace

CandidateCloud project_and_sample(const Points& points, std::span<const CarveView> views, const CarveOptions& opt) {
    CandidateCloud out = allocate(points, static_cast<int>(views.size()));
    const auto rgb = prepared_images(views, opt);
    sample_range(points, views, rgb, opt, out, 0, points.rows());
    return out;
}

void consistency_filter(CandidateCloud& cloud, double sigma_max, double rho) {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("consistency_filter: rho must be in (0, 1]");
    cloud.keep.assign(static_cast<size_t>(cloud.size()), 0);
    filter_range(cloud, sigma_max, rho, 0, cloud.size());
}

CandidateCloud carve(const Points& points, std::span<const CarveView> views, const CarveOptions& opt) {
    if (!(opt.rho > 0.0 && opt.rho <= 1.0)) throw std::invalid_argument("carve: rho must be in (0, 1]");
    for (const CarveView& v : views)
        if (!v.mask) throw std::invalid_argument("carve: every view needs a mask");
    CandidateCloud out = allocate(points, static_cast<int>(views.size()));
    const auto rgb = prepared_images(views, opt);
    const int64_t M = points.rows();
    const int P = std::max(1, std::min<int>(opt.partitions, static_cast<int>(std::max<int64_t>(M, 1))));
    auto work = [&](int part) {
        const int64_t b = M * part / P, e = M * (part + 1) / P;
        sample_range(points, views, rgb, opt, out, b, e);
        filter_range(out, opt.sigma_max, opt.rho, b, e);
    };
    if (P == 1) {
        work(0);
    } else {
        // partitions write disjoint slices, so the merge is the identity
        std::vector<std::thread> pool;
        for (int part = 0; part < P; ++part) pool.emplace_back(work, part);
        for (auto& t : pool) t.join();
    }
    return out;
}

void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
    if (!cloud.labels.empty() && cloud.labels.size() != static_cast<size_t>(cloud.points.rows()))
        throw std::invalid_argument("write_point_cloud: label count differs from point count");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.write("OCPC", 4);
    const uint64_t n = static_cast<uint64_t>(cloud.points.rows());
    os.write(reinterpret_cast<const char*>(&n), 8);
    for (int64_t i = 0; i < cloud.points.rows(); ++i)
        for (int k = 0; k < 3; ++k) {
            const float f = static_cast<float>(cloud.points(i, k));
            os.write(reinterpret_cast<const char*>(&f), 4);
        }
    const uint8_t has_labels = cloud.labels.empty() ? 0 : 1;
    os.write(reinterpret_cast<const char*>(&has_labels), 1);
    if (has_labels) os.write(reinterpret_cast<const char*>(cloud.labels.data()), static_cast<std::streamsize>(n));
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    char magic[4];
    uint64_t n = 0;
    is.read(magic, 4);
    is.read(reinterpret_cast<char*>(&n), 8);
    if (!is || std::string(magic, 4) != "OCPC") throw std::runtime_error("not a point cloud file: " + path.string());
    PointCloud c;
    c.points.resize(static_cast<Eigen::Index>(n), 3);
    for (uint64_t i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) {
            float f = 0.0f;
            is.read(reinterpret_cast<char*>(&f), 4);
            c.points(static_cast<Eigen::Index>(i), k) = f;
        }
    if (!is) throw std::runtime_error("truncated point cloud: " + path.string());
    uint8_t has_labels = 0;
    if (is.read(reinterpret_cast<char*>(&has_labels), 1) && has_labels) {
        c.labels.resize(n);
        is.read(reinterpret_cast<char*>(c.labels.data()), static_cast<std::streamsize>(n));
        if (!is) throw std::runtime_error("truncated point cloud labels: " + path.string());
    }
    return c;
}

}  // namespace skelocc
