#include "skelocc/rays.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace skelocc {

namespace {

uint64_t splitmix(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

uint64_t counter_hash(uint64_t seed, uint64_t a, uint64_t b) {
    return splitmix(splitmix(splitmix(seed) ^ a) ^ (b * 0xD1B54A32D192ED03ull));
}

}  // namespace

double counter_uniform(uint64_t seed, uint64_t a, uint64_t b) {
    return static_cast<double>(counter_hash(seed, a, b) >> 11) * 0x1.0p-53;
}

double counter_normal(uint64_t seed, uint64_t a, uint64_t b) {
    const double u1 = 1.0 - counter_uniform(seed, a, 2 * b);
    const double u2 = counter_uniform(seed, a, 2 * b + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Mat3 crop_transform(const Rect& box, int target_w, int target_h, const CropJitter& jitter, uint64_t seed) {
    if (!(box.width() > 0.0) || !(box.height() > 0.0))
        throw std::invalid_argument("crop_transform: degenerate box " + std::to_string(box.width()) + "x" +
                                    std::to_string(box.height()));
    if (target_w <= 0 || target_h <= 0) throw std::invalid_argument("crop_transform: empty target");
    double cx = 0.5 * (box.x0 + box.x1), cy = 0.5 * (box.y0 + box.y1);
    double w = box.width(), h = box.height();
    if (jitter.scale_sigma > 0.0) {
        const double s = std::max(0.5, 1.0 + jitter.scale_sigma * counter_normal(seed, 1, 0));
        w *= s;
        h *= s;
    }
    if (jitter.shift_sigma > 0.0) {
        cx += jitter.shift_sigma * counter_normal(seed, 2, 0);
        cy += jitter.shift_sigma * counter_normal(seed, 3, 0);
    }
    const double sx = target_w / w, sy = target_h / h;
    Mat3 T = Mat3::Identity();
    T(0, 0) = sx;
    T(1, 1) = sy;
    T(0, 2) = -sx * (cx - 0.5 * w);
    T(1, 2) = -sy * (cy - 0.5 * h);
    return T;
}

Mat3 update_intrinsics(const Mat3& K, const Mat3& T, double k) {
    if (!(k >= 1.0)) throw std::invalid_argument("update_intrinsics: downscale factor must be >= 1");
    Mat3 D = Mat3::Identity();
    D(0, 0) = D(1, 1) = 1.0 / k;
    return D * T * K;
}

Camera crop_camera(const Camera& cam, const Mat3& T, double k, int width, int height) {
    Camera c = cam;
    c.K = update_intrinsics(cam.K, T, k);
    c.width = width;
    c.height = height;
    return c;
}

Rect skeleton_box(const Camera& cam, const Skeleton& s, double margin, double pad) {
    double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
    double x1 = -x0, y1 = -x0;
    const double f = 0.5 * (cam.K(0, 0) + cam.K(1, 1));
    for (int j = 0; j < kJoints; ++j) {
        const Vec3 p = cam.project(s.joints.row(j).transpose());
        if (!(p.z() > 0.0)) throw std::invalid_argument("skeleton_box: joint " + std::to_string(j) + " is behind the camera");
        const double r = margin * f / p.z();
        x0 = std::min(x0, p.x() - r);
        x1 = std::max(x1, p.x() + r);
        y0 = std::min(y0, p.y() - r);
        y1 = std::max(y1, p.y() + r);
    }
    const double side = std::max(x1 - x0, y1 - y0) * (1.0 + pad);
    const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
    return {cx - 0.5 * side, cy - 0.5 * side, cx + 0.5 * side, cy + 0.5 * side};
}

int64_t RayBatch::alive_count() const { return std::count(alive.begin(), alive.end(), uint8_t{1}); }

std::vector<int32_t> RayBatch::alive_rays() const {
    std::vector<int32_t> out;
    for (size_t i = 0; i < alive.size(); ++i)
        if (alive[i]) out.push_back(static_cast<int32_t>(i));
    return out;
}

RayBatch generate_rays(const Camera& cam) {
    std::vector<int32_t> all(static_cast<size_t>(cam.width) * cam.height);
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int32_t>(i);
    return generate_rays(cam, all);
}

RayBatch generate_rays(const Camera& cam, std::span<const int32_t> pixels) {
    cam.validate();
    const int64_t n = static_cast<int64_t>(pixels.size());
    RayBatch b;
    b.width = cam.width;
    b.height = cam.height;
    b.origins.resize(n, 3);
    b.directions.resize(n, 3);
    b.pixel.assign(pixels.begin(), pixels.end());
    b.t_near.assign(static_cast<size_t>(n), 0.0);
    b.t_far.assign(static_cast<size_t>(n), 0.0);
    b.alive.assign(static_cast<size_t>(n), 1);
    const Mat3 M = cam.R.transpose() * cam.K.inverse();
    const Vec3 o = cam.center();
    const int64_t total = static_cast<int64_t>(cam.width) * cam.height;
    for (int64_t i = 0; i < n; ++i) {
        const int32_t p = pixels[static_cast<size_t>(i)];
        if (p < 0 || p >= total)
            throw std::invalid_argument("generate_rays: pixel " + std::to_string(p) + " outside " +
                                        std::to_string(cam.width) + "x" + std::to_string(cam.height));
        const double u = p % cam.width + 0.5, v = p / cam.width + 0.5;
        b.origins.row(i) = o.transpose();
        b.directions.row(i) = (M * Vec3(u, v, 1.0)).normalized().transpose();
    }
    return b;
}

void box_bounds(RayBatch& batch, const Aabb& bbox) {
    for (int64_t i = 0; i < batch.size(); ++i) {
        const auto hit = bbox.intersect(batch.origins.row(i).transpose(), batch.directions.row(i).transpose());
        const bool ok = hit && hit->second > hit->first;
        batch.alive[static_cast<size_t>(i)] = ok ? 1 : 0;
        batch.t_near[static_cast<size_t>(i)] = ok ? hit->first : 0.0;
        batch.t_far[static_cast<size_t>(i)] = ok ? hit->second : 0.0;
    }
}

namespace {

struct Query {
    const RayBatch& batch;
    const ProbFn& prob;
    int64_t count = 0;

    std::vector<float> at(std::span<const int32_t> rays, std::span<const double> t) {
        Points p(static_cast<int64_t>(rays.size()), 3);
        for (size_t i = 0; i < rays.size(); ++i)
            p.row(static_cast<int64_t>(i)) = batch.origins.row(rays[i]) + t[i] * batch.directions.row(rays[i]);
        count += p.rows();
        if (p.rows() == 0) return {};
        std::vector<float> r = prob(p);
        if (r.size() != rays.size()) throw std::runtime_error("compute_bounds: probability callback returned wrong count");
        return r;
    }

    /// Ten bisections on [lo, hi] per ray toward the first p ≥ level; returns hi.
    std::vector<double> bisect(std::span<const int32_t> rays, std::vector<double> lo, std::vector<double> hi,
                               float level) {
        std::vector<double> mid(rays.size());
        for (int it = 0; it < 10; ++it) {
            for (size_t i = 0; i < rays.size(); ++i) mid[i] = 0.5 * (lo[i] + hi[i]);
            const std::vector<float> p = at(rays, mid);
            for (size_t i = 0; i < rays.size(); ++i) (p[i] >= level ? hi[i] : lo[i]) = mid[i];
        }
        return hi;
    }
};

}  // namespace

BoundsStats compute_bounds(RayBatch& batch, const ProbFn& prob, const BoundsOptions& opt) {
    const double step = opt.step > 0.0 ? opt.step : opt.d_fix / 8.0;
    const double thick = opt.min_thickness > 0.0 ? opt.min_thickness : opt.d_fix / 4.0;
    const int64_t n = batch.size();
    Query q{batch, prob};
    std::vector<double> begin(static_cast<size_t>(n)), end(static_cast<size_t>(n));
    std::vector<int32_t> active;
    for (int64_t i = 0; i < n; ++i) {
        batch.alive[static_cast<size_t>(i)] = 0;
        const auto hit = opt.bbox.intersect(batch.origins.row(i).transpose(), batch.directions.row(i).transpose());
        if (!hit) continue;
        begin[static_cast<size_t>(i)] = hit->first;
        end[static_cast<size_t>(i)] = hit->second;
        active.push_back(static_cast<int32_t>(i));
    }

    // entry march: sample j sits at begin + j·step while it stays within end
    std::vector<int32_t> found;
    std::vector<double> lo_t, hi_t;
    std::vector<int32_t> bisect_rays;
    std::vector<uint8_t> at_begin(static_cast<size_t>(n), 0);
    for (int64_t j0 = 0; !active.empty(); j0 += opt.round_steps) {
        std::vector<int32_t> rays;
        std::vector<double> ts;
        for (int32_t r : active)
            for (int64_t j = j0; j < j0 + opt.round_steps; ++j) {
                const double t = begin[r] + static_cast<double>(j) * step;
                if (t > end[r] + 1e-12) break;
                rays.push_back(r);
                ts.push_back(t);
            }
        const std::vector<float> p = q.at(rays, ts);
        std::vector<int32_t> next;
        size_t k = 0;
        for (int32_t r : active) {
            bool hit = false, more = false;
            for (; k < rays.size() && rays[k] == r; ++k) {
                if (hit) continue;
                if (p[k] >= opt.p_min) {
                    hit = true;
                    if (ts[k] == begin[r]) {
                        at_begin[r] = 1;
                        batch.t_near[r] = ts[k];
                    } else {
                        bisect_rays.push_back(r);
                        lo_t.push_back(ts[k] - step);
                        hi_t.push_back(ts[k]);
                    }
                    found.push_back(r);
                }
            }
            if (!hit) more = begin[r] + static_cast<double>(j0 + opt.round_steps) * step <= end[r] + 1e-12;
            if (!hit && more) next.push_back(r);
        }
        active.swap(next);
    }
    const std::vector<double> near = q.bisect(bisect_rays, lo_t, hi_t, static_cast<float>(opt.p_min));
    for (size_t i = 0; i < bisect_rays.size(); ++i) batch.t_near[bisect_rays[i]] = near[i];

    // saturation march past t_near
    const int sat_steps = static_cast<int>(std::ceil(opt.d_fix / step - 1e-9));
    std::vector<int32_t> rays;
    std::vector<double> ts;
    for (int32_t r : found)
        for (int j = 1; j <= sat_steps; ++j) {
            rays.push_back(r);
            ts.push_back(batch.t_near[r] + j * step);
        }
    const std::vector<float> p = q.at(rays, ts);
    std::vector<int32_t> sat_rays;
    std::vector<double> sat_lo, sat_hi;
    for (size_t k = 0; k < rays.size();) {
        const int32_t r = rays[k];
        batch.t_far[r] = batch.t_near[r] + opt.d_fix;
        bool hit = false;
        for (; k < rays.size() && rays[k] == r; ++k)
            if (!hit && p[k] >= opt.p_max) {
                hit = true;
                sat_rays.push_back(r);
                sat_lo.push_back(ts[k] - step);
                sat_hi.push_back(ts[k]);
            }
    }
    const std::vector<double> sat = q.bisect(sat_rays, sat_lo, sat_hi, static_cast<float>(opt.p_max));
    for (size_t i = 0; i < sat_rays.size(); ++i)
        batch.t_far[sat_rays[i]] = std::min(sat[i], batch.t_near[sat_rays[i]] + opt.d_fix);
    for (int32_t r : found) {
        batch.t_far[r] = std::max(batch.t_far[r], batch.t_near[r] + thick);
        batch.alive[r] = 1;
    }
    for (int64_t i = 0; i < n; ++i)
        if (!batch.alive[static_cast<size_t>(i)]) batch.t_near[static_cast<size_t>(i)] = batch.t_far[static_cast<size_t>(i)] = 0.0;
    return {n, static_cast<int64_t>(found.size()), q.count};
}

Points SampleSet::positions(const RayBatch& batch) const {
    Points p(count(), 3);
    for (int64_t r = 0; r < rows(); ++r)
        for (int s = 0; s < samples; ++s) {
            const int64_t i = r * samples + s;
            p.row(i) = batch.origins.row(ray[r]) + depth[i] * batch.directions.row(ray[r]);
        }
    return p;
}

namespace {

void finalize_deltas(SampleSet& set, const RayBatch& batch) {
    set.delta.resize(set.depth.size());
    for (int64_t r = 0; r < set.rows(); ++r) {
        double* d = &set.depth[static_cast<size_t>(r * set.samples)];
        for (int s = 1; s < set.samples; ++s)
            if (!(d[s] > d[s - 1])) d[s] = std::nextafter(d[s - 1], std::numeric_limits<double>::infinity());
        double* dl = &set.delta[static_cast<size_t>(r * set.samples)];
        for (int s = 0; s + 1 < set.samples; ++s) dl[s] = d[s + 1] - d[s];
        const int32_t b = set.ray[r];
        dl[set.samples - 1] = (batch.t_far[b] - batch.t_near[b]) / set.samples;
    }
}

}  // namespace

SampleSet uniform_samples(const RayBatch& batch, int k_u, uint64_t seed, bool jitter) {
    if (k_u < 2) throw std::invalid_argument("uniform_samples: need at least 2 samples per ray, got " + std::to_string(k_u));
    SampleSet s;
    s.samples = k_u;
    s.ray = batch.alive_rays();
    s.depth.resize(static_cast<size_t>(s.rows() * k_u));
    for (int64_t r = 0; r < s.rows(); ++r) {
        const int32_t b = s.ray[r];
        const double a = batch.t_near[b], len = batch.t_far[b] - a;
        for (int i = 0; i < k_u; ++i) {
            const double u = jitter ? counter_uniform(seed, static_cast<uint64_t>(batch.pixel[b]), static_cast<uint64_t>(i)) : 0.5;
            s.depth[static_cast<size_t>(r * k_u + i)] = a + len * (i + u) / k_u;
        }
    }
    finalize_deltas(s, batch);
    return s;
}

double sample_piecewise(std::span<const double> edges, std::span<const double> weights, double u) {
    if (edges.size() != weights.size() + 1 || weights.empty())
        throw std::invalid_argument("sample_piecewise: need one more edge than weights");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("sample_piecewise: negative weight");
        total += w;
    }
    if (!(total > 0.0)) throw std::invalid_argument("sample_piecewise: all weights are zero");
    const double target = u * total;
    double acc = 0.0;
    size_t j = 0;
    for (; j + 1 < weights.size(); ++j) {
        if (weights[j] > 0.0 && target < acc + weights[j]) break;
        acc += weights[j];
    }
    while (weights[j] == 0.0 && j > 0) acc -= weights[--j];  // last positive bin absorbs rounding
    const double frac = std::clamp((target - acc) / weights[j], 0.0, 1.0);
    const double t = edges[j] + frac * (edges[j + 1] - edges[j]);
    return std::min(t, std::nextafter(edges[j + 1], edges[j]));
}

SampleSet hierarchical_samples(const RayBatch& batch, const SampleSet& coarse, std::span<const float> weights,
                               int k_h, uint64_t seed, int64_t* fallbacks) {
    if (static_cast<int64_t>(weights.size()) != coarse.count())
        throw std::invalid_argument("hierarchical_samples: " + std::to_string(weights.size()) + " weights for " +
                                    std::to_string(coarse.count()) + " samples");
    if (k_h < 1) throw std::invalid_argument("hierarchical_samples: k_h must be positive");
    const int S = coarse.samples, M = S + k_h;
    SampleSet out;
    out.samples = M;
    out.ray = coarse.ray;
    out.depth.resize(static_cast<size_t>(coarse.rows() * M));
    out.source.resize(out.depth.size());
    int64_t fb = 0;
    std::vector<std::pair<double, int32_t>> merged(static_cast<size_t>(M));
    std::vector<double> edges(static_cast<size_t>(S + 1)), w(static_cast<size_t>(S));
    for (int64_t r = 0; r < coarse.rows(); ++r) {
        const int32_t b = coarse.ray[r];
        const double* d = &coarse.depth[static_cast<size_t>(r * S)];
        edges[0] = batch.t_near[b];
        for (int i = 1; i < S; ++i) edges[static_cast<size_t>(i)] = 0.5 * (d[i - 1] + d[i]);
        edges[static_cast<size_t>(S)] = batch.t_far[b];
        double total = 0.0;
        for (int i = 0; i < S; ++i) {
            const float wi = weights[static_cast<size_t>(r * S + i)];
            if (!(wi >= 0.0f)) throw std::invalid_argument("hierarchical_samples: negative weight");
            w[static_cast<size_t>(i)] = wi;
            total += wi;
        }
        for (int i = 0; i < S; ++i) merged[static_cast<size_t>(i)] = {d[i], i};
        for (int i = 0; i < k_h; ++i) {
            const double u = counter_uniform(seed, static_cast<uint64_t>(batch.pixel[b]), static_cast<uint64_t>(1000 + i));
            const double t =
                total > 0.0 ? sample_piecewise(edges, w, u) : edges[0] + u * (edges[static_cast<size_t>(S)] - edges[0]);
            merged[static_cast<size_t>(S + i)] = {t, -1};
        }
        if (!(total > 0.0)) ++fb;
        std::sort(merged.begin(), merged.end());
        for (int i = 0; i < M; ++i) {
            out.depth[static_cast<size_t>(r * M + i)] = merged[static_cast<size_t>(i)].first;
            out.source[static_cast<size_t>(r * M + i)] = merged[static_cast<size_t>(i)].second;
        }
    }
    if (fallbacks) *fallbacks = fb;
    finalize_deltas(out, batch);
    return out;
}

}  // namespace skelocc
