#include "skelocc/renderer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "skelocc/checkpoint.hpp"

namespace skelocc {

RadianceModel::RadianceModel(const RadianceConfig& cfg) : cfg_(cfg) {
    if (cfg.depth < 1 || cfg.width < 1) throw std::invalid_argument("RadianceModel: depth and width must be positive");
    std::mt19937 rng(static_cast<uint32_t>(cfg.seed));
    layers_.emplace_back(input_dim(), cfg.width, rng);
    for (int l = 1; l < cfg.depth; ++l) layers_.emplace_back(cfg.width, cfg.width, rng);
    sigma_ = Linear(cfg.width, 1, rng);
    color_ = Linear(cfg.width, 3, rng);
    extra_ = Linear(cfg.width, cfg.extra, rng);
}

int RadianceModel::view_dim() const { return cfg_.view_dependent ? 3 + 6 * cfg_.view_freqs : 0; }

int RadianceModel::input_dim() const { return cfg_.features + 1 + cfg_.code_dim + view_dim(); }

RadianceOutput RadianceModel::forward(const Tensor& input) const {
    if (input.shape().size() != 2 || input.dim(1) != input_dim())
        throw std::invalid_argument("RadianceModel: expected N×" + std::to_string(input_dim()) + " input, got " +
                                    shape_str(input.shape()));
    Tensor h = input;
    for (const Linear& l : layers_) h = relu(l(h));
    return {softplus(sigma_(h)), sigmoid(color_(h)), extra_(h)};
}

NamedTensors RadianceModel::parameters() const {
    NamedTensors out;
    for (size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, "rad.l" + std::to_string(i));
    sigma_.collect(out, "rad.sigma");
    color_.collect(out, "rad.color");
    extra_.collect(out, "rad.extra");
    return out;
}

void RadianceModel::load(const std::map<std::string, Tensor>& source) { assign_from(parameters(), source); }

std::vector<float> encode_direction(const Vec3& d, int freqs) {
    std::vector<float> out{static_cast<float>(d.x()), static_cast<float>(d.y()), static_cast<float>(d.z())};
    for (int k = 0; k < freqs; ++k) {
        const double f = std::ldexp(std::numbers::pi, k);
        for (int c = 0; c < 3; ++c) out.push_back(static_cast<float>(std::sin(f * d[c])));
        for (int c = 0; c < 3; ++c) out.push_back(static_cast<float>(std::cos(f * d[c])));
    }
    return out;
}

Aabb joint_box(const TwoHandPose& pose, double margin) {
    Aabb b;
    b.min = pose.right.joints.colwise().minCoeff().transpose();
    b.max = pose.right.joints.colwise().maxCoeff().transpose();
    if (pose.left) {
        b.min = b.min.cwiseMin(pose.left->joints.colwise().minCoeff().transpose());
        b.max = b.max.cwiseMax(pose.left->joints.colwise().maxCoeff().transpose());
    }
    b.min.array() -= margin;
    b.max.array() += margin;
    return b;
}

namespace {

struct SampleQuery {
    std::vector<float> features;
    std::vector<float> signed_p;
};

SampleQuery query_points(const Models& models, const TwoHandPose& pose, const Points& world) {
    if (world.rows() == 0) return {};
    TwoHandResult r = query_two_hands(models.occupancy, world, pose, models.space, &models.templ);
    return {std::move(r.features), std::move(r.signed_p)};
}

}  // namespace

PreparedRays prepare_rays(const Models& models, const TwoHandPose& pose, const Camera& cam, const RenderOptions& opt) {
    NoGradGuard no_grad;
    DenormalGuard denormals;
    RayBatch batch = generate_rays(cam);
    PreparedRays prep;
    prep.width = cam.width;
    prep.height = cam.height;
    prep.rays = batch.size();
    prep.m = models.occupancy.config().features;
    prep.view_dim = models.radiance.view_dim();
    if (prep.m != models.radiance.config().features)
        throw std::invalid_argument("prepare_rays: occupancy features (" + std::to_string(prep.m) +
                                    ") do not match the radiance input (" +
                                    std::to_string(models.radiance.config().features) + ")");

    if (opt.prune) {
        BoundsOptions b = opt.bounds;
        if (opt.joint_margin >= 0.0) {
            const Aabb j = joint_box(pose, opt.joint_margin);
            b.bbox.min = b.bbox.min.cwiseMax(j.min);
            b.bbox.max = b.bbox.max.cwiseMin(j.max);
        }
        const ProbFn prob = [&](const Points& p) {
            SampleQuery q = query_points(models, pose, p);
            for (float& v : q.signed_p) v = std::fabs(v);
            return q.signed_p;
        };
        if ((b.bbox.max.array() > b.bbox.min.array()).all()) {
            prep.occupancy_queries += compute_bounds(batch, prob, b).queries;
        } else {
            std::fill(batch.alive.begin(), batch.alive.end(), uint8_t{0});
        }
    } else {
        box_bounds(batch, opt.box);
    }
    if (batch.alive_count() == 0) return prep;

    const SampleSet coarse = uniform_samples(batch, opt.k_u, opt.seed, opt.jitter);
    SampleQuery cq = query_points(models, pose, coarse.positions(batch));
    prep.occupancy_queries += coarse.count();
    const int m = prep.m;

    SampleSet set;
    if (opt.hierarchical && opt.k_h > 0) {
        std::vector<float> w(cq.signed_p.size());
        for (size_t i = 0; i < w.size(); ++i) w[i] = std::fabs(cq.signed_p[i]);
        set = hierarchical_samples(batch, coarse, w, opt.k_h, opt.seed ^ 0x9e3779b97f4a7c15ull, &prep.fallbacks);
        // occupancy of the new depths only
        std::vector<int64_t> fresh;
        for (int64_t i = 0; i < set.count(); ++i)
            if (set.source[static_cast<size_t>(i)] < 0) fresh.push_back(i);
        Points fp(static_cast<int64_t>(fresh.size()), 3);
        for (size_t i = 0; i < fresh.size(); ++i) {
            const int64_t row = fresh[i] / set.samples;
            const int32_t b = set.ray[static_cast<size_t>(row)];
            fp.row(static_cast<int64_t>(i)) =
                batch.origins.row(b) + set.depth[static_cast<size_t>(fresh[i])] * batch.directions.row(b);
        }
        const SampleQuery fq = query_points(models, pose, fp);
        prep.occupancy_queries += fp.rows();
        prep.features.resize(static_cast<size_t>(set.count() * m));
        prep.signed_p.resize(static_cast<size_t>(set.count()));
        size_t next = 0;
        for (int64_t i = 0; i < set.count(); ++i) {
            const int32_t src = set.source[static_cast<size_t>(i)];
            const float* f;
            if (src >= 0) {
                const int64_t ci = (i / set.samples) * coarse.samples + src;
                prep.signed_p[static_cast<size_t>(i)] = cq.signed_p[static_cast<size_t>(ci)];
                f = &cq.features[static_cast<size_t>(ci * m)];
            } else {
                prep.signed_p[static_cast<size_t>(i)] = fq.signed_p[next];
                f = &fq.features[next * static_cast<size_t>(m)];
                ++next;
            }
            std::copy(f, f + m, prep.features.begin() + i * m);
        }
    } else {
        set = coarse;
        prep.features = std::move(cq.features);
        prep.signed_p = std::move(cq.signed_p);
    }

    prep.samples = set.samples;
    prep.pixel.resize(static_cast<size_t>(set.rows()));
    prep.sample_row.resize(static_cast<size_t>(set.count()));
    for (int64_t r = 0; r < set.rows(); ++r) {
        const int32_t b = set.ray[static_cast<size_t>(r)];
        prep.pixel[static_cast<size_t>(r)] = batch.pixel[static_cast<size_t>(b)];
        for (int s = 0; s < set.samples; ++s) prep.sample_row[static_cast<size_t>(r * set.samples + s)] = static_cast<int32_t>(r);
        if (prep.view_dim > 0) {
            const std::vector<float> e =
                encode_direction(batch.directions.row(b).transpose(), models.radiance.config().view_freqs);
            prep.view.insert(prep.view.end(), e.begin(), e.end());
        }
    }
    prep.delta.resize(set.delta.size());
    for (size_t i = 0; i < set.delta.size(); ++i) prep.delta[i] = static_cast<float>(set.delta[i] / opt.density_unit);
    return prep;
}

RadianceOutput eval_radiance(const Models& models, const PreparedRays& prep, int code_id) {
    const Tensor& code = models.codes.get_code(code_id);
    const int64_t n = prep.count();
    if (code.dim(1) != models.radiance.config().code_dim)
        throw std::invalid_argument("eval_radiance: code size " + std::to_string(code.dim(1)) + " does not match " +
                                    std::to_string(models.radiance.config().code_dim));
    std::vector<Tensor> parts;
    parts.push_back(Tensor::from({n, prep.m}, prep.features));
    parts.push_back(Tensor::from({n, 1}, prep.signed_p));
    const std::vector<int32_t> zeros(static_cast<size_t>(n), 0);
    parts.push_back(gather_rows(code, zeros));
    if (prep.view_dim > 0)
        parts.push_back(gather_rows(Tensor::from({prep.alive(), prep.view_dim}, prep.view), prep.sample_row));
    return models.radiance.forward(concat_cols(parts));
}

RenderTensors render_prepared(const Models& models, const PreparedRays& prep, int code_id, const RenderOptions& opt) {
    const int d = models.radiance.config().extra;
    const int64_t H = prep.height, W = prep.width, P = H * W;
    const int64_t C = 3 + d;
    std::vector<float> fill(static_cast<size_t>(C + 1), 0.0f);
    std::copy(opt.background.begin(), opt.background.end(), fill.begin());
    Tensor full;
    if (prep.alive() == 0) {
        // still validates the id
        models.codes.get_code(code_id);
        std::vector<float> v(static_cast<size_t>(P * (C + 1)));
        for (int64_t p = 0; p < P; ++p) std::copy(fill.begin(), fill.end(), v.begin() + p * (C + 1));
        full = Tensor::from({P, C + 1}, std::move(v));
    } else {
        const RadianceOutput out = eval_radiance(models, prep, code_id);
        const int64_t R = prep.alive(), S = prep.samples;
        const Tensor sigma = reshape(out.sigma, {R, S});
        const Tensor values = reshape(concat_cols({out.color, out.extra}), {R, S * C});
        const std::vector<float> bg(fill.begin(), fill.begin() + C);
        const Tensor comp = composite(sigma, values, prep.delta, C, bg);
        full = scatter_rows(comp, prep.pixel, P, fill);
    }
    auto plane = [&](int64_t b, int64_t e) { return reshape(transpose(slice_cols(full, b, e)), {e - b, H, W}); };
    return {plane(0, 3), plane(3, C), plane(C, C + 1)};
}

namespace {

Image chw_to_image_any(const Tensor& t) {
    const int C = static_cast<int>(t.dim(0)), H = static_cast<int>(t.dim(1)), W = static_cast<int>(t.dim(2));
    Image im(W, H, C);
    auto d = t.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) im.at(x, y, c) = d[(static_cast<size_t>(c) * H + y) * W + x];
    return im;
}

}  // namespace

RenderedFrame render_frame(const Models& models, const TwoHandPose& pose, const Camera& cam, int code_id,
                           const RenderOptions& opt, bool upsample) {
    const auto t0 = std::chrono::steady_clock::now();
    models.codes.get_code(code_id);
    const PreparedRays prep = prepare_rays(models, pose, cam, opt);
    NoGradGuard no_grad;
    DenormalGuard denormals;
    const RenderTensors t = render_prepared(models, prep, code_id, opt);
    RenderedFrame f;
    f.rgb = chw_to_image_any(t.rgb);
    f.features = chw_to_image_any(t.extra);
    f.opacity = chw_to_image_any(t.opacity);
    f.pruned = Image(prep.width, prep.height, 1, 1.0f);
    for (int32_t p : prep.pixel) f.pruned.data[static_cast<size_t>(p)] = 0.0f;
    if (upsample) f.upsampled = chw_to_image(models.upsampler.forward(t.rgb, t.extra));
    f.rays_alive = prep.alive();
    f.samples = prep.count();
    f.occupancy_queries = prep.occupancy_queries;
    f.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return f;
}

CropView make_crop(const Camera& full, const TwoHandPose& pose, int crop, double k, const CropJitter& jitter,
                   uint64_t seed) {
    if (crop < 1) throw std::invalid_argument("make_crop: crop size must be positive");
    if (!(k >= 1.0)) throw std::invalid_argument("make_crop: downscale k must be at least 1");
    Rect box = skeleton_box(full, pose.right);
    if (pose.left) {
        const Rect l = skeleton_box(full, *pose.left);
        const double x0 = std::min(box.x0, l.x0), y0 = std::min(box.y0, l.y0);
        const double x1 = std::max(box.x1, l.x1), y1 = std::max(box.y1, l.y1);
        const double side = std::max(x1 - x0, y1 - y0), cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
        box = {cx - 0.5 * side, cy - 0.5 * side, cx + 0.5 * side, cy + 0.5 * side};
    }
    const int hi = static_cast<int>(std::lround(crop * k));
    CropView v;
    v.T = crop_transform(box, hi, hi, jitter, seed);
    v.camera = crop_camera(full, v.T, k, crop, crop);
    v.hires = crop_camera(full, v.T, 1.0, hi, hi);
    return v;
}

NamedTensors model_parameters(const Models& models) {
    NamedTensors out = models.occupancy.parameters();
    for (auto& kv : models.radiance.parameters()) out.push_back(kv);
    for (auto& kv : models.codes.parameters()) out.push_back(kv);
    for (auto& kv : models.upsampler.parameters()) out.push_back(kv);
    return out;
}

void load_models(Models& models, const std::map<std::string, Tensor>& source) {
    models.occupancy.load(NamedTensors(source.begin(), source.end()));
    models.radiance.load(source);
    models.codes.load(source);
    models.upsampler.load(source);
}

namespace {

struct Variant {
    int frame = 0;
    PreparedRays prep;
    Tensor gt_low, gt_high;  // 3×h×w
    bool has_high = false;
};

Tensor image_loss(const Tensor& pred, const Tensor& target, float w_l1, float w_mse) {
    const Tensor diff = pred - target;
    return scale(mean(abs(diff)), w_l1) + scale(mean(diff * diff), w_mse);
}

}  // namespace

RenderTrainReport train_renderer(Models& models, const std::vector<TrainFrame>& frames, const RenderTrainConfig& cfg,
                                 const RenderOptions& opt, const std::function<void(int, double)>& on_log) {
    if (frames.empty()) throw std::invalid_argument("train_renderer: empty training set");
    if (cfg.variants < 1) throw std::invalid_argument("train_renderer: variants must be positive");
    for (const TrainFrame& f : frames) models.codes.get_code(f.code_id);
    const bool use_up = std::fabs(cfg.k - 2.0) < 1e-12 && cfg.upsample_weight > 0.0f;
    RenderTrainReport rep;
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<Variant> variants;
    for (size_t f = 0; f < frames.size(); ++f)
        for (int j = 0; j < cfg.variants; ++j) {
            const TrainFrame& fr = frames[f];
            if (fr.precropped) {
                if (j > 0) break;
                if (fr.image.width != fr.camera.width || fr.image.height != fr.camera.height)
                    throw std::invalid_argument("train_renderer: precropped image does not match its camera");
                Variant v;
                v.frame = static_cast<int>(f);
                RenderOptions o = opt;
                o.seed = cfg.seed;
                v.prep = prepare_rays(models, fr.pose, fr.camera, o);
                v.gt_low = image_to_chw(fr.image);
                if (use_up && fr.image_high.width > 0) {
                    v.gt_high = image_to_chw(fr.image_high);
                    v.has_high = true;
                }
                rep.rays += v.prep.rays;
                rep.rays_alive += v.prep.alive();
                variants.push_back(std::move(v));
                continue;
            }
            const uint64_t vseed = cfg.seed * 1000003ull + f * 131ull + static_cast<uint64_t>(j);
            const CropJitter jit = j == 0 ? CropJitter{} : cfg.jitter;
            const CropView cv = make_crop(fr.camera, fr.pose, cfg.crop, cfg.k, jit, vseed);
            RenderOptions o = opt;
            o.seed = vseed;
            o.jitter = j > 0 || opt.jitter;
            Variant v;
            v.frame = static_cast<int>(f);
            v.prep = prepare_rays(models, fr.pose, cv.camera, o);
            const Mat3 D = Eigen::Vector3d(1.0 / cfg.k, 1.0 / cfg.k, 1.0).asDiagonal();
            v.gt_low = image_to_chw(warp_affine(fr.image, (D * cv.T).inverse(), cfg.crop, cfg.crop));
            if (use_up) {
                v.gt_high = image_to_chw(warp_affine(fr.image, cv.T.inverse(), cv.hires.width, cv.hires.height));
                v.has_high = true;
            }
            rep.rays += v.prep.rays;
            rep.rays_alive += v.prep.alive();
            variants.push_back(std::move(v));
        }
    const auto t1 = std::chrono::steady_clock::now();
    rep.prepare_seconds = std::chrono::duration<double>(t1 - t0).count();

    std::vector<Tensor> params = tensors_of(models.radiance.parameters());
    for (const Tensor& t : tensors_of(models.codes.parameters())) params.push_back(t);
    if (use_up)
        for (const Tensor& t : tensors_of(models.upsampler.parameters())) params.push_back(t);
    Adam adam(params, cfg.adam);
    std::mt19937_64 rng(cfg.seed);
    std::vector<size_t> order(variants.size());
    size_t cursor = order.size();
    double acc = 0.0;
    int acc_n = 0;
    DenormalGuard denormals;
    for (int step = 0; step < cfg.steps; ++step) {
        if (cursor == order.size()) {
            for (size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const Variant& v = variants[order[cursor++]];
        const float progress = cfg.steps > 1 ? static_cast<float>(step) / static_cast<float>(cfg.steps - 1) : 1.0f;
        adam.set_lr(cfg.lr_final +
                    0.5f * (cfg.adam.lr - cfg.lr_final) * (1.0f + std::cos(std::numbers::pi_v<float> * progress)));

        const RenderTensors r = render_prepared(models, v.prep, frames[static_cast<size_t>(v.frame)].code_id, opt);
        Tensor loss = image_loss(r.rgb, v.gt_low, cfg.w_l1, cfg.w_mse);
        if (v.has_high)
            loss = loss + scale(image_loss(models.upsampler.forward(r.rgb, r.extra), v.gt_high, cfg.w_l1, cfg.w_mse),
                                cfg.upsample_weight);
        if (cfg.code_reg > 0.0f) loss = loss + models.codes.regularize(cfg.code_reg);
        const double lv = loss.item();
        backward(loss);
        adam.step();

        rep.step_loss.push_back(lv);
        acc += lv;
        ++acc_n;
        if ((step + 1) % std::max(1, cfg.log_every) == 0 || step + 1 == cfg.steps) {
            rep.loss.emplace_back(step + 1, acc / acc_n);
            if (on_log) on_log(step + 1, acc / acc_n);
            acc = 0.0;
            acc_n = 0;
        }
    }
    rep.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
    return rep;
}

}  // namespace skelocc
