#include "skelocc/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "skelocc/checkpoint.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace skelocc {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void say(const Logger& log, const std::string& msg) {
    if (log) log(msg);
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw DataError(path.string() + ": cannot write");
    f << j.dump(2) << "\n";
}

Points rows_of(const Points& p, const std::vector<int64_t>& idx) {
    Points out(static_cast<int64_t>(idx.size()), 3);
    for (size_t i = 0; i < idx.size(); ++i) out.row(static_cast<int64_t>(i)) = p.row(idx[i]);
    return out;
}

}  // namespace

OccupancyConfig occupancy_config(const RunConfig& cfg) {
    OccupancyConfig c;
    c.width = cfg.occ_width;
    c.embedding = cfg.occ_embedding;
    c.blocks = cfg.occ_blocks;
    c.features = cfg.m;
    c.pe_freqs = cfg.pe_freqs;
    c.seed = static_cast<uint64_t>(cfg.seed_occ);
    return c;
}

RadianceConfig radiance_config(const RunConfig& cfg) {
    RadianceConfig c;
    c.width = cfg.w;
    c.depth = cfg.depth;
    c.features = cfg.m;
    c.code_dim = cfg.n_a;
    c.extra = cfg.d;
    c.view_freqs = cfg.view_freqs;
    c.view_dependent = cfg.view_dependent;
    c.seed = static_cast<uint64_t>(cfg.seed_render) + 1;
    return c;
}

UpsamplerConfig upsampler_config(const RunConfig& cfg) {
    UpsamplerConfig c;
    c.features = cfg.d;
    c.width = cfg.up_width;
    c.blocks = cfg.up_blocks;
    c.seed = static_cast<uint64_t>(cfg.seed_render) + 2;
    return c;
}

OccupancySpace occupancy_space(const RunConfig& cfg) {
    return cfg.space == "canonical" ? OccupancySpace::canonical : OccupancySpace::observed;
}

RenderOptions render_options(const RunConfig& cfg, const Aabb& scene_box, bool dense) {
    RenderOptions o;
    o.k_u = cfg.k_u;
    o.k_h = cfg.k_h;
    o.bounds.p_min = cfg.p_min;
    o.bounds.p_max = cfg.p_max;
    o.bounds.d_fix = cfg.d_fix;
    o.bounds.bbox = scene_box;
    o.box = scene_box;
    o.seed = static_cast<uint64_t>(cfg.seed_render);
    if (dense) {
        o.prune = false;
        o.hierarchical = false;
        o.k_u = cfg.dense_samples;
    }
    return o;
}

Models make_models(const RunConfig& cfg, const Dataset& ds) {
    Models m(occupancy_config(cfg), radiance_config(cfg), upsampler_config(cfg));
    m.space = occupancy_space(cfg);
    for (int i = 0; i < ds.n_identities(); ++i) m.codes.add(i);
    return m;
}

Dataset open_dataset(const RunConfig& cfg) {
    Dataset ds = [&] {
        try {
            return Dataset(cfg.dataset_path());
        } catch (const std::exception& e) {
            throw DataError(e.what());
        }
    }();
    for (const auto* list : {&cfg.train_views, &cfg.test_views})
        for (int v : *list)
            if (v >= ds.n_views())
                throw DataError(cfg.dataset_path().string() + ": view " + std::to_string(v) + " requested but the dataset has " +
                                std::to_string(ds.n_views()) + " views");
    return ds;
}

TwoHandPose dataset_pose(const Dataset& ds, int pose) { return {ds.skeleton(pose), std::nullopt}; }

fs::path carve_path(const RunConfig& cfg, int pose) {
    return cfg.workdir_path() / "carve" / ("pose_" + std::to_string(pose) + ".bin");
}

fs::path occupancy_checkpoint(const RunConfig& cfg) { return cfg.workdir_path() / "occupancy.ckpt"; }

fs::path model_checkpoint(const RunConfig& cfg) { return cfg.workdir_path() / "model.ckpt"; }

json run_carve(const RunConfig& cfg, const Logger& log) {
    const Dataset ds = open_dataset(cfg);
    fs::create_directories(cfg.workdir_path() / "carve");
    CarveOptions opt;
    opt.sigma_max = cfg.sigma_max;
    opt.rho = cfg.rho;
    json report = json::array();
    for (int p = 0; p < ds.n_poses(); ++p) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<Frame> frames;
        for (int v : cfg.train_views) frames.push_back(ds.load_frame(p, v));
        std::vector<CarveView> views;
        for (size_t i = 0; i < frames.size(); ++i)
            views.push_back({ds.camera(cfg.train_views[i]), &frames[i].rgb, &frames[i].mask,
                             frames[i].depth.empty() ? nullptr : &frames[i].depth});
        const uint64_t seed = static_cast<uint64_t>(cfg.seed_carve) + 1000ull * static_cast<uint64_t>(p);
        CandidateCloud main = carve(sample_bbox(ds.bbox(), cfg.candidates, seed), views, opt);
        CandidateCloud fresh = carve(sample_bbox(ds.bbox(), cfg.fresh_candidates, seed + 500), views, opt);

        PointCloud cloud;
        cloud.points.resize(main.size() + fresh.size(), 3);
        cloud.points << main.points, fresh.points;
        for (int64_t i = 0; i < main.size(); ++i) cloud.labels.push_back(main.keep[static_cast<size_t>(i)] ? 1 : 0);
        for (int64_t i = 0; i < fresh.size(); ++i) cloud.labels.push_back(fresh.keep[static_cast<size_t>(i)] ? 1 : 2);
        write_point_cloud(carve_path(cfg, p), cloud);

        int64_t tp = 0, fp = 0, fn = 0;
        const std::vector<Capsule> caps = capsules_of(ds.hand(p));
        for (int64_t i = 0; i < main.size(); ++i) {
            const bool truth = oracle_occupancy(caps, main.points.row(i).transpose());
            const bool kept = main.keep[static_cast<size_t>(i)] != 0;
            tp += truth && kept;
            fp += !truth && kept;
            fn += truth && !kept;
        }
        const double precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        report.push_back({{"pose", p},
                          {"candidates", main.size()},
                          {"kept", main.kept() + fresh.kept()},
                          {"precision", precision},
                          {"recall", recall},
                          {"seconds", seconds_since(t0)}});
        say(log, "pose " + std::to_string(p) + ": kept " + std::to_string(main.kept()) + " of " +
                     std::to_string(main.size()) + ", precision " + std::to_string(precision) + ", recall " +
                     std::to_string(recall));
    }
    write_json(cfg.workdir_path() / "carve.json", report);
    return report;
}

std::vector<OccupancySample> occupancy_samples(const RunConfig& cfg, const Dataset& ds) {
    std::vector<OccupancySample> out;
    const OccupancySpace space = occupancy_space(cfg);
    for (int p = 0; p < ds.n_poses(); ++p) {
        const fs::path path = carve_path(cfg, p);
        if (!fs::exists(path)) throw DataError(path.string() + ": missing carve output (run carve first)");
        const PointCloud cloud = read_point_cloud(path);
        if (cloud.labels.size() != static_cast<size_t>(cloud.points.rows()))
            throw DataError(path.string() + ": labels missing");
        std::vector<int64_t> pos, neg, fresh;
        for (int64_t i = 0; i < cloud.points.rows(); ++i) {
            const uint8_t l = cloud.labels[static_cast<size_t>(i)];
            (l == 1 ? pos : l == 2 ? fresh : neg).push_back(i);
        }
        const HandFrame frame(ds.skeleton(p), space, canonical_template());
        OccupancySample s;
        s.condition = frame.condition();
        s.positives = frame.to_query(rows_of(cloud.points, pos));
        s.negatives = frame.to_query(rows_of(cloud.points, neg));
        s.fresh_negatives = frame.to_query(rows_of(cloud.points, fresh));
        if (s.positives.rows() == 0) throw DataError(path.string() + ": carving kept no points");
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<LabelledPoints> occupancy_validation(const RunConfig& cfg, const Dataset& ds, int n_per_pose,
                                                 uint64_t seed) {
    std::vector<LabelledPoints> out;
    const OccupancySpace space = occupancy_space(cfg);
    for (int p = 0; p < ds.n_poses(); ++p) {
        const Points world = sample_bbox(ds.bbox(), n_per_pose, seed + static_cast<uint64_t>(p));
        const std::vector<Capsule> caps = capsules_of(ds.hand(p));
        LabelledPoints lp;
        lp.hand = p;
        for (int64_t i = 0; i < world.rows(); ++i) lp.labels.push_back(oracle_occupancy(caps, world.row(i).transpose()));
        lp.points = HandFrame(ds.skeleton(p), space, canonical_template()).to_query(world);
        out.push_back(std::move(lp));
    }
    return out;
}

json run_train_occ(const RunConfig& cfg, std::optional<int> steps, const Logger& log) {
    const Dataset ds = open_dataset(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<OccupancySample> hands = occupancy_samples(cfg, ds);
    const std::vector<LabelledPoints> val = occupancy_validation(cfg, ds, 10000, 777);
    OccupancyModel model(occupancy_config(cfg));
    OccTrainConfig tc;
    tc.steps = steps.value_or(cfg.occ_steps);
    tc.batch = cfg.occ_batch;
    tc.lr = static_cast<float>(cfg.occ_lr);
    tc.lr_final = static_cast<float>(cfg.occ_lr_final);
    tc.eval_every = std::max(1, tc.steps / 10);
    tc.seed = static_cast<uint64_t>(cfg.seed_occ);
    const OccTrainReport rep = train_occupancy(model, hands, tc, val, [&](int s, double l) {
        say(log, "occupancy step " + std::to_string(s) + " loss " + std::to_string(l));
    });
    fs::create_directories(cfg.workdir_path());
    save_checkpoint(occupancy_checkpoint(cfg), model.parameters());
    json j;
    j["steps"] = tc.steps;
    j["first_loss"] = rep.first_loss;
    j["final_iou"] = tc.steps > 0 ? rep.final_iou : occupancy_iou(model, hands, val);
    j["loss"] = rep.loss;
    j["iou"] = rep.iou;
    j["seconds"] = seconds_since(t0);
    write_json(cfg.workdir_path() / "occupancy_log.json", j);
    return j;
}

std::vector<TrainFrame> training_frames(const RunConfig& cfg, const Dataset& ds) {
    std::vector<TrainFrame> frames;
    for (int p = 0; p < ds.n_poses(); ++p)
        for (int v : cfg.train_views) {
            TrainFrame f;
            f.pose = dataset_pose(ds, p);
            f.code_id = ds.identity_of(p);
            f.camera = ds.camera(v);
            f.image = ds.load_frame(p, v, false).rgb;
            frames.push_back(std::move(f));
        }
    return frames;
}

namespace {

std::map<std::string, Tensor> read_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw DataError(path.string() + ": checkpoint not found");
    try {
        return load_checkpoint(path);
    } catch (const std::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace

json run_train_render(const RunConfig& cfg, std::optional<int> steps, const Logger& log) {
    const Dataset ds = open_dataset(cfg);
    Models models = make_models(cfg, ds);
    try {
        const auto occ = read_checkpoint(occupancy_checkpoint(cfg));
        models.occupancy.load(NamedTensors(occ.begin(), occ.end()));
    } catch (const std::out_of_range& e) {
        throw DataError(occupancy_checkpoint(cfg).string() + ": " + e.what());
    }
    const std::vector<TrainFrame> frames = training_frames(cfg, ds);
    RenderTrainConfig tc;
    tc.steps = steps.value_or(cfg.render_steps);
    tc.adam = {static_cast<float>(cfg.render_lr), static_cast<float>(cfg.beta1), static_cast<float>(cfg.beta2),
               static_cast<float>(cfg.eps)};
    tc.lr_final = static_cast<float>(cfg.render_lr_final);
    tc.w_l1 = static_cast<float>(cfg.w_l1);
    tc.w_mse = static_cast<float>(cfg.w_mse);
    tc.upsample_weight = static_cast<float>(cfg.w_upsample);
    tc.code_reg = static_cast<float>(cfg.code_reg);
    tc.crop = cfg.crop;
    tc.k = cfg.k;
    tc.variants = cfg.variants;
    tc.seed = static_cast<uint64_t>(cfg.seed_render);
    tc.log_every = std::max(1, std::min(100, tc.steps / 10));
    const RenderTrainReport rep = train_renderer(models, frames, tc, render_options(cfg, ds.bbox()), [&](int s, double l) {
        say(log, "render step " + std::to_string(s) + " loss " + std::to_string(l));
    });
    fs::create_directories(cfg.workdir_path());
    save_checkpoint(model_checkpoint(cfg), model_parameters(models));
    json j;
    j["steps"] = tc.steps;
    j["frames"] = frames.size();
    j["loss"] = rep.loss;
    j["rays"] = rep.rays;
    j["rays_alive"] = rep.rays_alive;
    j["prepare_seconds"] = rep.prepare_seconds;
    j["train_seconds"] = rep.train_seconds;
    write_json(cfg.workdir_path() / "render_log.json", j);
    return j;
}

Models load_trained(const RunConfig& cfg, const Dataset& ds) {
    Models models = make_models(cfg, ds);
    const auto params = read_checkpoint(model_checkpoint(cfg));
    try {
        load_models(models, params);
    } catch (const std::exception& e) {
        throw DataError(model_checkpoint(cfg).string() + ": " + e.what());
    }
    return models;
}

RenderedFrame render_view(const Models& models, const RunConfig& cfg, const Dataset& ds, int pose, int view,
                          std::optional<int> identity) {
    if (pose < 0 || pose >= ds.n_poses()) throw DataError("unknown pose " + std::to_string(pose));
    if (view < 0 || view >= ds.n_views()) throw DataError("unknown view " + std::to_string(view));
    const int id = identity.value_or(ds.identity_of(pose));
    if (!models.codes.contains(id)) throw DataError("unknown appearance id " + std::to_string(id));
    const TwoHandPose hp = dataset_pose(ds, pose);
    const CropView cv = make_crop(ds.camera(view), hp, cfg.crop, cfg.k);
    return render_frame(models, hp, cv.camera, id, render_options(cfg, ds.bbox()), std::fabs(cfg.k - 2.0) < 1e-12);
}

EvalSummary evaluate(const Models& models, const RunConfig& cfg, const Dataset& ds, const RenderOptions& opt,
                     const std::vector<int>& views) {
    EvalSummary s;
    const bool up = std::fabs(cfg.k - 2.0) < 1e-12;
    for (int v : views)
        for (int p = 0; p < ds.n_poses(); ++p) {
            const TwoHandPose hp = dataset_pose(ds, p);
            const CropView cv = make_crop(ds.camera(v), hp, cfg.crop, cfg.k);
            const int id = ds.identity_of(p);
            const RenderedFrame r = render_frame(models, hp, cv.camera, id, opt, up);
            const CapsuleHand hand = ds.hand(p);
            const AnalyticRender target = render_analytic(hand, cv.camera, ds.light());
            FrameMetrics fm;
            fm.pose = p;
            fm.view = v;
            fm.identity = id;
            fm.psnr = psnr(r.rgb, target.rgb);
            fm.ssim = ssim(r.rgb, target.rgb);
            if (up) {
                const AnalyticRender hi = render_analytic(hand, cv.hires, ds.light());
                fm.psnr_up = psnr(r.upsampled, hi.rgb);
                fm.psnr_bilinear = psnr(chw_to_image(upsample_bilinear2x(image_to_chw(r.rgb))), hi.rgb);
            }
            fm.rays = static_cast<int64_t>(cv.camera.width) * cv.camera.height;
            fm.rays_alive = r.rays_alive;
            fm.samples = r.samples;
            fm.ms = r.ms;
            s.frames.push_back(fm);
        }
    const double n = static_cast<double>(std::max<size_t>(1, s.frames.size()));
    for (const FrameMetrics& f : s.frames) {
        s.psnr += f.psnr / n;
        s.ssim += f.ssim / n;
        s.psnr_up += f.psnr_up / n;
        s.psnr_bilinear += f.psnr_bilinear / n;
        s.ms += f.ms / n;
        s.rays += f.rays;
        s.rays_alive += f.rays_alive;
        s.samples += f.samples;
    }
    return s;
}

json metric_report(const EvalSummary& s) {
    json frames = json::array();
    for (const FrameMetrics& f : s.frames)
        frames.push_back({{"pose", f.pose},
                          {"view", f.view},
                          {"identity", f.identity},
                          {"psnr", f.psnr},
                          {"ssim", f.ssim},
                          {"lpips", "n/a"},
                          {"psnr_upsampled", f.psnr_up},
                          {"psnr_bilinear", f.psnr_bilinear},
                          {"rays", f.rays},
                          {"rays_alive", f.rays_alive},
                          {"samples", f.samples},
                          {"ms", f.ms}});
    json agg = {{"psnr", s.psnr},
                {"ssim", s.ssim},
                {"lpips", "n/a"},
                {"psnr_upsampled", s.psnr_up},
                {"psnr_bilinear", s.psnr_bilinear},
                {"ms_per_frame", s.ms},
                {"rays", s.rays},
                {"rays_alive", s.rays_alive},
                {"samples", s.samples},
                {"frames", s.frames.size()}};
    return {{"frames", frames}, {"aggregate", agg}, {"psnr_cap", kPsnrCap}};
}

std::string frame_lines(const EvalSummary& s) {
    std::string out;
    for (const FrameMetrics& f : s.frames) {
        const json j = {{"frame", "pose" + std::to_string(f.pose) + "_view" + std::to_string(f.view)},
                        {"psnr", f.psnr},
                        {"ssim", f.ssim},
                        {"rays_alive", f.rays_alive},
                        {"ms", f.ms}};
        out += j.dump() + "\n";
    }
    return out;
}

json run_eval(const RunConfig& cfg, const Logger& log) {
    const Dataset ds = open_dataset(cfg);
    const Models models = load_trained(cfg, ds);
    const EvalSummary s = evaluate(models, cfg, ds, render_options(cfg, ds.bbox()), cfg.test_views);
    const json report = metric_report(s);
    fs::create_directories(cfg.workdir_path());
    write_json(cfg.workdir_path() / "eval.json", report);
    std::ofstream(cfg.workdir_path() / "eval_frames.jsonl") << frame_lines(s);
    say(log, "eval: psnr " + std::to_string(s.psnr) + " ssim " + std::to_string(s.ssim));
    return report;
}

json run_bench(const RunConfig& cfg, const Logger& log) {
    const Dataset ds = open_dataset(cfg);
    const Models models = load_trained(cfg, ds);
    const auto ta = std::chrono::steady_clock::now();
    const EvalSummary a = evaluate(models, cfg, ds, render_options(cfg, ds.bbox()), cfg.test_views);
    const double time_a = seconds_since(ta);
    const auto tb = std::chrono::steady_clock::now();
    const EvalSummary b = evaluate(models, cfg, ds, render_options(cfg, ds.bbox(), true), cfg.test_views);
    const double time_b = seconds_since(tb);
    auto mode = [](const EvalSummary& s, double secs) {
        return json{{"psnr", s.psnr},
                    {"ssim", s.ssim},
                    {"seconds", secs},
                    {"rays", s.rays},
                    {"rays_alive", s.rays_alive},
                    {"samples", s.samples}};
    };
    const double pruned = a.rays > 0 ? 1.0 - static_cast<double>(a.rays_alive) / static_cast<double>(a.rays) : 0.0;
    const json report = {{"pruned", mode(a, time_a)},
                         {"dense", mode(b, time_b)},
                         {"sample_reduction", a.samples > 0 ? static_cast<double>(b.samples) / static_cast<double>(a.samples) : 0.0},
                         {"pruned_ray_fraction", pruned},
                         {"psnr_drop", b.psnr - a.psnr},
                         {"speedup_wall", time_a > 0 ? time_b / time_a : 0.0}};
    fs::create_directories(cfg.workdir_path());
    write_json(cfg.workdir_path() / "bench.json", report);
    say(log, "bench: " + report.dump());
    return report;
}

}  // namespace skelocc
