// Acceptance suite: one PASS/FAIL line per criterion.
//
//   skelocc_acceptance --cli PATH [--work DIR] [--only a,b] [--fresh] [--render-steps N]

#include <CLI11.hpp>

#include <Eigen/Geometry>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "skelocc/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace skelocc;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), f, a);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Options {
    std::string cli;
    fs::path work;
    int render_steps = 10000;
    int overfit_steps = 5000;
};

// Shared trained pipeline for the criteria that need learned models.
class Pipeline {
public:
    explicit Pipeline(const Options& o) : opt_(o) {}

    const RunConfig& config() {
        if (!cfg_) {
            RunConfig c;
            c.base_dir = opt_.work / "main";
            c.render_steps = opt_.render_steps;
            fs::create_directories(c.base_dir);
            cfg_ = c;
        }
        return *cfg_;
    }

    const Dataset& dataset() {
        if (!ds_) {
            const RunConfig& c = config();
            if (!fs::exists(c.dataset_path() / "dataset.json")) {
                DatasetOptions d;
                d.seed = static_cast<uint64_t>(c.seed_data);
                make_dataset(c.synth_views, c.synth_poses, c.synth_ids, c.dataset_path(), d);
            }
            ds_.emplace(open_dataset(c));
        }
        return *ds_;
    }

    /// Carving plus occupancy training; returns the training log. A log left
    /// by an earlier invocation on the same work directory is reused.
    const json& occupancy() {
        if (!occ_log_) occ_log_ = cached("acceptance_occupancy.json", [&] {
            dataset();
            const auto t0 = Clock::now();
            run_carve(config());
            json log = run_train_occ(config());
            log["total_seconds"] = since(t0);
            return log;
        });
        return *occ_log_;
    }

    const json& render_log() {
        if (!render_log_) render_log_ = cached("acceptance_render.json", [&] {
            occupancy();
            const auto t0 = Clock::now();
            json log = run_train_render(config());
            log["total_seconds"] = since(t0);
            return log;
        });
        return *render_log_;
    }

    const Models& models() {
        if (!models_) {
            render_log();
            models_.emplace(load_trained(config(), dataset()));
        }
        return *models_;
    }

    const EvalSummary& eval() {
        if (!eval_) eval_ = evaluate(models(), config(), dataset(), render_options(config(), dataset().bbox()),
                                     config().test_views);
        return *eval_;
    }

    const Options& options() const { return opt_; }

private:
    json cached(const std::string& name, const std::function<json()>& make) {
        const fs::path path = config().workdir_path() / name;
        if (fs::exists(path)) {
            std::ifstream f(path);
            return json::parse(f);
        }
        json log = make();
        fs::create_directories(path.parent_path());
        std::ofstream(path) << log.dump(2);
        return log;
    }

    Options opt_;
    std::optional<RunConfig> cfg_;
    std::optional<Dataset> ds_;
    std::optional<json> occ_log_, render_log_;
    std::optional<Models> models_;
    std::optional<EvalSummary> eval_;
};

// ---- criteria -----------------------------------------------------------------

Outcome autodiff(Pipeline&) {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string worst_op;
    int checks = 0;
    for (const auto& c : gradcheck::all_cases())
        for (uint32_t seed = 1; seed <= 100; ++seed) {
            const auto r = gradcheck::run(c, seed);
            ++checks;
            if (r.rel_error > worst) {
                worst = r.rel_error;
                worst_op = c.name;
            }
        }
    const double secs = since(t0);
    return {worst < 1e-4 && secs < 120.0, std::to_string(checks) + " op/seed checks, worst rel err " +
                                              fmt("%.2e", worst) + " (" + worst_op + "), " + fmt("%.1f s", secs)};
}

Mat3 random_rotation(std::mt19937& rng) {
    std::normal_distribution<double> n;
    return Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
}

Points random_points(int64_t n, std::mt19937& rng, double extent) {
    std::uniform_real_distribution<double> u(-extent, extent);
    Points p(n, 3);
    for (int64_t i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) p(i, k) = u(rng);
    return p;
}

Outcome geometry(Pipeline&) {
    const auto t0 = Clock::now();
    std::mt19937 rng(11);
    double canon_err = 0.0, round_trip = 0.0, angle = 0.0;
    bool involution = true;
    for (int trial = 0; trial < 50; ++trial) {
        Skeleton s = generate_pose(static_cast<uint64_t>(trial), 0.7).skeleton;
        const Mat3 R = random_rotation(rng);
        for (int j = 0; j < kJoints; ++j) s.joints.row(j) = (R * s.joint(j) + Vec3(0.1, -0.2, 0.3)).transpose();
        const Skeleton c = canonicalize(s), cc = canonicalize(c);
        canon_err = std::max(canon_err, (cc.joints - c.joints).cwiseAbs().maxCoeff());
        for (int i = 0; i < kJoints; ++i)
            for (int j = 0; j < kJoints; ++j)
                canon_err = std::max(canon_err, std::fabs((c.joint(i) - c.joint(j)).norm() - (s.joint(i) - s.joint(j)).norm()));

        const Points P = random_points(200, rng, 0.15);
        involution = involution && mirror_x(mirror_x(P)) == P && mirror_x(mirror_x(s)).joints == s.joints;

        const std::vector<int> seg = segment_by_bone(P, s);
        const auto fwd = bone_transforms(s, canonical_template());
        std::vector<BoneTransform> inv;
        for (const auto& t : fwd) inv.push_back(t.inverse());
        const Points back = apply_bone_transforms(apply_bone_transforms(P, seg, fwd), seg, inv);
        round_trip = std::max(round_trip, (back - P).cwiseAbs().maxCoeff());

        Skeleton moved = canonical_template();
        for (int j = 0; j < kJoints; ++j)
            moved.joints.row(j) = (R * (moved.joint(j) - moved.root()) + moved.root()).transpose();
        for (const BoneTransform& t : bone_transforms(moved, canonical_template()))
            angle = std::max(angle, Eigen::AngleAxisd(t.R * R).angle());
    }
    const double secs = since(t0);
    const bool pass = canon_err < 1e-7 && involution && round_trip < 1e-6 && angle < 1e-5 && secs < 60.0;
    return {pass, "canonicalize " + fmt("%.1e", canon_err) + ", mirror involution " + (involution ? "exact" : "BROKEN") +
                      ", deform round trip " + fmt("%.1e", round_trip) + ", rotation recovery " + fmt("%.1e rad", angle) +
                      ", " + fmt("%.1f s", secs)};
}

Outcome mirror_consistency(Pipeline&) {
    OccupancyConfig oc;
    oc.width = 64;
    oc.embedding = 32;
    oc.blocks = 2;
    oc.features = 16;
    OccupancyModel m(oc);
    std::mt19937 rng(5);
    std::normal_distribution<float> nd(0.0f, 0.5f);
    for (auto& [name, t] : m.parameters())
        if (name.rfind("occ.dec.head", 0) == 0)
            for (float& v : t.data()) v = nd(rng);
    int64_t mismatches = 0, compared = 0;
    for (int trial = 0; trial < 10; ++trial) {
        Skeleton right = generate_pose(static_cast<uint64_t>(100 + trial), 0.7).skeleton;
        Skeleton left = mirror_x(generate_pose(static_cast<uint64_t>(200 + trial), 0.7).skeleton);
        left.joints.rowwise() += Eigen::RowVector3d(-0.08, 0.01 * trial, 0.02);
        const TwoHandPose pose{right, left};
        const Points world = random_points(500, rng, 0.2);
        const TwoHandResult two = query_two_hands(m, world, pose);
        const Skeleton as_right = mirror_x(left);
        const Points q = mirror_x(world).rowwise() - as_right.root().transpose();
        const OccResult direct = m.query(q, canonicalize(as_right));
        for (size_t i = 0; i < two.p_l.size(); ++i) {
            ++compared;
            mismatches += two.p_l[i] != direct.prob[i];
            for (int k = 0; k < two.m && two.p_l[i] > two.p_r[i]; ++k)
                mismatches += two.features[i * two.m + k] != direct.features[i * two.m + k];
        }
    }
    int64_t grid_bad = 0;
    for (int i = 0; i <= 100; ++i)
        for (int j = 0; j <= 100; ++j) {
            const float pr = i / 100.0f, pl = j / 100.0f;
            grid_bad += signed_probability(pr, pl) != (i >= j ? pr : -pl);
        }
    return {mismatches == 0 && grid_bad == 0, std::to_string(compared) + " mirrored queries, " +
                                                  std::to_string(mismatches) + " bit mismatches; signed grid 101x101, " +
                                                  std::to_string(grid_bad) + " violations"};
}

Outcome carving(Pipeline& p) {
    const Dataset& ds = p.dataset();
    const RunConfig& cfg = p.config();
    int64_t tp = 0, fp = 0, fn = 0;
    double secs = 0.0;
    CarveOptions opt;
    opt.sigma_max = 0.08;
    opt.rho = 1.0;
    for (int pose = 0; pose < ds.n_poses(); ++pose) {
        const auto t0 = Clock::now();
        std::vector<Frame> frames;
        for (int v : cfg.train_views) frames.push_back(ds.load_frame(pose, v));
        std::vector<CarveView> views;
        for (size_t i = 0; i < frames.size(); ++i)
            views.push_back({ds.camera(cfg.train_views[i]), &frames[i].rgb, &frames[i].mask,
                             frames[i].depth.empty() ? nullptr : &frames[i].depth});
        const Points pts = sample_bbox(ds.bbox(), 200000, 4242 + static_cast<uint64_t>(pose));
        const CandidateCloud c = carve(pts, views, opt);
        secs = std::max(secs, since(t0));
        const std::vector<Capsule> caps = capsules_of(ds.hand(pose));
        for (int64_t i = 0; i < pts.rows(); ++i) {
            const bool in = oracle_occupancy(caps, pts.row(i).transpose());
            const bool kept = c.keep[static_cast<size_t>(i)] != 0;
            tp += in && kept;
            fp += !in && kept;
            fn += in && !kept;
        }
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(std::max<int64_t>(1, tp + fp));
    const double recall = static_cast<double>(tp) / static_cast<double>(std::max<int64_t>(1, tp + fn));
    return {precision >= 0.95 && recall >= 0.85 && secs < 180.0,
            std::to_string(cfg.train_views.size()) + " views, 2e5 candidates x " + std::to_string(ds.n_poses()) +
                " poses: precision " + fmt("%.4f", precision) + ", recall " + fmt("%.4f", recall) + ", " +
                fmt("%.1f s slowest pose", secs)};
}

Outcome occupancy(Pipeline& p) {
    const json& log = p.occupancy();
    const double iou = log["final_iou"].get<double>();
    const double secs = log["seconds"].get<double>();
    const int steps = log["steps"].get<int>();
    return {iou >= 0.90 && steps <= 20000 && secs <= 1200.0,
            "IoU " + fmt("%.4f", iou) + " on 6x1e4 held-out points after " + std::to_string(steps) + " steps, " +
                fmt("%.0f s", secs)};
}

Outcome compositing(Pipeline&) {
    std::mt19937 rng(9);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    const int R = 64, S = 8, C = 3;
    std::vector<float> sigma(R * S), values(R * S * C), delta(R * S);
    for (float& v : sigma) v = 3.0f * u(rng);
    for (float& v : values) v = u(rng);
    for (float& v : delta) v = 0.05f + u(rng);
    const std::vector<float> bg{0.3f, 0.5f, 0.7f};
    double worst = 0.0;
    bool monotone = true, bounded = true;
    // transmittance after i samples equals 1 − opacity of the i-sample prefix
    for (int r = 0; r < R; ++r) {
        float prev = 0.0f;
        for (int i = 1; i <= S; ++i) {
            std::vector<float> s(sigma.begin() + r * S, sigma.begin() + r * S + i);
            std::vector<float> v(values.begin() + r * S * C, values.begin() + (r * S + i) * C);
            std::vector<float> d(delta.begin() + r * S, delta.begin() + r * S + i);
            const Tensor t = composite(Tensor::from({1, i}, s), Tensor::from({1, i * C}, v), d, C, bg);
            const auto& o = t.data();
            monotone = monotone && o[C] >= prev;
            bounded = bounded && o[C] <= 1.0f + 1e-6f;
            prev = o[C];
        }
    }
    const Tensor zt = composite(Tensor::zeros({R, S}), Tensor::from({R, S * C}, values), delta, C, bg);
    const auto& zero = zt.data();
    for (int r = 0; r < R; ++r) {
        for (int c = 0; c < C; ++c) worst = std::max(worst, static_cast<double>(std::fabs(zero[r * (C + 1) + c] - bg[c])));
        worst = std::max(worst, static_cast<double>(std::fabs(zero[r * (C + 1) + C])));
    }
    std::vector<float> opaque = sigma;
    for (int r = 0; r < R; ++r) opaque[r * S] = 1e6f;
    const Tensor ft = composite(Tensor::from({R, S}, opaque), Tensor::from({R, S * C}, values), delta, C, bg);
    const auto& front = ft.data();
    for (int r = 0; r < R; ++r) {
        for (int c = 0; c < C; ++c)
            worst = std::max(worst, static_cast<double>(std::fabs(front[r * (C + 1) + c] - values[r * S * C + c])));
        worst = std::max(worst, static_cast<double>(std::fabs(front[r * (C + 1) + C] - 1.0f)));
    }
    double grad = 0.0;
    const gradcheck::Case c = gradcheck::composite_case(8);
    for (uint32_t seed = 1; seed <= 100; ++seed) grad = std::max(grad, gradcheck::run(c, seed).rel_error);
    return {monotone && bounded && worst <= 1e-6 && grad < 1e-3,
            std::string("transmittance monotone ") + (monotone ? "yes" : "NO") + ", weight sum <= 1 " +
                (bounded ? "yes" : "NO") + ", closed-form error " + fmt("%.1e", worst) + ", gradient rel err " +
                fmt("%.1e", grad) + " over 100 random 8-sample cases"};
}

Outcome end_to_end(Pipeline& p) {
    const json& log = p.render_log();
    const double train_secs = log["total_seconds"].get<double>();
    const EvalSummary& e = p.eval();
    const RunConfig& cfg = p.config();
    const Dataset& ds = p.dataset();

    // single-frame overfit on the analytic target with a fresh radiance model
    Models m = make_models(cfg, ds);
    m.occupancy = p.models().occupancy;
    const int pose = 0, view = cfg.train_views.front();
    const TwoHandPose hp = dataset_pose(ds, pose);
    const CropView cv = make_crop(ds.camera(view), hp, cfg.crop, cfg.k);
    TrainFrame f;
    f.pose = hp;
    f.code_id = ds.identity_of(pose);
    f.camera = cv.camera;
    f.precropped = true;
    f.image = render_analytic(ds.hand(pose), cv.camera, ds.light()).rgb;
    RenderTrainConfig tc;
    tc.steps = p.options().overfit_steps;
    tc.upsample_weight = 0.0f;
    tc.adam.lr = 1e-3f;
    tc.lr_final = 1e-4f;
    const RenderOptions ro = render_options(cfg, ds.bbox());
    const RenderTrainReport rep = train_renderer(m, {f}, tc, ro);
    const RenderedFrame out = render_frame(m, hp, cv.camera, f.code_id, ro, false);
    const double overfit = psnr(out.rgb, f.image);

    const bool pass = e.psnr >= 28.0 && e.ssim >= 0.90 && train_secs <= 3600.0 && overfit >= 35.0;
    return {pass, "held-out PSNR " + fmt("%.2f dB", e.psnr) + ", SSIM " + fmt("%.4f", e.ssim) + " over " +
                      std::to_string(e.frames.size()) + " frames after " + std::to_string(log["steps"].get<int>()) +
                      " steps (" + fmt("%.0f s", train_secs) + "); single-frame overfit " + fmt("%.2f dB", overfit) +
                      " after " + std::to_string(tc.steps) + " steps (" + fmt("%.0f s", rep.train_seconds) + ")"};
}

Outcome pruning(Pipeline& p) {
    const Models& m = p.models();
    const RunConfig& cfg = p.config();
    const Dataset& ds = p.dataset();
    const EvalSummary& a = p.eval();
    const EvalSummary b = evaluate(m, cfg, ds, render_options(cfg, ds.bbox(), true), cfg.test_views);
    const double reduction = static_cast<double>(b.samples) / static_cast<double>(std::max<int64_t>(1, a.samples));
    const double pruned = 1.0 - static_cast<double>(a.rays_alive) / static_cast<double>(a.rays);
    const double drop = b.psnr - a.psnr;
    return {reduction >= 3.0 && pruned >= 0.60 && drop <= 0.5,
            "samples " + std::to_string(a.samples) + " vs " + std::to_string(b.samples) + " (" + fmt("%.1fx", reduction) +
                "), rays pruned " + fmt("%.1f%%", 100.0 * pruned) + ", PSNR pruned " + fmt("%.2f", a.psnr) + " vs dense " +
                fmt("%.2f dB", b.psnr)};
}

struct DrawStats {
    double worst = 0.0;  // largest |count − mean| / sd
    double z2 = 0.0;     // summed squared z-scores
    int bins = 0;
    bool within = true;  // every bin within 3 sd, zero-mass bins empty
};

// New hierarchical depths binned by coarse segment for three weight profiles.
DrawStats hierarchical_draws(uint64_t seed) {
    const int S = 8, k_h = 8;
    const int64_t N = 10000, rays = N / k_h;
    std::vector<float> geometric(S), one_hot(S, 0.0f);
    for (int i = 0; i < S; ++i) geometric[i] = std::pow(0.6f, static_cast<float>(i));
    one_hot[5] = 0.7f;
    const std::vector<std::vector<float>> profiles{std::vector<float>(S, 0.3f), one_hot, geometric};
    const Camera cam = look_at(Vec3(0, 0, 0.5), Vec3::Zero(), Vec3::UnitY(), 100.0, 64, 64);
    std::vector<int32_t> px(static_cast<size_t>(rays));
    for (int64_t i = 0; i < rays; ++i) px[static_cast<size_t>(i)] = static_cast<int32_t>(i);
    DrawStats st;
    for (const auto& w : profiles) {
        RayBatch b = generate_rays(cam, px);
        for (int64_t i = 0; i < rays; ++i) {
            b.t_near[static_cast<size_t>(i)] = 0.4;
            b.t_far[static_cast<size_t>(i)] = 0.42;
        }
        const SampleSet coarse = uniform_samples(b, S, 0, false);
        std::vector<float> weights;
        for (int64_t r = 0; r < rays; ++r) weights.insert(weights.end(), w.begin(), w.end());
        const SampleSet fine = hierarchical_samples(b, coarse, weights, k_h, seed);
        std::vector<double> edges{0.4};
        for (int i = 1; i < S; ++i) edges.push_back(0.5 * (coarse.depth[i - 1] + coarse.depth[i]));
        edges.push_back(0.42);
        std::vector<int64_t> counts(S, 0);
        for (int64_t i = 0; i < fine.count(); ++i) {
            if (fine.source[static_cast<size_t>(i)] >= 0) continue;
            const double t = fine.depth[static_cast<size_t>(i)];
            const auto seg = std::upper_bound(edges.begin(), edges.end(), t) - edges.begin() - 1;
            ++counts[static_cast<size_t>(std::clamp<long>(seg, 0, S - 1))];
        }
        double total = 0.0;
        for (float x : w) total += x;
        for (int j = 0; j < S; ++j) {
            const double pj = w[j] / total, mean = N * pj, sd = std::sqrt(N * pj * (1.0 - pj));
            const double dev = std::fabs(static_cast<double>(counts[j]) - mean);
            st.within = st.within && dev <= 3.0 * sd;
            if (sd == 0.0) continue;
            st.worst = std::max(st.worst, dev / sd);
            st.z2 += (dev / sd) * (dev / sd);
            ++st.bins;
        }
    }
    return st;
}

Outcome hierarchical(Pipeline&) {
    const DrawStats st = hierarchical_draws(77);
    double z2 = 0.0;
    int bins = 0;
    for (uint64_t seed = 1; seed <= 100; ++seed) {
        const DrawStats s = hierarchical_draws(seed);
        z2 += s.z2;
        bins += s.bins;
    }
    return {st.within, "3 profiles x 1e4 draws, largest deviation " + fmt("%.2f sigma", st.worst) +
                           "; mean squared z over 100 seeds " + fmt("%.3f", z2 / bins) + " (multinomial: 1)"};
}

Outcome transfer(Pipeline& p) {
    const Models& m = p.models();
    const RunConfig& cfg = p.config();
    const Dataset& ds = p.dataset();
    int frames = 0, closer = 0;
    double min_iou = 1.0, mean_iou = 0.0;
    for (int v : cfg.test_views)
        for (int pose = 0; pose < ds.n_poses(); ++pose) {
            const int self = ds.identity_of(pose), other = (self + 1) % ds.n_identities();
            const RenderedFrame a = render_view(m, cfg, ds, pose, v, self);
            const RenderedFrame b = render_view(m, cfg, ds, pose, v, other);
            Vec3 ma = Vec3::Zero(), mb = Vec3::Zero();
            int64_t n = 0, inter = 0, uni = 0;
            for (size_t i = 0; i < a.opacity.data.size(); ++i) {
                const bool ia = a.opacity.data[i] > 0.5f, ib = b.opacity.data[i] > 0.5f;
                inter += ia && ib;
                uni += ia || ib;
                if (!ia) continue;
                ++n;
                for (int c = 0; c < 3; ++c) {
                    ma[c] += a.rgb.data[i * 3 + c];
                    mb[c] += b.rgb.data[i * 3 + c];
                }
            }
            if (n == 0) continue;
            ma /= static_cast<double>(n);
            mb /= static_cast<double>(n);
            const Vec3 target = ds.identities()[static_cast<size_t>(other)].albedo;
            closer += (mb - target).norm() < (ma - target).norm();
            const double iou = uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
            min_iou = std::min(min_iou, iou);
            mean_iou += iou;
            ++frames;
        }
    mean_iou /= std::max(1, frames);
    return {frames > 0 && closer == frames && min_iou >= 0.95,
            std::to_string(closer) + "/" + std::to_string(frames) + " swapped renders closer to the target albedo, mask IoU min " +
                fmt("%.4f", min_iou) + " mean " + fmt("%.4f", mean_iou)};
}

Outcome upsampler(Pipeline& p) {
    UpsamplerConfig uc;
    const Upsampler fresh(uc);
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> rgb(3 * 16 * 16), feat(static_cast<size_t>(uc.features) * 16 * 16);
    for (float& v : rgb) v = u(rng);
    for (float& v : feat) v = u(rng) - 0.5f;
    const Tensor x = Tensor::from({3, 16, 16}, rgb);
    const Tensor ut = fresh.forward(x, Tensor::from({uc.features, 16, 16}, feat));
    const Tensor bt = upsample_bilinear2x(x);
    const auto& up = ut.data();
    const auto& bil = bt.data();
    bool exact = true;
    for (size_t i = 0; i < up.size(); ++i) exact = exact && up[i] == std::clamp(bil[i], 0.0f, 1.0f);

    const EvalSummary& e = p.eval();
    const double gain = e.psnr_up - e.psnr_bilinear;
    return {exact && gain >= 0.5, std::string("zero-residual init ") + (exact ? "bit-exact" : "DIFFERS") +
                                      " vs bilinear; held-out x2 PSNR " + fmt("%.2f", e.psnr_up) + " vs bilinear " +
                                      fmt("%.2f dB", e.psnr_bilinear) + " (" + fmt("%+.2f dB", gain) + ")"};
}

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
    const std::string cmd = "\"" + cli + "\" " + args + " >> \"" + log.string() + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome smoke(Pipeline& p) {
    const std::string& cli = p.options().cli;
    if (cli.empty()) return {false, "no --cli given"};
    const fs::path dir = p.options().work / "smoke";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "run.ini");
        f << "[data]\ndataset = data\nworkdir = work\ntrain_views = 0,1,2\ntest_views = 3\n";
    }
    const fs::path log = dir / "log.txt";
    const std::string c = "--config \"" + (dir / "run.ini").string() + "\"";
    const auto t0 = Clock::now();
    const std::vector<std::string> steps{"synth --views 4 --poses 6 --ids 2 --out \"" + (dir / "data").string() + "\"",
                                         "carve " + c,
                                         "train-occ " + c + " --steps 500",
                                         "train-render " + c + " --steps 500",
                                         "eval " + c,
                                         "bench " + c};
    for (const std::string& s : steps) {
        const int rc = run_cli(cli, s, log);
        if (rc != 0) return {false, "'" + s.substr(0, s.find(' ')) + "' exited with " + std::to_string(rc)};
    }
    const double secs = since(t0);
    bool well_formed = false;
    try {
        std::ifstream f(dir / "work" / "eval.json");
        const json r = json::parse(f);
        const json& agg = r.at("aggregate");
        well_formed = r.at("frames").is_array() && r.at("frames").size() == 6 && agg.at("psnr").is_number() &&
                      agg.at("ssim").is_number() && agg.at("lpips") == "n/a";
        std::ifstream b(dir / "work" / "bench.json");
        const json bj = json::parse(b);
        well_formed = well_formed && bj.at("sample_reduction").is_number() && bj.at("pruned").at("psnr").is_number();
        std::ifstream l(dir / "work" / "eval_frames.jsonl");
        std::string line;
        int lines = 0;
        while (std::getline(l, line)) {
            const json j = json::parse(line);
            well_formed = well_formed && j.contains("frame") && j.contains("psnr") && j.contains("ssim") &&
                          j.contains("rays_alive") && j.contains("ms");
            ++lines;
        }
        well_formed = well_formed && lines == 6;
    } catch (const std::exception&) {
        well_formed = false;
    }
    return {well_formed && secs < 600.0, std::string("6 commands exit 0, report ") + (well_formed ? "well formed" : "MALFORMED") +
                                             ", " + fmt("%.0f s", secs)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance suite"};
    Options opt;
    std::string work, only;
    app.add_option("--cli", opt.cli, "path to the skelocc executable");
    app.add_option("--work", work, "scratch directory");
    app.add_option("--only", only, "comma-separated criterion names");
    app.add_option("--render-steps", opt.render_steps, "renderer training steps");
    app.add_option("--overfit-steps", opt.overfit_steps, "single-frame overfit steps");
    bool fresh = false;
    app.add_flag("--fresh", fresh, "discard cached datasets and models in the work directory");
    CLI11_PARSE(app, argc, argv);
    opt.work = work.empty() ? fs::temp_directory_path() / "skelocc_acceptance" : fs::path(work);
    if (fresh) fs::remove_all(opt.work / "main");
    fs::create_directories(opt.work);

    const std::vector<std::pair<std::string, std::function<Outcome(Pipeline&)>>> criteria{
        {"autodiff", autodiff},         {"geometry", geometry},   {"mirror_consistency", mirror_consistency},
        {"carving", carving},           {"occupancy", occupancy}, {"compositing", compositing},
        {"end_to_end", end_to_end},     {"pruning", pruning},     {"hierarchical", hierarchical},
        {"transfer", transfer},         {"upsampler", upsampler}, {"smoke", smoke}};
    std::set<std::string> selected;
    std::stringstream ss(only);
    for (std::string s; std::getline(ss, s, ',');)
        if (!s.empty()) selected.insert(s);

    Pipeline pipeline(opt);
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        if (!selected.empty() && !selected.count(name)) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn(pipeline);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        char line[1024];
        std::snprintf(line, sizeof(line), "%s %-18s %s [%.0f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(),
                      o.detail.c_str(), since(t0));
        std::fputs(line, stdout);
        std::fflush(stdout);
        std::ofstream(opt.work / "results.txt", std::ios::app) << line;
    }
    return failed == 0 ? 0 : 1;
}
