#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "skelocc/renderer.hpp"

using namespace skelocc;

namespace {

OccupancyConfig small_occ() {
    OccupancyConfig c;
    c.width = 32;
    c.embedding = 16;
    c.blocks = 1;
    c.features = 8;
    c.pe_freqs = 2;
    return c;
}

RadianceConfig small_rad() {
    RadianceConfig c;
    c.width = 32;
    c.depth = 3;
    c.features = 8;
    c.code_dim = 4;
    c.extra = 4;
    c.view_freqs = 2;
    return c;
}

UpsamplerConfig small_up() {
    UpsamplerConfig c;
    c.features = 4;
    c.width = 8;
    c.blocks = 1;
    return c;
}

Models small_models() {
    Models m(small_occ(), small_rad(), small_up());
    m.codes.add(0);
    m.codes.add(1);
    return m;
}

void set_occupancy_bias(Models& m, float bias) {
    for (auto& [name, t] : m.occupancy.parameters())
        if (name == "occ.dec.head.b") t.data()[0] = bias;
}

TwoHandPose test_pose() { return {generate_pose(4, 0.5).skeleton, std::nullopt}; }

Camera test_camera() {
    const Camera full = look_at(Vec3(0.05, 0.1, 0.5), Vec3::Zero(), Vec3::UnitY(), 800.0, 512, 512);
    return make_crop(full, test_pose(), 16, 2.0).camera;
}

}  // namespace

TEST_CASE("radiance heads") {
    const Models m = small_models();
    const int64_t n = 6;
    std::mt19937 rng(1);
    std::normal_distribution<float> d;
    std::vector<float> in(static_cast<size_t>(n * m.radiance.input_dim()));
    for (float& v : in) v = d(rng);
    // rows 0 and 1 are identical
    std::copy(in.begin(), in.begin() + m.radiance.input_dim(), in.begin() + m.radiance.input_dim());
    const RadianceOutput out = m.radiance.forward(Tensor::from({n, m.radiance.input_dim()}, in));
    REQUIRE(out.sigma.shape() == Shape{n, 1});
    REQUIRE(out.color.shape() == Shape{n, 3});
    REQUIRE(out.extra.shape() == Shape{n, 4});
    for (float s : out.sigma.data()) CHECK(s >= 0.0f);
    for (float c : out.color.data()) {
        CHECK(c >= 0.0f);
        CHECK(c <= 1.0f);
    }
    CHECK(out.sigma.data()[0] == out.sigma.data()[1]);
    for (int k = 0; k < 3; ++k) CHECK(out.color.data()[k] == out.color.data()[3 + k]);

    Models z = small_models();
    for (auto& [name, t] : z.radiance.parameters())
        if (name.rfind("rad.sigma", 0) == 0) std::fill(t.data().begin(), t.data().end(), 0.0f);
    const RadianceOutput zo = z.radiance.forward(Tensor::from({n, z.radiance.input_dim()}, in));
    for (float s : zo.sigma.data()) CHECK(s == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    CHECK_THROWS_AS(m.radiance.forward(Tensor::zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("direction encoding") {
    const std::vector<float> e = encode_direction(Vec3(0.0, 0.6, 0.8), 4);
    REQUIRE(e.size() == 27);
    CHECK(e[1] == doctest::Approx(0.6));
    // k = 1 block: sin(2π·d) then cos(2π·d)
    CHECK(e[3 + 6 + 1] == doctest::Approx(std::sin(2.0 * M_PI * 0.6)).epsilon(1e-6));
    CHECK(e[3 + 6 + 3 + 2] == doctest::Approx(std::cos(2.0 * M_PI * 0.8)).epsilon(1e-6));
}

TEST_CASE("empty scene prunes every ray") {
    Models m = small_models();
    set_occupancy_bias(m, -60.0f);
    RenderOptions opt;
    opt.background = {0.2f, 0.4f, 0.6f};
    const RenderedFrame f = render_frame(m, test_pose(), test_camera(), 0, opt);
    CHECK(f.rays_alive == 0);
    CHECK(f.samples == 0);
    for (int y = 0; y < f.rgb.height; ++y)
        for (int x = 0; x < f.rgb.width; ++x) {
            for (int c = 0; c < 3; ++c) CHECK(f.rgb.at(x, y, c) == opt.background[static_cast<size_t>(c)]);
            CHECK(f.opacity.at(x, y, 0) == 0.0f);
            CHECK(f.pruned.at(x, y, 0) == 1.0f);
        }
    CHECK(f.upsampled.width == 32);
}

TEST_CASE("render_frame is deterministic and well formed") {
    const Models m = small_models();
    RenderOptions opt;
    const TwoHandPose pose = test_pose();
    const Camera cam = test_camera();
    const RenderedFrame a = render_frame(m, pose, cam, 1, opt), b = render_frame(m, pose, cam, 1, opt);
    CHECK(a.rgb.data == b.rgb.data);
    CHECK(a.features.data == b.features.data);
    CHECK(a.upsampled.data == b.upsampled.data);
    CHECK(a.rays_alive > 0);
    CHECK(a.rays_alive < 16 * 16);
    CHECK(a.samples == a.rays_alive * 16);
    REQUIRE(a.features.channels == 4);
    for (int i = 0; i < 16 * 16; ++i) {
        const float o = a.opacity.data[static_cast<size_t>(i)];
        CHECK(o >= 0.0f);
        CHECK(o <= 1.0f + 1e-6f);
        if (a.pruned.data[static_cast<size_t>(i)] == 1.0f) {
            CHECK(o == 0.0f);
            for (int c = 0; c < 3; ++c) CHECK(a.rgb.data[static_cast<size_t>(i) * 3 + c] == 0.0f);
        }
    }
    CHECK_THROWS_AS(render_frame(m, pose, cam, 7, opt), std::out_of_range);

    RenderOptions coarse = opt;
    coarse.hierarchical = false;
    CHECK(render_frame(m, pose, cam, 1, coarse).samples == a.rays_alive * 8);
}

TEST_CASE("dense box mode keeps every box ray") {
    const Models m = small_models();
    RenderOptions opt;
    opt.prune = false;
    opt.hierarchical = false;
    opt.k_u = 64;
    const Camera cam = test_camera();
    const PreparedRays p = prepare_rays(m, test_pose(), cam, opt);
    CHECK(p.alive() == 16 * 16);
    CHECK(p.count() == p.alive() * 64);
    CHECK(p.samples == 64);
}

TEST_CASE("hierarchical samples reuse coarse occupancy") {
    Models m = small_models();
    // a random head makes probabilities vary along the ray
    std::mt19937 rng(3);
    std::normal_distribution<float> d(0.0f, 0.5f);
    for (auto& [name, t] : m.occupancy.parameters())
        if (name.rfind("occ.dec.head", 0) == 0)
            for (float& v : t.data()) v = d(rng);
    RenderOptions opt;
    opt.prune = false;
    const Camera cam = test_camera();
    const TwoHandPose pose = test_pose();
    const PreparedRays p = prepare_rays(m, pose, cam, opt);
    REQUIRE(p.alive() > 0);
    // rebuild the same sample depths and query them directly
    RayBatch batch = generate_rays(cam);
    box_bounds(batch, opt.box);
    const SampleSet coarse = uniform_samples(batch, opt.k_u, opt.seed, opt.jitter);
    const TwoHandResult cq = query_two_hands(m.occupancy, coarse.positions(batch), pose, m.space, &m.templ);
    std::vector<float> w(cq.signed_p.size());
    for (size_t i = 0; i < w.size(); ++i) w[i] = std::fabs(cq.signed_p[i]);
    const SampleSet fine = hierarchical_samples(batch, coarse, w, opt.k_h, opt.seed ^ 0x9e3779b97f4a7c15ull);
    const TwoHandResult fq = query_two_hands(m.occupancy, fine.positions(batch), pose, m.space, &m.templ);
    REQUIRE(static_cast<int64_t>(fq.signed_p.size()) == p.count());
    // batch composition changes the last bits of the matrix products
    double worst = 0.0;
    for (int64_t i = 0; i < p.count(); ++i)
        worst = std::max(worst, std::fabs(static_cast<double>(p.signed_p[static_cast<size_t>(i)]) -
                                          fq.signed_p[static_cast<size_t>(i)]));
    for (size_t i = 0; i < p.features.size(); ++i)
        worst = std::max(worst, std::fabs(static_cast<double>(p.features[i]) - fq.features[i]));
    CHECK(worst < 1e-5);
}

TEST_CASE("pruned pixels receive no gradient") {
    const Models m = small_models();
    RenderOptions opt;
    const PreparedRays p = prepare_rays(m, test_pose(), test_camera(), opt);
    REQUIRE(p.alive() > 0);
    REQUIRE(p.alive() < p.rays);
    std::vector<float> mask(static_cast<size_t>(3 * p.rays), 1.0f);
    for (int32_t px : p.pixel)
        for (int c = 0; c < 3; ++c) mask[static_cast<size_t>(c * p.rays + px)] = 0.0f;
    const RenderTensors r = render_prepared(m, p, 0, opt);
    const Tensor loss = sum(r.rgb * Tensor::from(r.rgb.shape(), mask));
    backward(loss);
    for (const auto& [name, t] : m.radiance.parameters()) {
        if (!t.has_grad()) continue;
        for (float g : t.grad()) CHECK(g == 0.0f);
    }
    for (const auto& [name, t] : m.radiance.parameters()) const_cast<Tensor&>(t).zero_grad();
}

TEST_CASE("stable re-sort of equal depths leaves the composite unchanged") {
    // samples listed out of order, then stably sorted by depth
    const std::vector<double> depth{0.3, 0.1, 0.2, 0.2, 0.4};
    const std::vector<float> sigma{1.0f, 2.0f, 0.5f, 0.7f, 3.0f};
    const std::vector<float> color{0.1f, 0.9f, 0.4f, 0.6f, 0.2f};
    std::vector<int> order(depth.size());
    std::iota(order.begin(), order.end(), 0);
    auto run = [&](std::vector<int> idx) {
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return depth[a] < depth[b]; });
        std::vector<float> s, c, d;
        for (int i : idx) {
            s.push_back(sigma[i]);
            c.push_back(color[i]);
            d.push_back(0.1f);
        }
        return composite(Tensor::from({1, 5}, s), Tensor::from({1, 5}, c), d, 1, std::vector<float>{0.0f}).data();
    };
    const auto a = run(order);
    std::vector<int> shuffled{4, 0, 2, 3, 1};
    const auto b = run(shuffled);
    CHECK(std::vector<float>(a.begin(), a.end()) == std::vector<float>(b.begin(), b.end()));
}

TEST_CASE("make_crop") {
    const Camera full = look_at(Vec3(0.0, 0.1, 0.5), Vec3::Zero(), Vec3::UnitY(), 800.0, 512, 512);
    const TwoHandPose pose = test_pose();
    const CropView v = make_crop(full, pose, 32, 2.0);
    CHECK(v.camera.width == 32);
    CHECK(v.hires.width == 64);
    for (int j = 0; j < kJoints; ++j) {
        const Vec3 lo = v.camera.project(pose.right.joints.row(j).transpose());
        const Vec3 hi = v.hires.project(pose.right.joints.row(j).transpose());
        CHECK(v.camera.in_frame(lo.x(), lo.y()));
        CHECK(std::fabs(hi.x() - 2.0 * lo.x()) < 1e-9);
        CHECK(std::fabs(hi.y() - 2.0 * lo.y()) < 1e-9);
    }
    CHECK_THROWS_AS(make_crop(full, pose, 32, 0.5), std::invalid_argument);
}

TEST_CASE("single-frame training lowers the loss") {
    Models m = small_models();
    const Camera full = look_at(Vec3(0.05, 0.1, 0.5), Vec3::Zero(), Vec3::UnitY(), 800.0, 256, 256);
    const CapsuleHand hand = generate_pose(4, 0.5);
    TrainFrame f;
    f.pose = {hand.skeleton, std::nullopt};
    f.camera = full;
    f.image = render_analytic(hand, full).rgb;
    f.code_id = 1;
    RenderTrainConfig tc;
    tc.steps = 100;
    tc.crop = 16;
    tc.variants = 1;
    tc.adam.lr = 1e-3f;
    tc.lr_final = 1e-3f;
    tc.log_every = 10;
    const RenderTrainReport r = train_renderer(m, {f}, tc, RenderOptions{});
    REQUIRE(r.step_loss.size() == 100);
    REQUIRE(r.loss.size() == 10);
    for (size_t i = 1; i < r.loss.size(); ++i) CHECK(r.loss[i].second < r.loss[i - 1].second);
    CHECK(r.step_loss.back() < 0.5 * r.step_loss.front());

    CHECK_THROWS_AS(train_renderer(m, {}, tc, RenderOptions{}), std::invalid_argument);
    TrainFrame bad = f;
    bad.code_id = 9;
    CHECK_THROWS_AS(train_renderer(m, {bad}, tc, RenderOptions{}), std::out_of_range);
}

TEST_CASE("parameters round trip") {
    const Models m = small_models();
    Models n(small_occ(), small_rad(), small_up());
    std::map<std::string, Tensor> source;
    for (auto& [name, t] : model_parameters(m)) source[name] = t;
    load_models(n, source);
    CHECK(n.codes.ids() == std::vector<int>{0, 1});
    const RenderedFrame a = render_frame(m, test_pose(), test_camera(), 1, RenderOptions{});
    const RenderedFrame b = render_frame(n, test_pose(), test_camera(), 1, RenderOptions{});
    CHECK(a.rgb.data == b.rgb.data);
}
