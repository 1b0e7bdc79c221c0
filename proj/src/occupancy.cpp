#include "skelocc/occupancy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "skelocc/optim.hpp"

namespace skelocc {

namespace {

constexpr int kJointFeatures = 3 + kJoints;

int point_features(const OccupancyConfig& c) { return 3 + 6 * c.pe_freqs; }

}  // namespace

OccupancyModel::OccupancyModel(const OccupancyConfig& cfg) : cfg_(cfg) {
    std::mt19937 rng(static_cast<uint32_t>(cfg.seed));
    const int W = cfg.width, E = cfg.embedding;
    enc0_ = Linear(kJointFeatures, W, rng);
    enc1_ = Linear(W, W, rng);
    enc_out_ = Linear(W, E, rng);
    dec_in_ = Linear(point_features(cfg), W, rng);
    for (int b = 0; b < cfg.blocks; ++b) {
        dec_lin_.emplace_back(W, W, rng);
        dec_lin_.emplace_back(W, W, rng, 0.1f);
        for (int k = 0; k < 2; ++k) {
            film_g_.emplace_back(E, W, rng, 0.1f);
            film_b_.emplace_back(E, W, rng, 0.1f);
        }
    }
    feat_ = Linear(W, cfg.features, rng);
    head_ = Linear::zeros(cfg.features, 1);
}

Tensor OccupancyModel::encode(const Skeleton& canonical) const { return condition({canonical}).embedding; }

Conditioning OccupancyModel::condition(const std::vector<Skeleton>& canonical) const {
    const int64_t G = static_cast<int64_t>(canonical.size());
    std::vector<float> in(static_cast<size_t>(G * kJoints * kJointFeatures), 0.0f);
    for (int64_t g = 0; g < G; ++g) {
        const Skeleton& s = canonical[static_cast<size_t>(g)];
        if (s.root().norm() > 1e-6)
            throw std::invalid_argument("encode_skeleton: skeleton is not canonical (root norm " +
                                        std::to_string(s.root().norm()) + ")");
        for (int j = 0; j < kJoints; ++j) {
            float* row = &in[static_cast<size_t>((g * kJoints + j) * kJointFeatures)];
            for (int k = 0; k < 3; ++k) row[k] = static_cast<float>(s.joints(j, k)) * cfg_.coord_scale;
            row[3 + j] = 1.0f;
        }
    }
    const Tensor x = Tensor::from({G * kJoints, kJointFeatures}, std::move(in));
    const Tensor h = relu(enc1_(relu(enc0_(x))));
    Conditioning c;
    c.embedding = enc_out_(max_pool_rows(h, kJoints));
    for (size_t i = 0; i < film_g_.size(); ++i) {
        c.gamma.push_back(add_scalar(film_g_[i](c.embedding), 1.0f));
        c.beta.push_back(film_b_[i](c.embedding));
    }
    return c;
}

Tensor OccupancyModel::encode_points(const Tensor& p) const {
    const int64_t K = p.dim(0);
    const int F = point_features(cfg_);
    std::vector<float> out(static_cast<size_t>(K * F));
    const auto src = p.data();
    for (int64_t i = 0; i < K; ++i) {
        float* row = &out[static_cast<size_t>(i * F)];
        for (int k = 0; k < 3; ++k) {
            const float x = src[static_cast<size_t>(i * 3 + k)] * cfg_.coord_scale;
            row[k] = x;
            float freq = static_cast<float>(M_PI);
            for (int l = 0; l < cfg_.pe_freqs; ++l, freq *= 2.0f) {
                row[3 + 6 * l + k] = std::sin(freq * x);
                row[3 + 6 * l + 3 + k] = std::cos(freq * x);
            }
        }
    }
    return Tensor::from({K, F}, std::move(out));
}

OccForward OccupancyModel::forward(const Tensor& points, const Conditioning& cond, std::span<const int32_t> group) const {
    if (points.rank() != 2 || points.dim(1) != 3) throw std::invalid_argument("occupancy forward: points must be K×3");
    if (static_cast<int64_t>(group.size()) != points.dim(0))
        throw std::invalid_argument("occupancy forward: one group index per point required");
    Tensor h = dec_in_(encode_points(points));
    for (int b = 0; b < cfg_.blocks; ++b) {
        Tensor a = h;
        for (int k = 0; k < 2; ++k) {
            const size_t l = static_cast<size_t>(2 * b + k);
            a = film_relu(a, cond.gamma[l], cond.beta[l], group);
            a = dec_lin_[l](a);
        }
        h = add(h, a);
    }
    OccForward out;
    out.features = relu(feat_(h));
    out.logits = head_(out.features);
    out.prob = sigmoid(out.logits);
    return out;
}

OccResult OccupancyModel::query(const Points& points, const Skeleton& canonical, int64_t chunk) const {
    NoGradGuard ng;
    return query(points, condition({canonical}), chunk);
}

OccResult OccupancyModel::query(const Points& points, const Conditioning& cond, int64_t chunk) const {
    NoGradGuard ng;
    DenormalGuard denormals;
    const int64_t K = points.rows();
    OccResult r;
    r.m = cfg_.features;
    r.prob.resize(static_cast<size_t>(K));
    r.features.resize(static_cast<size_t>(K * r.m));
    for (int64_t s = 0; s < K; s += chunk) {
        const int64_t n = std::min(chunk, K - s);
        std::vector<float> p(static_cast<size_t>(n * 3));
        for (int64_t i = 0; i < n; ++i)
            for (int k = 0; k < 3; ++k) p[static_cast<size_t>(i * 3 + k)] = static_cast<float>(points(s + i, k));
        const std::vector<int32_t> group(static_cast<size_t>(n), 0);
        const OccForward f = forward(Tensor::from({n, 3}, std::move(p)), cond, group);
        std::copy(f.prob.data().begin(), f.prob.data().end(), r.prob.begin() + s);
        std::copy(f.features.data().begin(), f.features.data().end(), r.features.begin() + s * r.m);
    }
    return r;
}

NamedTensors OccupancyModel::parameters() const {
    NamedTensors out;
    enc0_.collect(out, "occ.enc.l0");
    enc1_.collect(out, "occ.enc.l1");
    enc_out_.collect(out, "occ.enc.out");
    dec_in_.collect(out, "occ.dec.in");
    for (size_t i = 0; i < dec_lin_.size(); ++i) {
        const std::string s = std::to_string(i);
        dec_lin_[i].collect(out, "occ.dec.lin" + s);
        film_g_[i].collect(out, "occ.dec.gamma" + s);
        film_b_[i].collect(out, "occ.dec.beta" + s);
    }
    feat_.collect(out, "occ.dec.feat");
    head_.collect(out, "occ.dec.head");
    return out;
}

void OccupancyModel::load(const NamedTensors& source) {
    std::map<std::string, Tensor> m(source.begin(), source.end());
    assign_from(parameters(), m);
}

HandFrame::HandFrame(const Skeleton& observed, OccupancySpace space, const Skeleton& templ)
    : space_(space), mirror_(observed.handedness == Handedness::left), templ_(templ) {
    observed_right_ = mirror_ ? mirror_x(observed) : observed;
    if (space_ == OccupancySpace::canonical) {
        bones_ = bone_transforms(observed_right_, templ_);
        cond_ = canonicalize(templ_);
    } else {
        cond_ = canonicalize(observed_right_);
    }
    cond_.handedness = Handedness::right;
}

Points HandFrame::to_query(const Points& world) const {
    Points p = mirror_ ? mirror_x(world) : world;
    if (space_ == OccupancySpace::canonical) {
        p = apply_bone_transforms(p, segment_by_bone(p, observed_right_), bones_);
        p.rowwise() -= templ_.root().transpose();
    } else {
        p.rowwise() -= observed_right_.root().transpose();
    }
    return p;
}

float signed_probability(float p_r, float p_l) { return p_r >= p_l ? p_r : -p_l; }

TwoHandResult query_two_hands(const OccupancyModel& model, const Points& world, const TwoHandPose& pose,
                              OccupancySpace space, const Skeleton* templ) {
    if (space == OccupancySpace::canonical && !templ)
        throw std::invalid_argument("query_two_hands: canonical space needs a template skeleton");
    const Skeleton& t = templ ? *templ : pose.right;
    Skeleton right = pose.right;
    right.handedness = Handedness::right;
    const HandFrame rf(right, space, t);
    const OccResult r = model.query(rf.to_query(world), rf.condition());
    TwoHandResult out;
    out.m = r.m;
    out.p_r = r.prob;
    out.p_l.assign(r.prob.size(), 0.0f);
    out.features = r.features;
    if (pose.left) {
        Skeleton left = *pose.left;
        left.handedness = Handedness::left;
        const HandFrame lf(left, space, t);
        const OccResult l = model.query(lf.to_query(world), lf.condition());
        out.p_l = l.prob;
        for (size_t i = 0; i < out.p_r.size(); ++i)
            if (out.p_l[i] > out.p_r[i])
                std::copy_n(l.features.begin() + static_cast<std::ptrdiff_t>(i * out.m), out.m,
                            out.features.begin() + static_cast<std::ptrdiff_t>(i * out.m));
    }
    out.signed_p.resize(out.p_r.size());
    for (size_t i = 0; i < out.p_r.size(); ++i) out.signed_p[i] = signed_probability(out.p_r[i], out.p_l[i]);
    return out;
}

double occupancy_iou(const OccupancyModel& model, const std::vector<OccupancySample>& hands,
                     const std::vector<LabelledPoints>& validation) {
    int64_t inter = 0, uni = 0;
    for (const LabelledPoints& v : validation) {
        const OccResult r = model.query(v.points, hands.at(static_cast<size_t>(v.hand)).condition);
        for (size_t i = 0; i < r.prob.size(); ++i) {
            const bool pred = r.prob[i] > 0.5f, truth = v.labels[i] != 0;
            inter += pred && truth;
            uni += pred || truth;
        }
    }
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

OccTrainReport train_occupancy(OccupancyModel& model, const std::vector<OccupancySample>& hands,
                               const OccTrainConfig& cfg, const std::vector<LabelledPoints>& validation,
                               const std::function<void(int, double)>& on_log) {
    if (hands.empty()) throw std::invalid_argument("train_occupancy: no training hands");
    for (size_t h = 0; h < hands.size(); ++h) {
        if (hands[h].positives.rows() == 0)
            throw std::invalid_argument("train_occupancy: hand " + std::to_string(h) + " has no positive points");
        if (hands[h].negatives.rows() == 0 && hands[h].fresh_negatives.rows() == 0)
            throw std::invalid_argument("train_occupancy: hand " + std::to_string(h) + " has no negative points");
    }
    DenormalGuard denormals;
    std::vector<Skeleton> conds;
    for (const auto& h : hands) conds.push_back(h.condition);

    const auto params = model.parameters();
    Adam opt(tensors_of(params), {cfg.lr, 0.9f, 0.999f, 1e-8f});
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<size_t> pick_hand(0, hands.size() - 1);
    std::uniform_real_distribution<float> u01(0.0f, 1.0f);

    OccTrainReport rep;
    double acc = 0.0;
    int acc_n = 0;
    const int64_t B = cfg.batch;
    std::vector<float> pts(static_cast<size_t>(B * 3)), labels(static_cast<size_t>(B));
    std::vector<int32_t> group(static_cast<size_t>(B));
    for (int step = 1; step <= cfg.steps; ++step) {
        const float progress = static_cast<float>(step - 1) / static_cast<float>(std::max(1, cfg.steps - 1));
        opt.set_lr(cfg.lr_final + 0.5f * (cfg.lr - cfg.lr_final) * (1.0f + std::cos(static_cast<float>(M_PI) * progress)));

        for (int64_t i = 0; i < B; ++i) {
            const size_t h = pick_hand(rng);
            const OccupancySample& s = hands[h];
            const Points* src = nullptr;
            float y = 0.0f;
            if (i < static_cast<int64_t>(cfg.positive_fraction * static_cast<float>(B))) {
                src = &s.positives;
                y = 1.0f;
            } else {
                const bool fresh = s.fresh_negatives.rows() > 0 &&
                                   (s.negatives.rows() == 0 || u01(rng) < cfg.fresh_fraction);
                src = fresh ? &s.fresh_negatives : &s.negatives;
            }
            std::uniform_int_distribution<int64_t> pick(0, src->rows() - 1);
            const int64_t r = pick(rng);
            for (int k = 0; k < 3; ++k) pts[static_cast<size_t>(i * 3 + k)] = static_cast<float>((*src)(r, k));
            labels[static_cast<size_t>(i)] = y;
            group[static_cast<size_t>(i)] = static_cast<int32_t>(h);
        }
        const Conditioning cond = model.condition(conds);
        const OccForward f = model.forward(Tensor::from({B, 3}, pts), cond, group);
        // BCE with logits: softplus(z) − y·z
        const Tensor y = Tensor::from({B, 1}, labels);
        const Tensor loss = mean(sub(softplus(f.logits), mul(y, f.logits)));
        const double lv = loss.item();
        if (step == 1) rep.first_loss = lv;
        acc += lv;
        ++acc_n;
        backward(loss);
        opt.step();

        if (step % cfg.eval_every == 0 || step == cfg.steps) {
            rep.loss.emplace_back(step, acc / acc_n);
            if (on_log) on_log(step, acc / acc_n);
            acc = 0.0;
            acc_n = 0;
            if (!validation.empty()) rep.iou.emplace_back(step, occupancy_iou(model, hands, validation));
        }
    }
    if (!rep.iou.empty()) rep.final_iou = rep.iou.back().second;
    return rep;
}

std::optional<double> surface_extract(const ProbFn& prob, const Vec3& o, const Vec3& d, double t_begin, double t_end,
                                      double step, double p_min) {
    if (!(step > 0.0)) throw std::invalid_argument("surface_extract: step must be positive");
    Points p(1, 3);
    auto at = [&](double t) {
        p.row(0) = (o + t * d).transpose();
        return prob(p)[0];
    };
    double prev_t = t_begin;
    if (at(prev_t) >= p_min) return prev_t;
    for (double t = t_begin + step; t <= t_end + 1e-12; t += step) {
        if (at(t) >= p_min) {
            double lo = prev_t, hi = t;
            for (int i = 0; i < 10; ++i) {
                const double mid = 0.5 * (lo + hi);
                (at(mid) >= p_min ? hi : lo) = mid;
            }
            return hi;
        }
        prev_t = t;
    }
    return std::nullopt;
}

}  // namespace skelocc
