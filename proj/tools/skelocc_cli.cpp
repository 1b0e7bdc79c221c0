#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "skelocc/pipeline.hpp"

using namespace skelocc;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

void log_line(const std::string& s) { std::cerr << s << "\n"; }

void print(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

void write_render(const RenderedFrame& f, const std::string& out, bool upsampled) {
    if (upsampled && f.upsampled.width == 0) throw DataError("upsampled output needs k = 2");
    write_png(out, upsampled ? f.upsampled : f.rgb);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Skeleton-conditioned occupancy and radiance rendering of synthetic hands"};
    app.require_subcommand(1);

    int views = 10, poses = 6, ids = 2, size = 512, seed = 1;
    std::string out_dir;
    auto* synth = app.add_subcommand("synth", "Render a synthetic capsule-hand dataset");
    synth->add_option("--views", views, "camera count")->check(CLI::Range(2, 1000));
    synth->add_option("--poses", poses, "pose count")->check(CLI::PositiveNumber);
    synth->add_option("--ids", ids, "identity count")->check(CLI::PositiveNumber);
    synth->add_option("--size", size, "image side in pixels")->check(CLI::Range(16, 8192));
    synth->add_option("--seed", seed, "scene seed");
    synth->add_option("--out", out_dir, "output directory")->required();

    std::string config;
    std::optional<int> steps;
    int view = -1, pose = -1;
    std::optional<int> identity;
    int pose_id = -1, appearance_id = -1;
    std::string out_png;
    bool upsampled = false;

    auto with_config = [&](CLI::App* cmd) { cmd->add_option("--config", config, "run configuration")->required(); };
    auto* carve_cmd = app.add_subcommand("carve", "Carve labelled point clouds from the training views");
    with_config(carve_cmd);
    auto* occ_cmd = app.add_subcommand("train-occ", "Train the occupancy model");
    with_config(occ_cmd);
    occ_cmd->add_option("--steps", steps, "override optim.occ_steps");
    auto* train_cmd = app.add_subcommand("train-render", "Train radiance, codes and upsampler");
    with_config(train_cmd);
    train_cmd->add_option("--steps", steps, "override optim.render_steps");
    auto* render_cmd = app.add_subcommand("render", "Render one crop");
    with_config(render_cmd);
    render_cmd->add_option("--view", view, "camera index")->required();
    render_cmd->add_option("--pose", pose, "pose index")->required();
    render_cmd->add_option("--id", identity, "appearance id (default: the pose's identity)");
    render_cmd->add_option("--out", out_png, "output PNG")->required();
    render_cmd->add_flag("--upsampled", upsampled, "write the x2 upsampled crop");
    auto* transfer_cmd = app.add_subcommand("transfer", "Render a pose with another identity's appearance");
    with_config(transfer_cmd);
    transfer_cmd->add_option("--pose-id", pose_id, "pose index")->required();
    transfer_cmd->add_option("--appearance-id", appearance_id, "identity providing the appearance")->required();
    transfer_cmd->add_option("--view", view, "camera index (default: first test view)");
    transfer_cmd->add_option("--out", out_png, "output PNG")->required();
    transfer_cmd->add_flag("--upsampled", upsampled, "write the x2 upsampled crop");
    auto* eval_cmd = app.add_subcommand("eval", "Score test views against the analytic renderer");
    with_config(eval_cmd);
    auto* bench_cmd = app.add_subcommand("bench", "Compare pruned and dense rendering");
    with_config(bench_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (synth->parsed()) {
            DatasetOptions opt;
            opt.width = opt.height = size;
            opt.focal *= static_cast<double>(size) / 512.0;
            opt.seed = static_cast<uint64_t>(seed);
            make_dataset(views, poses, ids, out_dir, opt);
            print({{"dataset", out_dir}, {"views", views}, {"poses", poses}, {"ids", ids}, {"size", size}});
            return 0;
        }
        const RunConfig cfg = load_config(config);
        if (carve_cmd->parsed()) {
            print(run_carve(cfg, log_line));
        } else if (occ_cmd->parsed()) {
            print(run_train_occ(cfg, steps, log_line));
        } else if (train_cmd->parsed()) {
            print(run_train_render(cfg, steps, log_line));
        } else if (render_cmd->parsed()) {
            const Dataset ds = open_dataset(cfg);
            const Models models = load_trained(cfg, ds);
            const RenderedFrame f = render_view(models, cfg, ds, pose, view, identity);
            write_render(f, out_png, upsampled);
            print({{"out", out_png}, {"rays_alive", f.rays_alive}, {"samples", f.samples}, {"ms", f.ms}});
        } else if (transfer_cmd->parsed()) {
            const Dataset ds = open_dataset(cfg);
            const Models models = load_trained(cfg, ds);
            const int v = view >= 0 ? view : cfg.test_views.front();
            const RenderedFrame f = render_view(models, cfg, ds, pose_id, v, appearance_id);
            write_render(f, out_png, upsampled);
            print({{"out", out_png}, {"pose", pose_id}, {"appearance", appearance_id}, {"view", v}});
        } else if (eval_cmd->parsed()) {
            print(run_eval(cfg, log_line)["aggregate"]);
        } else if (bench_cmd->parsed()) {
            print(run_bench(cfg, log_line));
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
