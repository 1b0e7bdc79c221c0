#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace skelocc {

/// Malformed or inconsistent configuration; the message names the file,
/// line and key where known.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    // [data]
    std::string dataset = "data";
    std::string workdir = "run";
    std::vector<int> train_views{0, 1, 2, 3, 4, 5, 6, 7};
    std::vector<int> test_views{8, 9};
    int crop = 64;      // low-resolution render size (H = W)
    double k = 2.0;     // downscale between the crop and the render
    // [synth]
    int synth_views = 10;
    int synth_poses = 6;
    int synth_ids = 2;
    int image_size = 512;
    // [carve]
    int candidates = 400000;
    int fresh_candidates = 133333;
    double sigma_max = 0.08;
    double rho = 1.0;
    // [sampling]
    int k_u = 8;
    int k_h = 8;
    double p_min = 0.1;
    double p_max = 0.99;
    double d_fix = 0.02;
    int dense_samples = 64;
    // [model]
    int w = 128;
    int depth = 8;
    int m = 32;
    int n_a = 16;
    int d = 8;
    int view_freqs = 4;
    bool view_dependent = false;
    int occ_width = 128;
    int occ_embedding = 64;
    int occ_blocks = 4;
    int pe_freqs = 6;
    std::string space = "observed";
    int up_width = 32;
    int up_blocks = 3;
    // [optim]
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int occ_steps = 20000;
    int occ_batch = 2048;
    double occ_lr = 1e-3;
    double occ_lr_final = 1e-4;
    int render_steps = 10000;
    double render_lr = 5e-4;
    double render_lr_final = 5e-5;
    int variants = 3;
    // [loss]
    double w_l1 = 0.6;
    double w_mse = 0.4;
    double w_upsample = 1.0;
    double code_reg = 1e-4;
    // [seed]
    int seed_data = 1;
    int seed_carve = 100;
    int seed_occ = 1;
    int seed_render = 5;

    /// Directory relative paths are resolved against (the config file's).
    std::filesystem::path base_dir = ".";

    std::filesystem::path dataset_path() const;
    std::filesystem::path workdir_path() const;

    /// Throws ConfigError: overlapping or empty view sets, non-positive sizes,
    /// unknown occupancy space, probabilities out of order.
    void validate() const;

    bool operator==(const RunConfig& o) const;
};

/// Flat "key = value" lines under [section] headers; '#' starts a comment.
/// Every key is optional; unknown sections or keys are rejected. `origin`
/// names the source in error messages.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
std::string serialize_config(const RunConfig& cfg);

/// Reads, parses and validates; relative paths resolve against the file's
/// directory.
RunConfig load_config(const std::filesystem::path& path);

}  // namespace skelocc
