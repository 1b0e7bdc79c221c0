#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "skelocc/config.hpp"

using namespace skelocc;

TEST_CASE("defaults are valid and round trip") {
    const RunConfig c;
    CHECK_NOTHROW(c.validate());
    const RunConfig back = parse_config(serialize_config(c));
    CHECK(back == c);
    CHECK(serialize_config(back) == serialize_config(c));
}

TEST_CASE("parsing sections, comments and lists") {
    const RunConfig c = parse_config(
        "# run\n"
        "[data]\n"
        "dataset = /tmp/x   # absolute\n"
        "train_views = 0, 2,4\n"
        "test_views = 1\n"
        "k = 2.5\n"
        "\n"
        "[model]\n"
        "view_dependent = true\n"
        "space = canonical\n"
        "[optim]\n"
        "render_lr = 1e-3\n");
    CHECK(c.dataset == "/tmp/x");
    CHECK(c.train_views == std::vector<int>{0, 2, 4});
    CHECK(c.test_views == std::vector<int>{1});
    CHECK(c.k == 2.5);
    CHECK(c.view_dependent);
    CHECK(c.space == "canonical");
    CHECK(c.render_lr == 1e-3);
    CHECK(c.w == 128);
    CHECK(c.dataset_path() == "/tmp/x");

    RunConfig odd = c;
    odd.d_fix = 0.1 + 0.2;
    odd.eps = 3.3e-9;
    CHECK(parse_config(serialize_config(odd)) == odd);
}

TEST_CASE("errors name the key") {
    auto message = [](const std::string& text) {
        try {
            parse_config(text, "c.ini");
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message("[data]\nbogus = 1\n").find("data.bogus") != std::string::npos);
    CHECK(message("[nope]\n").find("nope") != std::string::npos);
    CHECK(message("[data]\ncrop = abc\n").find("data.crop") != std::string::npos);
    CHECK(message("[data]\ncrop = 64\ncrop = 32\n").find("duplicate") != std::string::npos);
    CHECK(message("crop = 64\n").find("outside") != std::string::npos);
    CHECK(message("[data]\ncrop 64\n").find("c.ini:2") != std::string::npos);

    RunConfig overlap;
    overlap.test_views = {7, 8};
    CHECK_THROWS_AS(overlap.validate(), ConfigError);
    RunConfig bad_space;
    bad_space.space = "world";
    CHECK_THROWS_AS(bad_space.validate(), ConfigError);
}

TEST_CASE("load_config resolves paths next to the file") {
    const auto dir = std::filesystem::temp_directory_path() / "skelocc_cfg_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "run.ini");
        f << "[data]\ndataset = ds\nworkdir = out\n";
    }
    const RunConfig c = load_config(dir / "run.ini");
    CHECK(c.dataset_path() == dir / "ds");
    CHECK(c.workdir_path() == dir / "out");
    {
        std::ofstream f(dir / "bad.ini");
        f << "[data]\ntrain_views = 0,1\ntest_views = 1\n";
    }
    try {
        load_config(dir / "bad.ini");
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("bad.ini") != std::string::npos);
        CHECK(std::string(e.what()).find("test_views") != std::string::npos);
    }
    CHECK_THROWS_AS(load_config(dir / "missing.ini"), ConfigError);
    std::filesystem::remove_all(dir);
}
