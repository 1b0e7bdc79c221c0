#include <doctest.h>

#include <cmath>
#include <string>

#include "skelocc/appearance.hpp"
#include "skelocc/nn.hpp"
#include "skelocc/optim.hpp"

using namespace skelocc;

TEST_CASE("get_code") {
    CodeTable t(16);
    t.add(0);
    t.add(3);
    CHECK(t.get_code(0).numel() == 16);
    for (float v : t.get_code(3).data()) CHECK(v == 0.0f);
    CHECK(t.ids() == std::vector<int>{0, 3});
    try {
        t.get_code(7);
        FAIL("expected unknown id");
    } catch (const std::out_of_range& e) {
        CHECK(std::string(e.what()).find("7") != std::string::npos);
    }
    CHECK_THROWS_AS(t.add(3), std::invalid_argument);
}

TEST_CASE("codes are independent parameters") {
    CodeTable t(4);
    t.add(0);
    t.add(1);
    Adam opt(tensors_of(t.parameters()), {0.1f});
    const std::vector<float> before(t.get_code(1).data().begin(), t.get_code(1).data().end());
    backward(sum(mul(t.get_code(0), Tensor::full({1, 4}, 1.0f))));
    opt.step();
    for (float v : t.get_code(0).data()) CHECK(v != 0.0f);
    CHECK(std::equal(before.begin(), before.end(), t.get_code(1).data().begin()));
}

TEST_CASE("regularize") {
    CodeTable t(16);
    t.add(0);
    CHECK(t.regularize(1.0f).item() == 0.0f);
    auto d = t.get_code(0).impl()->data.data();
    d[0] = 0.6f;
    d[5] = 0.8f;
    CHECK(t.regularize(1.0f).item() == doctest::Approx(1.0f));
    t.add(1);
    const float one = t.regularize(1.0f).item();
    for (int i = 0; i < 16; ++i) d[i] *= 2.0f;
    CHECK(t.regularize(1.0f).item() == doctest::Approx(4.0f * one));
    CHECK(t.regularize(0.5f).item() == doctest::Approx(2.0f * one));
    CHECK(CodeTable(8).regularize(1.0f).item() == 0.0f);
}

TEST_CASE("checkpoint names and reload") {
    CodeTable t(3);
    t.add(2);
    t.get_code(2).impl()->data = {1.0f, -2.0f, 0.5f};
    const NamedTensors p = t.parameters();
    REQUIRE(p.size() == 1);
    CHECK(p[0].first == "app.code.2");
    std::map<std::string, Tensor> src(p.begin(), p.end());
    src.emplace("occ.enc.l0.w", Tensor::zeros({2, 2}));
    CodeTable u(3);
    u.load(src);
    CHECK(u.contains(2));
    CHECK(u.get_code(2).data()[1] == -2.0f);
    CodeTable wrong(4);
    CHECK_THROWS_AS(wrong.load(src), std::invalid_argument);
}
