#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "tseg/gradcheck.hpp"
#include "tseg/graph.hpp"

using namespace tseg;

TEST_CASE("backward accumulates across shared paths") {
    // x -> shared 1x1 conv -> concat([shared, shared]) seeded with ones:
    // d(shared)/d(out) arrives twice, so dW = 2 * sum(x).
    Graph g;
    int in = g.add_input("x");
    int shared = g.add_conv2d("shared", in, 1, 1, 1, 1, 0, ParamInit::he_uniform, false);
    g.add_fuse("cat", {shared, shared}, FuseMode::concat);
    g.materialize(7);
    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    g.set_input(in, x);
    g.zero_grads();
    g.forward();
    Tensor seed = Tensor::full({1, 2, 2, 2}, 1);
    g.backward({{g.find("cat"), &seed}});
    REQUIRE(g.node(g.find("shared")).weight.grad[0] == Catch::Approx(2.0 * (1 + 2 + 3 + 4)));
}

TEST_CASE("parameters off the loss path get zero gradients") {
    Graph g;
    int in = g.add_input("x");
    int used = g.add_conv2d("used", in, 1, 2, 1, 1, 0);
    g.add_conv2d("unused", in, 1, 2, 1, 1, 0);
    g.add_softmax_loss("loss", used);
    g.materialize(9);
    g.set_input(in, Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
    g.set_labels(g.find("loss"), {0, 1, 0, 1});
    g.zero_grads();
    g.forward();
    g.backward();
    for (real_t v : g.node(g.find("unused")).weight.grad) REQUIRE(v == 0.0);
    bool any = false;
    for (real_t v : g.node(g.find("used")).weight.grad) any = any || v != 0.0;
    REQUIRE(any);
}

TEST_CASE("single conv gradient matches finite differences") {
    Graph g;
    int in = g.add_input("x");
    int c = g.add_conv2d("c", in, 2, 3, 3, 1, 1);
    g.add_softmax_loss("loss", c);
    g.materialize(11);
    Rng rng(12);
    Tensor x({1, 2, 6, 6});
    for (auto& v : x.data) v = static_cast<real_t>(rng.normal());
    g.set_input(in, x);
    std::vector<std::int32_t> labels(36);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.below(3));
    g.set_labels(g.find("loss"), labels);
    REQUIRE(finite_difference_check(g, "c.weight", 1e-5) <= 1e-4);
}

TEST_CASE("cycle detection") {
    Graph g;
    int in = g.add_input("x");
    int c = g.add_conv2d("c", in, 1, 1, 1, 1, 0);
    g.add_softmax_loss("loss", c);
    g.materialize(1);
    g.set_input(in, Tensor({1, 1, 2, 2}));
    g.set_labels(g.find("loss"), {0, 0, 0, 0});
    g.forward();
    g.node(1).inputs = {2};  // corrupt: forward reference
    REQUIRE_THROWS_WITH(g.backward(), Catch::Matchers::ContainsSubstring("cycle"));
}

TEST_CASE("graph rejects bad wiring up front") {
    Graph g;
    REQUIRE_THROWS_AS(g.add_relu("r", 0), std::invalid_argument);  // no node 0 yet
    g.add_input("x");
    g.add_relu("r", 0);
    REQUIRE_THROWS_WITH(g.add_relu("r", 0), Catch::Matchers::ContainsSubstring("duplicate"));
}

TEST_CASE("checkpoint round trip is bit exact") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "tseg_ckpt_test.ckpt").string();
    Graph g;
    int in = g.add_input("x");
    int c1 = g.add_conv2d("c1", in, 1, 4, 3, 1, 1);
    g.add_conv2d("c2", c1, 4, 2, 1, 1, 0);
    g.materialize(99);
    const auto before = g.node(g.find("c1")).weight.data;
    save_checkpoint(g, path);

    Graph h;
    int hin = h.add_input("x");
    int hc1 = h.add_conv2d("c1", hin, 1, 4, 3, 1, 1);
    h.add_conv2d("c2", hc1, 4, 2, 1, 1, 0);
    h.materialize(123);  // different init, then overwritten by the checkpoint
    load_checkpoint(h, path);
    REQUIRE(h.node(h.find("c1")).weight.data == before);

    SECTION("shape mismatch is a descriptive failure") {
        Graph bad;
        int bin = bad.add_input("x");
        bad.add_conv2d("c1", bin, 1, 4, 5, 1, 1);  // different kernel
        bad.materialize(5);
        REQUIRE_THROWS_WITH(load_checkpoint(bad, path), Catch::Matchers::ContainsSubstring("mismatch"));
    }
    fs::remove(path);
    fs::remove(path + ".bin");
}

TEST_CASE("summary lists every node with parameter counts") {
    Graph g;
    int in = g.add_input("x");
    g.add_conv2d("c", in, 1, 1, 3, 1, 1);
    const std::string s = g.summary();
    REQUIRE_THAT(s, Catch::Matchers::ContainsSubstring("conv2d"));
    REQUIRE_THAT(s, Catch::Matchers::ContainsSubstring("total params: 10"));
}
