#include <doctest.h>

#include <cmath>
#include <numbers>

#include "support/gradcheck.hpp"
#include "wavesep/model.hpp"
#include "wavesep/synth.hpp"

using namespace wavesep;
using wavesep::testing::random_tensor;

namespace {

ModelConfig tiny(bool conditioned = false) {
    ModelConfig c;
    c.num_sources = 3;
    c.depth = 2;
    c.base_filters = 3;
    c.filter_growth = 2;
    c.kernel_down = 5;
    c.kernel_up = 3;
    c.conditioning_enabled = conditioned;
    return c;
}

std::vector<Real> random_mix(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Real> x(n);
    for (auto &v : x) v = static_cast<Real>(rng.uniform(-0.5, 0.5));
    return x;
}

Tensor &param(WaveUNet &m, const std::string &name) {
    const auto &names = m.parameter_names();
    const auto i = static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
    REQUIRE(i < names.size());
    return m.parameters()[i];
}

bool same(const Tensor &a, const Tensor &b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("model config validation") {
    auto c = tiny();
    CHECK_NOTHROW(c.validate());
    c.kernel_down = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.num_sources = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.depth = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("plan_shapes depth 1 hand trace") {
    ModelConfig c = tiny();
    c.depth = 1;
    c.kernel_down = c.kernel_up = 3;
    const auto plan = plan_shapes(c, 3);
    CHECK(plan.input_length == 11);
    CHECK(plan.encoder_lengths == std::vector<std::size_t>{9});
    CHECK(plan.decimated_lengths == std::vector<std::size_t>{5});
    CHECK(plan.bottleneck_length == 3);
    CHECK(plan.upsampled_lengths == std::vector<std::size_t>{5});
    CHECK(plan.output_length == 3);
    CHECK(plan.crop() == 4);
}

TEST_CASE("plan_shapes depth 0 with unit kernel is the identity length") {
    ModelConfig c = tiny();
    c.depth = 0;
    c.kernel_down = c.kernel_up = 1;
    for (std::size_t n : {1u, 7u, 100u}) {
        const auto plan = plan_shapes(c, n);
        CHECK(plan.input_length == n);
        CHECK(plan.output_length == n);
    }
}

TEST_CASE("plan_shapes is monotone and minimal") {
    ModelConfig c = tiny();
    std::size_t prev = 0;
    for (std::size_t r = 1; r <= 256; ++r) {
        const auto plan = plan_shapes(c, r);
        CHECK(plan.input_length >= prev);
        CHECK(plan.output_length >= r);
        prev = plan.input_length;
        for (std::size_t n = 1; n < plan.input_length; ++n) {
            auto t = trace_shapes(c, n);
            CHECK((!t || t->output_length < r));
        }
    }
}

TEST_CASE("plan_shapes errors") {
    ModelConfig c = tiny();
    CHECK_THROWS_AS(plan_shapes(c, 0), ShapeError);
    c.kernel_up = 4;
    CHECK_THROWS_AS(plan_shapes(c, 10), ShapeError);
    c = tiny();
    c.depth = 40;
    CHECK_THROWS_AS(plan_shapes(c, 1), ShapeError);
}

TEST_CASE("forward output shape and zero propagation") {
    WaveUNet m(tiny(), {"a", "b", "c"}, 3);
    const auto plan = plan_shapes(m.config(), 20);
    const auto y = m.forward(random_mix(plan.input_length, 1), LabelVector(3));
    CHECK(y.shape() == Shape{3, plan.output_length});
    for (auto v : y.data()) CHECK(std::abs(v) < 1);
    const auto z = m.forward(std::vector<Real>(plan.input_length, 0), LabelVector(3));
    for (auto v : z.data()) CHECK(v == 0);
    CHECK_THROWS_AS(m.forward(random_mix(plan.input_length + 1, 1), LabelVector(3)), ShapeError);
}

TEST_CASE("forward is deterministic and seeds differ") {
    WaveUNet a(tiny(), {"a", "b", "c"}, 3), b(tiny(), {"a", "b", "c"}, 3), c(tiny(), {"a", "b", "c"}, 4);
    const auto plan = plan_shapes(a.config(), 20);
    const auto x = random_mix(plan.input_length, 2);
    CHECK(same(a.forward(x, LabelVector(3)), a.forward(x, LabelVector(3))));
    CHECK(same(a.forward(x, LabelVector(3)), b.forward(x, LabelVector(3))));
    CHECK(!same(a.forward(x, LabelVector(3)), c.forward(x, LabelVector(3))));
}

TEST_CASE("unconditioned model ignores labels") {
    WaveUNet m(tiny(false), {"a", "b", "c"}, 3);
    const auto plan = plan_shapes(m.config(), 20);
    const auto x = random_mix(plan.input_length, 2);
    CHECK(same(m.forward(x, LabelVector(std::vector<std::uint8_t>{1, 1, 1})),
               m.forward(x, LabelVector(std::vector<std::uint8_t>{0, 0, 0}))));
}

TEST_CASE("conditioned model responds to labels; zero W makes it invariant") {
    WaveUNet m(tiny(true), {"a", "b", "c"}, 3);
    const auto plan = plan_shapes(m.config(), 20);
    const auto x = random_mix(plan.input_length, 2);
    const LabelVector l1(std::vector<std::uint8_t>{1, 0, 1}), l2(std::vector<std::uint8_t>{1, 1, 1});
    CHECK(!same(m.forward(x, l1), m.forward(x, l2)));
    CHECK_THROWS_AS(m.forward(x, LabelVector(2)), ShapeError);
    for (auto &w : param(m, "cond.weight").mutable_data()) w = 0;
    CHECK(same(m.forward(x, l1), m.forward(x, l2)));
}

TEST_CASE("condition_bottleneck examples") {
    Rng rng(8);
    auto z = random_tensor({2, 4}, rng);
    const LabelVector c(std::vector<std::uint8_t>{1, 0, 1});
    auto half = condition_bottleneck(z, c, Tensor::zeros({2, 3}), Tensor::zeros({2}));
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(half.data()[i] == z.data()[i] / 2);
    auto off = condition_bottleneck(z, LabelVector(3), Tensor::zeros({2, 3}), Tensor::full({2}, -60));
    for (auto v : off.data()) CHECK(std::abs(v) < 1e-25);
    // Two-channel toy: column 1 of W is nonzero, so flipping bit 1 moves the gate.
    auto w = Tensor::from({2, 3}, {0, 2, 0, 0, -1, 0});
    const LabelVector c2(std::vector<std::uint8_t>{1, 1, 1});
    auto g1 = conditioning_gate(c, w, Tensor::zeros({2}));
    auto g2 = conditioning_gate(c2, w, Tensor::zeros({2}));
    CHECK(g1.data()[0] == 0.5);
    CHECK(g2.data()[0] == doctest::Approx(1 / (1 + std::exp(-2.0))));
    CHECK(g2.data()[1] == doctest::Approx(1 / (1 + std::exp(1.0))));
    CHECK(!same(condition_bottleneck(z, c, w, Tensor::zeros({2})), condition_bottleneck(z, c2, w, Tensor::zeros({2}))));
    CHECK_THROWS_AS(condition_bottleneck(z, c, Tensor::zeros({3, 3}), Tensor::zeros({3})), ShapeError);
    CHECK_THROWS_AS(conditioning_gate(LabelVector(2), w, Tensor::zeros({2})), ShapeError);
}

TEST_CASE("conditioning gate stays strictly inside (0, 1)") {
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        LabelVector c(4);
        for (auto &b : c.bits) b = rng.uniform() < 0.5;
        auto g = conditioning_gate(c, random_tensor({5, 4}, rng, -6, 6), random_tensor({5}, rng, -6, 6));
        for (auto v : g.data()) {
            CHECK(v > 0);
            CHECK(v < 1);
        }
    }
}

TEST_CASE("gradient reaches the conditioning parameters") {
    WaveUNet m(tiny(true), {"a", "b", "c"}, 5);
    const auto plan = plan_shapes(m.config(), 20);
    const auto x = random_mix(plan.input_length, 3);
    const LabelVector labels(std::vector<std::uint8_t>{1, 0, 1});
    auto target = Tensor::zeros({3, plan.output_length});
    mse_loss(m.forward(x, labels), target).backward();
    const auto &w = param(m, "cond.weight");
    REQUIRE(w.has_grad());
    CHECK(std::any_of(w.grad().begin(), w.grad().end(), [](Real g) { return g != 0; }));
    CHECK(param(m, "cond.bias").has_grad());
}

TEST_CASE("parameter count differs only by the conditioning submodule") {
    WaveUNet off(tiny(false), {"a", "b", "c"}, 1), on(tiny(true), {"a", "b", "c"}, 1);
    const std::size_t cb = tiny().bottleneck_filters();
    CHECK(on.parameter_count() - off.parameter_count() == cb * 3 + cb);
    CHECK(on.parameter("cond.weight").shape() == Shape{cb, 3});
}

TEST_CASE("random valid configs run forward at their planned length") {
    Rng rng(12);
    for (int trial = 0; trial < 25; ++trial) {
        ModelConfig c;
        c.num_sources = testing::pick(rng, 2, 4);
        c.depth = testing::pick(rng, 1, 3);
        c.base_filters = testing::pick(rng, 1, 3);
        c.filter_growth = testing::pick(rng, 0, 2);
        c.kernel_down = 2 * testing::pick(rng, 0, 3) + 1;
        c.kernel_up = 2 * testing::pick(rng, 0, 2) + 1;
        c.conditioning_enabled = rng.uniform() < 0.5;
        std::vector<std::string> vocab;
        for (std::size_t i = 0; i < c.num_sources; ++i) vocab.push_back("i" + std::to_string(i));
        WaveUNet m(c, vocab, trial);
        const auto plan = plan_shapes(c, testing::pick(rng, 1, 40));
        const auto y = m.forward(random_mix(plan.input_length, trial), LabelVector(c.num_sources));
        CHECK(y.shape() == Shape{c.num_sources, plan.output_length});
    }
}

TEST_CASE("make_training_target places and crops sources") {
    auto specs = resolve_instruments({"bass", "clarinet", "flute", "violin"});
    const std::vector<std::string> vocab{"bass", "clarinet", "flute", "violin"};
    auto ex = generate_piece(specs, {"bass", "flute"}, 0.5, 3);
    ModelConfig c = tiny();
    c.num_sources = 4;
    const auto plan = plan_shapes(c, 50);
    const std::size_t offset = 17;
    auto t = make_training_target(ex, vocab, plan, offset);
    REQUIRE(t.shape() == Shape{4, plan.output_length});
    for (std::size_t i = 0; i < plan.output_length; ++i) {
        CHECK(t.at(0, i) == ex.sources[0].samples[offset + plan.crop() + i]);
        CHECK(t.at(1, i) == 0);
        CHECK(t.at(2, i) == ex.sources[2].samples[offset + plan.crop() + i]);
        CHECK(t.at(3, i) == 0);
    }
    CHECK_THROWS_AS(make_training_target(ex, {"bass", "clarinet", "oboe", "x"}, plan), ConfigError);
}

TEST_CASE("extract_active_sources threshold rule") {
    const std::size_t n = 800;
    std::vector<AudioTrack> out(3);
    for (auto &t : out) t.samples.assign(n, 0);
    CHECK(extract_active_sources(out, -40).empty());
    for (std::size_t i = 0; i < n; ++i)
        out[1].samples[i] = static_cast<Real>(std::sin(2 * std::numbers::pi * 100.0 * double(i) / 8000.0));
    const auto active = extract_active_sources(out, -40);
    REQUIRE(active.size() == 1);
    CHECK(active[0].slot == 1);
    CHECK(active[0].rms_dbfs == doctest::Approx(-3.0103).epsilon(1e-4));
    // A constant 0.01 track has RMS exactly -40 dBFS and is excluded.
    out[2].samples.assign(n, Real(0.01));
    CHECK(rms_dbfs(out[2].samples) == doctest::Approx(-40.0));
    CHECK(extract_active_sources(out, rms_dbfs(out[2].samples)).size() == 1);
}

TEST_CASE("model checkpoint round trip and K mismatch") {
    WaveUNet m(tiny(true), {"a", "b"}, 9);
    CHECK(m.vocabulary().size() == 3);
    const auto plan = plan_shapes(m.config(), 20);
    const auto x = random_mix(plan.input_length, 4);
    const LabelVector labels(std::vector<std::uint8_t>{1, 1, 0});
    const auto restored = WaveUNet::from_container(decode_container(encode_container(m.to_container())));
    CHECK(same(m.forward(x, labels), restored.forward(x, labels)));
    CHECK(restored.vocabulary() == m.vocabulary());

    auto c = m.to_container();
    auto meta = nlohmann::json::parse(c.metadata);
    meta["config"]["num_sources"] = 4;
    meta["vocabulary"].push_back("d");
    c.metadata = meta.dump();
    CHECK_THROWS_AS(WaveUNet::from_container(c), CheckpointError);
}

TEST_CASE("whole-track separation keeps the track length") {
    WaveUNet m(tiny(), {"a", "b", "c"}, 2);
    AudioTrack mix;
    mix.samples = random_mix(1234, 5);
    const auto out = m.separate(mix, LabelVector(3), 100);
    REQUIRE(out.size() == 3);
    for (const auto &t : out) CHECK(t.samples.size() == 1234);
}
