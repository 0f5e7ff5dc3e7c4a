#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "wavesep/trainer.hpp"

using namespace wavesep;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kVocab{"bass", "flute"};

ModelConfig small_config(bool conditioned = false) {
    ModelConfig c;
    c.num_sources = 2;
    c.depth = 2;
    c.base_filters = 4;
    c.filter_growth = 4;
    c.kernel_down = 5;
    c.kernel_up = 3;
    c.conditioning_enabled = conditioned;
    return c;
}

std::vector<Segment> make_segments(const ModelConfig &c, std::vector<std::string> active, std::uint64_t seed,
                                   double seconds = 0.5) {
    const auto specs = resolve_instruments(kVocab);
    const auto ex = generate_piece(specs, active, seconds, seed);
    const auto plan = plan_shapes(c, 64);
    return segment_examples(ex, kVocab, plan, plan.output_length);
}

TrainConfig quick(std::size_t steps) {
    TrainConfig t;
    t.lr = 1e-3;
    t.batch_size = 2;
    t.max_steps = steps;
    t.validation_interval = 5;
    t.checkpoint_dir = "";
    t.seed = 11;
    return t;
}

std::vector<std::vector<Real>> snapshot(const WaveUNet &m) {
    std::vector<std::vector<Real>> out;
    for (const auto &p : m.parameters()) out.emplace_back(p.data().begin(), p.data().end());
    return out;
}

}  // namespace

TEST_CASE("loss log csv round trip") {
    std::vector<LossRow> rows{{1, 0.5, std::nullopt, std::nullopt, std::nullopt}, {2, 0.25, 0.3, 0.01, 0.6}};
    const auto csv = loss_log_csv(rows);
    CHECK(csv.rfind("step,train_loss,val_loss,silent_slot_loss,active_slot_loss\n", 0) == 0);
    const auto back = parse_loss_log(csv);
    REQUIRE(back.size() == 2);
    CHECK(back[0].step == 1);
    CHECK(!back[0].val_loss);
    CHECK(back[1].train_loss == 0.25);
    CHECK(*back[1].val_loss == 0.3);
    CHECK(*back[1].silent_slot_loss == 0.01);
    CHECK_THROWS_AS(parse_loss_log("nonsense\n1,2\n"), TrainingError);
}

TEST_CASE("a tiny network overfits one batch") {
    const auto c = small_config();
    auto segs = make_segments(c, {"bass", "flute"}, 3);
    segs.resize(2);
    TrainingState state(WaveUNet(c, kVocab, 1));
    auto cfg = quick(500);
    cfg.validation_interval = 500;
    const auto result = train(state, segs, segs, cfg);
    REQUIRE(result.log.size() == 500);
    CHECK(result.log.back().train_loss < 0.1 * result.log.front().train_loss);
    CHECK(state.step() == 500);
}

TEST_CASE("lr = 0 leaves parameters unchanged") {
    const auto c = small_config();
    const auto segs = make_segments(c, {"bass"}, 4);
    TrainingState state(WaveUNet(c, kVocab, 2));
    const auto before = snapshot(state.model);
    auto cfg = quick(10);
    cfg.lr = 0;
    train(state, segs, segs, cfg);
    CHECK(snapshot(state.model) == before);
}

TEST_CASE("training is deterministic in the seed") {
    const auto c = small_config();
    const auto segs = make_segments(c, {"bass", "flute"}, 5);
    auto run = [&](std::uint64_t seed) {
        TrainingState s(WaveUNet(c, kVocab, 3));
        auto cfg = quick(20);
        cfg.seed = seed;
        std::vector<double> curve;
        for (const auto &r : train(s, segs, segs, cfg).log) curve.push_back(r.train_loss);
        return std::make_pair(curve, snapshot(s.model));
    };
    const auto a = run(1), b = run(1), d = run(2);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(a.first != d.first);
}

TEST_CASE("validation is idempotent and nonnegative") {
    const auto c = small_config(true);
    const auto segs = make_segments(c, {"flute"}, 6);
    WaveUNet m(c, kVocab, 4);
    const auto a = validate(m, segs), b = validate(m, segs);
    CHECK(a.mean_loss == b.mean_loss);
    CHECK(a.mean_loss >= 0);
    REQUIRE(a.per_slot_loss.size() == 2);
    for (double v : a.per_slot_loss) CHECK(v >= 0);
    REQUIRE(a.silent_slot_loss);
    REQUIRE(a.active_slot_loss);

    // The bass slot is silent: its loss is the mean squared network output there.
    double ms = 0;
    std::size_t n = 0;
    for (const auto &s : segs) {
        const auto y = m.forward(s.input, s.labels);
        for (std::size_t t = 0; t < y.dim(1); ++t, ++n) ms += double(y.at(0, t)) * double(y.at(0, t));
    }
    CHECK(*a.silent_slot_loss == doctest::Approx(ms / double(n)).epsilon(1e-12));
    CHECK(a.per_slot_loss[0] == doctest::Approx(ms / double(n)).epsilon(1e-12));

    ModelConfig k3 = small_config();
    k3.num_sources = 3;
    CHECK_THROWS_AS(validate(WaveUNet(k3, {"a", "b", "c"}, 1), segs), TrainingError);
}

TEST_CASE("masking silent slots changes the gradient") {
    const auto c = small_config();
    const auto segs = make_segments(c, {"bass"}, 7);
    WaveUNet m(c, kVocab, 5);
    std::vector<const Segment *> batch{&segs[0]};
    auto grad_of = [&](bool include) {
        for (auto &p : m.parameters()) p.zero_grad();
        batch_loss(m, batch, include).backward();
        std::vector<Real> g;
        for (const auto &p : m.parameters())
            if (p.has_grad()) g.insert(g.end(), p.grad().begin(), p.grad().end());
        return g;
    };
    const auto full = grad_of(true), masked = grad_of(false);
    CHECK(full != masked);
    const auto masked_loss = batch_loss(m, batch, false).item();
    const auto full_loss = batch_loss(m, batch, true).item();
    CHECK(masked_loss <= full_loss);
}

TEST_CASE("checkpoint round trip reproduces validation loss bit for bit") {
    const auto c = small_config(true);
    const auto segs = make_segments(c, {"bass", "flute"}, 8);
    TrainingState state(WaveUNet(c, kVocab, 6));
    train(state, segs, segs, quick(5));
    const auto path = fs::temp_directory_path() / "wavesep_trainer_ckpt.wsc";
    save_training_checkpoint(path, state);
    const auto loaded = load_training_checkpoint(path);
    CHECK(loaded.step() == 5);
    CHECK(validate(loaded.model, segs).mean_loss == validate(state.model, segs).mean_loss);
    CHECK(loaded.adam.m == state.adam.m);
    CHECK(loaded.adam.v == state.adam.v);
    fs::remove(path);
}

TEST_CASE("resume equals an uninterrupted run") {
    const auto c = small_config();
    const auto segs = make_segments(c, {"bass", "flute"}, 9, 1.0);
    TrainingState full(WaveUNet(c, kVocab, 7));
    const auto log_full = train(full, segs, segs, quick(30)).log;

    TrainingState first(WaveUNet(c, kVocab, 7));
    auto log_a = train(first, segs, segs, quick(13)).log;
    const auto path = fs::temp_directory_path() / "wavesep_trainer_resume.wsc";
    save_training_checkpoint(path, first);
    auto second = load_training_checkpoint(path);
    const auto log_b = train(second, segs, segs, quick(30)).log;
    fs::remove(path);

    REQUIRE(log_b.size() == 17);
    CHECK(log_b.front().step == 14);
    CHECK(snapshot(second.model) == snapshot(full.model));
    for (std::size_t i = 0; i < log_b.size(); ++i) CHECK(log_b[i].train_loss == log_full[13 + i].train_loss);
}

TEST_CASE("non-finite loss aborts with context") {
    const auto c = small_config();
    auto segs = make_segments(c, {"bass"}, 10);
    for (auto &s : segs) s.input[3] = std::numeric_limits<Real>::quiet_NaN();
    TrainingState state(WaveUNet(c, kVocab, 8));
    try {
        train(state, segs, segs, quick(3));
        FAIL("expected TrainingError");
    } catch (const TrainingError &e) {
        const std::string msg = e.what();
        CHECK(msg.find("step 1") != std::string::npos);
        CHECK(msg.find(segs[0].piece_id) != std::string::npos);
    }
}

TEST_CASE("train rejects mismatched inputs") {
    const auto c = small_config();
    const auto segs = make_segments(c, {"bass"}, 11);
    ModelConfig k3 = small_config();
    k3.num_sources = 3;
    TrainingState state(WaveUNet(k3, {"a", "b", "c"}, 1));
    CHECK_THROWS(train(state, segs, segs, quick(2)));
    TrainingState ok(WaveUNet(c, kVocab, 1));
    CHECK_THROWS(train(ok, std::span<const Segment>{}, segs, quick(2)));
}
