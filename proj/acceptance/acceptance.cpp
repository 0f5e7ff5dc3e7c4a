// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "support/cli.hpp"
#include "support/gradcheck.hpp"
#include "support/metrics_oracle.hpp"
#include "support/nmf_fixture.hpp"
#include "wavesep/commands.hpp"
#include "wavesep/trainer.hpp"

using namespace wavesep;
using namespace wavesep::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

struct Context {
    fs::path work;
    std::ostream *log = &std::cerr;
};

// ---------------------------------------------------------------------------

Outcome gradients(Context &) {
    Rng rng(20240601);
    double worst = 0;
    std::string worst_op;
    std::size_t n_ops = 0;
    for (const auto &c : op_cases()) {
        ++n_ops;
        for (int i = 0; i < 100; ++i) {
            const double e = c.run(rng);
            if (!(e <= worst)) {
                worst = e;
                worst_op = c.name;
            }
        }
    }
    return {worst <= 1e-5, fmt("%zu ops x 100 instances, worst relative error %.3g (%s)", n_ops, worst, worst_op.c_str())};
}

Outcome shape_laws(Context &) {
    Rng rng(4242);
    std::size_t failures = 0;
    std::string first;
    auto fail = [&](const std::string &what) {
        if (failures++ == 0) first = what;
    };
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t len = pick(rng, 2, 400);
        const std::size_t k = pick(rng, 1, std::min<std::size_t>(len, 31));
        const std::size_t depth = pick(rng, 1, 6);
        const auto tag = fmt("L=%zu k=%zu depth=%zu", len, k, depth);

        auto x = random_tensor({pick(rng, 1, 2), len}, rng, -1, 1, false);
        if (conv1d_valid(x, random_tensor({1, x.dim(0), k}, rng, -1, 1, false), Tensor::zeros({1})).dim(1) !=
            len - k + 1)
            fail("conv " + tag);
        if (decimate2(x).dim(1) != (len + 1) / 2) fail("decimate " + tag);
        if (lininterp_upsample2(x).dim(1) != 2 * len - 1) fail("upsample " + tag);
        const std::size_t shorter = len - 2 * pick(rng, 0, (len - 1) / 2);
        if (crop_concat(x, random_tensor({1, shorter}, rng, -1, 1, false)).shape() != Shape{x.dim(0) + 1, shorter})
            fail("crop " + tag);

        ModelConfig c;
        c.num_sources = 2;
        c.depth = depth;
        c.base_filters = 1;
        c.filter_growth = 1;
        c.kernel_down = 2 * pick(rng, 0, 7) + 1;
        c.kernel_up = 2 * pick(rng, 0, 3) + 1;
        try {
            const auto plan = plan_shapes(c, len);
            const auto traced = trace_shapes(c, plan.input_length);
            if (!traced || traced->output_length != plan.output_length || plan.output_length < len)
                fail("plan validity " + tag);
            for (std::size_t n = 1; n < plan.input_length; ++n) {
                const auto t = trace_shapes(c, n);
                if (t && t->output_length >= len) {
                    fail("plan minimality " + tag);
                    break;
                }
            }
            if (plan.encoder_lengths.size() != depth || plan.decoder_lengths.size() != depth)
                fail("plan depth " + tag);
            if (trial % 10 == 0) {
                WaveUNet m(c, {"a", "b"}, static_cast<std::uint64_t>(trial));
                std::vector<Real> mix(plan.input_length, Real(0.1));
                if (m.forward(mix, LabelVector(2)).shape() != Shape{2, plan.output_length}) fail("forward " + tag);
            }
        } catch (const std::exception &e) {
            fail("plan threw for " + tag + ": " + e.what());
        }
    }
    return {failures == 0, failures == 0 ? "1000 random configurations, no violations"
                                         : fmt("%zu violations, first: %s", failures, first.c_str())};
}

Outcome metric_oracle(Context &) {
    Rng rng(777);
    double worst = 0;
    for (int i = 0; i < 200; ++i) worst = std::max(worst, oracle_disagreement(random_metric_case(rng)));
    const auto c = twenty_db_case();
    const auto s = sdr_sir_sar(decompose(c.estimate, spans(c.refs), 0));
    const double err20 = std::max(std::abs(s.sir_db - 20), std::abs(s.sdr_db - 20));
    return {worst <= 1e-9 && err20 <= 1e-9,
            fmt("200 random cases, worst disagreement %.3g; 20 dB case off by %.3g dB", worst, err20)};
}

Outcome overfit(Context &) {
    ModelConfig c;
    c.num_sources = 2;
    c.depth = 4;
    const std::vector<std::string> vocab{"bass", "flute"};
    const auto ex = generate_piece(resolve_instruments(vocab), vocab, 3.0, 99);
    const auto plan = plan_shapes(c, TrainConfig{}.segment_output);
    auto segs = segment_examples(ex, vocab, plan, plan.output_length);
    if (segs.size() < 4) return {false, "piece too short for one batch"};
    segs.resize(4);

    TrainConfig t;
    t.lr = 1e-4;
    t.batch_size = 4;
    t.max_steps = 500;
    t.checkpoint_dir = "";
    t.validation_interval = 0;
    TrainingState state(WaveUNet(c, vocab, 5));
    std::vector<const Segment *> batch;
    for (const auto &s : segs) batch.push_back(&s);
    auto mse = [&] {
        NoGradGuard g;
        return batch_loss(state.model, batch).item();
    };
    const double initial = mse();
    train(state, segs, {}, t);
    const double final_mse = mse();
    return {final_mse < 0.1 * initial,
            fmt("depth 4, K=2, %zu params: MSE %.4g -> %.4g (%.1f%% of initial)", state.model.parameter_count(),
                initial, final_mse, 100 * final_mse / initial)};
}

// ---------------------------------------------------------------------------
// Desk-scale runs shared by the separation, trend and quietness criteria.

RunConfig desk_config() {
    RunConfig c;
    c.model.depth = 4;
    c.model.base_filters = 8;
    c.model.filter_growth = 8;
    c.train.batch_size = 4;
    c.train.max_steps = 20000;
    c.train.validation_interval = 2000;
    return c;
}

fs::path ensure_dataset(Context &ctx, const std::string &name, const RunConfig &config) {
    const auto dir = ctx.work / name;
    if (!fs::exists(dir / "manifest.json")) cli::cmd_generate({config, dir, true}, *ctx.log);
    return dir;
}

// Trains, separates the test split and evaluates; returns the records.
cli::EvaluationReport run_variant(Context &ctx, const fs::path &data, RunConfig config, bool conditioned,
                                  std::uint64_t seed, const std::string &tag) {
    config.train.conditioning_enabled = conditioned;
    config.train.seed = seed;
    const auto root = ctx.work / tag;
    const auto start = std::chrono::steady_clock::now();
    *ctx.log << "[" << tag << "] training " << (conditioned ? "conditioned" : "unconditioned") << " model, seed "
             << seed << "\n";
    const auto summary = cli::cmd_train({config, data, root / "run", std::nullopt, true}, *ctx.log);
    cli::SeparateOptions sep;
    sep.config = config;
    sep.checkpoint = summary.checkpoint;
    sep.data_dir = data;
    sep.out_dir = root / "separated";
    sep.force = true;
    std::ostringstream quiet;
    cli::cmd_separate(sep, quiet);
    cli::EvaluateOptions ev;
    ev.config = config;
    ev.estimates_dir = sep.out_dir;
    ev.data_dir = data;
    ev.out_dir = root / "evaluation";
    ev.force = true;
    auto report = cli::cmd_evaluate(ev, quiet);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    *ctx.log << "[" << tag << "] done in " << fmt("%.0f", secs) << " s\n";
    return report;
}

double mean_sdr(const std::vector<MetricsRecord> &records, std::optional<std::size_t> n_active = std::nullopt) {
    double s = 0;
    std::size_t n = 0;
    for (const auto &r : records)
        if (!r.absent() && (!n_active || r.n_active == *n_active)) {
            s += *r.sdr_db;
            ++n;
        }
    return n ? s / double(n) : std::nan("");
}

Outcome separation(Context &ctx) {
    const auto config = desk_config();
    const auto data = ensure_dataset(ctx, "desk40", config);
    const auto report = run_variant(ctx, data, config, false, 0, "separation");
    const double sdr = mean_sdr(report.records);
    return {sdr > 0, fmt("K=4, %zu pieces, %zu steps: mean test SDR %.2f dB over %zu active sources (2/3/4 sources: "
                         "%.2f / %.2f / %.2f dB)",
                         config.data.n_pieces, config.train.max_steps, sdr,
                         std::size_t(std::count_if(report.records.begin(), report.records.end(),
                                                   [](const MetricsRecord &r) { return !r.absent(); })),
                         mean_sdr(report.records, 2), mean_sdr(report.records, 3), mean_sdr(report.records, 4))};
}

// The conditioning trend and quietness criteria share these runs.
struct TrendRuns {
    std::vector<cli::EvaluationReport> unconditioned, conditioned;
};

RunConfig trend_config() {
    auto c = desk_config();
    // A larger test split steadies the per-ensemble-size means.
    c.data.n_pieces = 100;
    c.data.test_fraction = 0.6;
    return c;
}

const TrendRuns &trend_runs(Context &ctx) {
    static std::optional<TrendRuns> runs;
    if (!runs) {
        const auto config = trend_config();
        const auto data = ensure_dataset(ctx, "desk100", config);
        runs.emplace();
        for (std::uint64_t seed : {1, 2, 3}) {
            runs->unconditioned.push_back(run_variant(ctx, data, config, false, seed, fmt("trend_off_%llu", (unsigned long long)seed)));
            runs->conditioned.push_back(run_variant(ctx, data, config, true, seed, fmt("trend_on_%llu", (unsigned long long)seed)));
        }
    }
    return *runs;
}

Outcome conditioning_trend(Context &ctx) {
    const auto &runs = trend_runs(ctx);
    int wins = 0;
    std::string detail;
    for (std::size_t i = 0; i < 3; ++i) {
        const auto &off = runs.unconditioned[i].records, &on = runs.conditioned[i].records;
        const double d_off = mean_sdr(off, 2) - mean_sdr(off, 4);
        const double d_on = mean_sdr(on, 2) - mean_sdr(on, 4);
        if (d_on < d_off) ++wins;
        detail += fmt("%sseed %zu: drop %.2f dB conditioned vs %.2f dB unconditioned", i ? "; " : "", i + 1, d_on, d_off);
    }
    return {wins >= 2, fmt("%d of 3 seeds favour conditioning (", wins) + detail + ")"};
}

Outcome absent_quietness(Context &ctx) {
    const auto &records = trend_runs(ctx).conditioned.front().records;
    double absent = 0, active = 0;
    std::size_t na = 0, nb = 0;
    for (const auto &r : records) {
        if (r.absent()) {
            absent += r.est_rms_dbfs;
            ++na;
        } else {
            active += r.est_rms_dbfs;
            ++nb;
        }
    }
    if (na == 0 || nb == 0) return {false, "test split lacks absent or active slots"};
    absent /= double(na);
    active /= double(nb);
    return {absent <= active - 10,
            fmt("conditioned model (seed 1): absent slots %.2f dBFS (%zu), active slots %.2f dBFS (%zu), gap %.2f dB",
                absent, na, active, nb, active - absent)};
}

// ---------------------------------------------------------------------------

Outcome nmf_baseline(Context &ctx) {
    auto config = desk_config();
    const auto data = ensure_dataset(ctx, "desk40", config);
    std::ostringstream quiet;
    cli::cmd_bank({config, ctx.work / "nmf_bank", true}, quiet);

    // Template-learning objectives, one trajectory per instrument.
    std::map<std::string, std::vector<double>> objectives;
    {
        std::istringstream csv(slurp(ctx.work / "nmf_bank/objectives.csv"));
        std::string line;
        std::getline(csv, line);
        while (std::getline(csv, line)) {
            const auto a = line.find(','), b = line.rfind(',');
            objectives[line.substr(0, a)].push_back(std::stod(line.substr(b + 1)));
        }
    }
    std::size_t runs = 0, bad_runs = 0;
    for (const auto &[_, obj] : objectives) {
        ++runs;
        if (!monotone_nonincreasing(obj)) ++bad_runs;
    }

    cli::BaselineOptions bo;
    bo.config = config;
    bo.bank = ctx.work / "nmf_bank/templates.wsc";
    bo.data_dir = data;
    bo.out_dir = ctx.work / "nmf_baseline";
    bo.force = true;
    const auto report = cli::cmd_baseline(bo, quiet);
    for (const auto &p : report.at("pieces")) {
        ++runs;
        const double scale = std::max(1.0, std::abs(p.at("kl_initial").get<double>()));
        if (p.at("max_kl_increase").get<double>() > 1e-9 * scale) ++bad_runs;
    }

    const auto fixture = disjoint_case();
    for (const auto &[_, obj] : fixture.template_objectives) {
        ++runs;
        if (!monotone_nonincreasing(obj)) ++bad_runs;
    }
    const auto sep = separate_nmf(fixture.mix, fixture.bank, {"odd", "even"}, config.nmf.separation_iterations);
    ++runs;
    if (!monotone_nonincreasing(sep.objective)) ++bad_runs;
    const double band_a = in_band_fraction(sep.sources[0], fixture.refs[0], fixture.refs[1]);
    const double band_b = in_band_fraction(sep.sources[1], fixture.refs[1], fixture.refs[0]);

    cli::EvaluateOptions ev;
    ev.config = config;
    ev.estimates_dir = bo.out_dir;
    ev.data_dir = data;
    ev.out_dir = ctx.work / "nmf_evaluation";
    ev.force = true;
    const auto eval = cli::cmd_evaluate(ev, quiet);
    bool tables_ok = eval.method == "nmf" && eval.tables.size() == 3;
    std::string overall;
    for (const auto &[g, rows] : eval.tables) {
        if (g == GroupBy::kOverall) {
            tables_ok = tables_ok && rows.size() == 1 && rows[0].sdr_db.has_value();
            if (!rows.empty() && rows[0].sdr_db) overall = fmt("%.2f", *rows[0].sdr_db);
        }
        if (g == GroupBy::kInstrument) tables_ok = tables_ok && rows.size() == config.data.vocabulary.size();
        if (g == GroupBy::kNActive) tables_ok = tables_ok && rows.size() == config.data.ensemble_sizes.size();
    }
    for (const char *f : {"aggregate_overall.csv", "aggregate_instrument.csv", "aggregate_n_active.csv"})
        tables_ok = tables_ok && fs::exists(ev.out_dir / f);

    const bool pass = bad_runs == 0 && band_a >= 0.9 && band_b >= 0.9 && tables_ok;
    return {pass, fmt("KL monotone on %zu/%zu runs; disjoint mixture in-band energy %.1f%% / %.1f%%; evaluation "
                      "tables %s (overall SDR %s dB)",
                      runs - bad_runs, runs, 100 * band_a, 100 * band_b, tables_ok ? "complete" : "INCOMPLETE",
                      overall.empty() ? "n/a" : overall.c_str())};
}

Outcome determinism(Context &ctx) {
    const auto dir = ctx.work / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_file(dir / "cfg.json", R"({
  "data": {"n_pieces": 10, "min_duration_s": 1.0, "max_duration_s": 3.0, "seed": 5},
  "model": {"depth": 3, "base_filters": 6, "filter_growth": 6},
  "train": {"batch_size": 4, "max_steps": 300, "validation_interval": 50, "seed": 9}
})");
    auto q = [&](const std::string &rel) { return "\"" + (dir / rel).string() + "\""; };
    const std::string c = " -c " + q("cfg.json");
    std::vector<std::string> problems;
    for (const char *r : {"a", "b"}) {
        const std::string p(r);
        const std::vector<std::string> steps{
            "generate" + c + " -o " + q(p + "/data"),
            "train" + c + " -d " + q(p + "/data") + " -o " + q(p + "/run"),
            "separate" + c + " -m " + q(p + "/run/checkpoint.wsc") + " -d " + q(p + "/data") + " -o " + q(p + "/sep"),
            "evaluate" + c + " -e " + q(p + "/sep") + " -d " + q(p + "/data") + " -o " + q(p + "/eval")};
        for (const auto &s : steps) {
            const auto res = run_cli(s, dir);
            if (res.exit_code != 0) problems.push_back("'" + s.substr(0, s.find(' ')) + "' exited " + std::to_string(res.exit_code) + ": " + res.err);
        }
    }
    std::size_t compared = 0;
    auto same = [&](const std::string &rel) {
        ++compared;
        const auto a = dir / "a" / rel, b = dir / "b" / rel;
        if (!fs::exists(a) || slurp(a) != slurp(b)) problems.push_back(rel + " differs");
    };
    same("data/manifest.json");
    if (fs::exists(dir / "a/data/manifest.json")) {
        const auto m = load_manifest(dir / "a/data/manifest.json");
        for (const auto &p : m.pieces) {
            same("data/" + p.mix_path);
            for (const auto &s : p.source_paths) same("data/" + s);
        }
    }
    same("run/loss.csv");
    same("run/checkpoint.wsc");
    same("eval/records.csv");
    same("eval/aggregates.json");
    return {problems.empty(), problems.empty() ? fmt("%zu artifacts bit-identical across two full CLI runs", compared)
                                               : fmt("%zu problem(s), first: ", problems.size()) + problems.front()};
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Acceptance suite: one PASS/FAIL line per criterion"};
    std::vector<int> only;
    std::string work = "acceptance_work";
    bool verbose = false;
    app.add_option("--only", only, "Run only these criteria (1-9)")->check(CLI::Range(1, 9));
    app.add_option("--work", work, "Scratch directory for datasets and runs");
    app.add_flag("-v,--verbose", verbose, "Show training progress");
    CLI11_PARSE(app, argc, argv);

    Context ctx;
    ctx.work = fs::absolute(work);
    fs::create_directories(ctx.work);
    std::ostringstream sink;
    if (!verbose) ctx.log = &sink;

    const std::vector<std::pair<std::string, std::function<Outcome(Context &)>>> criteria{
        {"gradient correctness", gradients},
        {"shape laws", shape_laws},
        {"metric oracle", metric_oracle},
        {"overfit smoke", overfit},
        {"desk-scale separation", separation},
        {"conditioning trend", conditioning_trend},
        {"absent-source quietness", absent_quietness},
        {"nmf baseline sanity", nmf_baseline},
        {"determinism", determinism},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second(ctx);
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail
                  << fmt(" (%.1f s)", secs) << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
