// wavesep: dataset generation, training, separation, NMF baseline and
// evaluation for the multi-source Wave-U-Net.

#include <CLI11.hpp>
#include <iostream>

#include "wavesep/commands.hpp"

namespace fs = std::filesystem;
using namespace wavesep;

namespace {

RunConfig load_config(const std::string &path) { return path.empty() ? RunConfig{} : load_run_config(path); }

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Multi-instrument source separation with a label-conditioned Wave-U-Net"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "wavesep 1.0");

    std::string config_path;
    bool force = false;
    auto add_common = [&](CLI::App *cmd, bool with_out = true) {
        cmd->add_option("-c,--config", config_path, "JSON run configuration (see `wavesep config --reference`)")
            ->check(CLI::ExistingFile);
        if (with_out) cmd->add_flag("--force", force, "Overwrite files in a non-empty output directory");
    };

    // generate
    auto *gen = app.add_subcommand("generate", "Render a synthetic ensemble dataset and its manifest");
    add_common(gen);
    std::string gen_out;
    std::optional<std::uint64_t> gen_seed;
    std::optional<std::size_t> gen_pieces;
    gen->add_option("-o,--out", gen_out, "Dataset directory")->required();
    gen->add_option("--seed", gen_seed, "Dataset seed (overrides data.seed)");
    gen->add_option("--n-pieces", gen_pieces, "Number of pieces (overrides data.n_pieces)");

    // train
    auto *tr = app.add_subcommand("train", "Train a model on a generated dataset");
    add_common(tr);
    std::string tr_data, tr_out, tr_conditioning, tr_resume;
    std::optional<std::uint64_t> tr_seed;
    std::optional<std::size_t> tr_steps;
    tr->add_option("-d,--data", tr_data, "Dataset directory")->required();
    tr->add_option("-o,--out", tr_out, "Run directory for checkpoints and loss.csv")->required();
    tr->add_option("--conditioning", tr_conditioning, "Label conditioning at the bottleneck")
        ->check(CLI::IsMember({"on", "off"}));
    tr->add_option("--resume", tr_resume, "Training checkpoint to continue from");
    tr->add_option("--seed", tr_seed, "Training seed (overrides train.seed)");
    tr->add_option("--steps", tr_steps, "Total step count (overrides train.max_steps)");

    // separate
    auto *sep = app.add_subcommand("separate", "Separate a WAV file or a dataset split with a trained model");
    add_common(sep);
    std::string sep_ckpt, sep_input, sep_data, sep_split = "test", sep_labels, sep_out;
    std::optional<double> sep_threshold;
    std::size_t sep_segment = 2048;
    sep->add_option("-m,--checkpoint", sep_ckpt, "Model or training checkpoint")->required();
    auto *in_opt = sep->add_option("-i,--input", sep_input, "Mixture WAV");
    auto *data_opt = sep->add_option("-d,--data", sep_data, "Dataset directory");
    in_opt->excludes(data_opt);
    sep->add_option("--split", sep_split, "Dataset split (train, val, test, all)");
    sep->add_option("--labels", sep_labels, "Active instruments: bit string (0101) or names (bass,flute)");
    sep->add_option("--threshold-db", sep_threshold, "Active-slot RMS threshold in dBFS (overrides metrics.threshold_db)");
    sep->add_option("--segment-output", sep_segment, "Output samples per inference segment");
    sep->add_option("-o,--out", sep_out, "Output directory")->required();

    // evaluate
    auto *ev = app.add_subcommand("evaluate", "Score estimates against dataset references (SDR/SIR/SAR)");
    add_common(ev);
    std::string ev_est, ev_data, ev_split = "test", ev_out, ev_method;
    std::vector<std::string> ev_groups;
    ev->add_option("-e,--estimates", ev_est, "Directory holding estimates.json")->required();
    ev->add_option("-d,--data", ev_data, "Dataset directory")->required();
    ev->add_option("--split", ev_split, "Dataset split");
    ev->add_option("--group-by", ev_groups, "overall, instrument and/or n_active (default: all three)")
        ->check(CLI::IsMember({"overall", "instrument", "n_active"}));
    ev->add_option("--method", ev_method, "Method name in the tables (default: from estimates.json)");
    ev->add_option("-o,--out", ev_out, "Report directory")->required();

    // bank
    auto *bk = app.add_subcommand("bank", "Learn NMF timbre templates from synthetic isolated notes");
    add_common(bk);
    std::string bk_out;
    bk->add_option("-o,--out", bk_out, "Output directory for templates.wsc")->required();

    // baseline
    auto *bl = app.add_subcommand("baseline", "Informed NMF separation of a dataset split");
    add_common(bl);
    std::string bl_bank, bl_data, bl_split = "test", bl_out;
    bl->add_option("-b,--bank", bl_bank, "Template bank (templates.wsc)")->required();
    bl->add_option("-d,--data", bl_data, "Dataset directory")->required();
    bl->add_option("--split", bl_split, "Dataset split");
    bl->add_option("-o,--out", bl_out, "Output directory")->required();

    // config
    auto *cf = app.add_subcommand("config", "Print the configuration reference or defaults");
    bool cf_reference = false, cf_defaults = false;
    std::string cf_check;
    cf->add_flag("--reference", cf_reference, "List every configuration key");
    cf->add_flag("--defaults", cf_defaults, "Print the default configuration as JSON");
    cf->add_option("--check", cf_check, "Validate a configuration file and print it resolved");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        std::cerr << "error[config]: " << e.what() << "\n";
        return cli::exit_code(cli::ErrorCategory::kConfig);
    }

    try {
        auto &log = std::cerr;
        if (*gen) {
            cli::GenerateOptions o{load_config(config_path), gen_out, force};
            if (gen_seed) o.config.data.seed = *gen_seed;
            if (gen_pieces) o.config.data.n_pieces = *gen_pieces;
            cli::cmd_generate(o, log);
        } else if (*tr) {
            cli::TrainOptions o{load_config(config_path), tr_data, tr_out, std::nullopt, force};
            if (!tr_conditioning.empty()) o.config.train.conditioning_enabled = tr_conditioning == "on";
            if (tr_seed) o.config.train.seed = *tr_seed;
            if (tr_steps) o.config.train.max_steps = *tr_steps;
            if (!tr_resume.empty()) o.resume = fs::path(tr_resume);
            const auto summary = cli::cmd_train(o, log);
            std::cout << summary.checkpoint.string() << "\n";
        } else if (*sep) {
            cli::SeparateOptions o;
            o.config = load_config(config_path);
            if (sep_threshold) o.config.metrics.threshold_db = *sep_threshold;
            o.checkpoint = sep_ckpt;
            if (!sep_input.empty()) o.input_wav = fs::path(sep_input);
            if (!sep_data.empty()) o.data_dir = fs::path(sep_data);
            o.split = sep_split;
            if (!sep_labels.empty()) o.labels = sep_labels;
            o.out_dir = sep_out;
            o.segment_output = sep_segment;
            o.force = force;
            const auto report = cli::cmd_separate(o, log);
            for (const auto &piece : report.at("pieces"))
                for (const auto &a : piece.at("active"))
                    std::cout << piece.at("piece_id").get<std::string>() << "\t" << a.at("instrument").get<std::string>()
                              << "\t" << a.at("rms_dbfs").get<double>() << "\n";
        } else if (*ev) {
            cli::EvaluateOptions o;
            o.config = load_config(config_path);
            o.estimates_dir = ev_est;
            o.data_dir = ev_data;
            o.split = ev_split;
            if (!ev_groups.empty()) {
                o.group_by.clear();
                for (const auto &g : ev_groups) o.group_by.push_back(parse_group_by(g));
            }
            if (!ev_method.empty()) o.method = ev_method;
            o.out_dir = ev_out;
            o.force = force;
            const auto report = cli::cmd_evaluate(o, log);
            for (const auto &[g, rows] : report.tables) std::cout << aggregate_csv(rows, g);
        } else if (*bk) {
            cli::cmd_bank({load_config(config_path), bk_out, force}, log);
        } else if (*bl) {
            cli::BaselineOptions o{load_config(config_path), bl_bank, bl_data, bl_split, bl_out, force};
            cli::cmd_baseline(o, log);
        } else if (*cf) {
            if (!cf_check.empty()) {
                std::cout << to_json(load_run_config(cf_check)).dump(2) << "\n";
            } else if (cf_defaults) {
                std::cout << to_json(RunConfig{}).dump(2) << "\n";
            } else {
                (void)cf_reference;
                std::cout << config_reference();
            }
        }
    } catch (const std::exception &e) {
        const auto category = cli::classify(e);
        std::cerr << "error[" << cli::to_string(category) << "]: " << e.what() << "\n";
        return cli::exit_code(category);
    }
    return 0;
}
