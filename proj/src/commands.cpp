#include "wavesep/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "wavesep/checkpoint.hpp"
#include "wavesep/model.hpp"
#include "wavesep/stft.hpp"

namespace wavesep::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char *kEstimatesFormat = "wavesep-estimates";
constexpr double kReportFloorDb = -200.0;

void write_text(const fs::path &path, const std::string &text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << text;
}

std::string read_text(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

json read_json(const fs::path &path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception &e) {
        throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

Manifest load_dataset(const fs::path &dir) {
    const auto path = dir / "manifest.json";
    if (!fs::exists(path)) throw DataError("no dataset at '" + dir.string() + "' (manifest.json missing)");
    try {
        return load_manifest(path);
    } catch (const ConfigError &e) {
        throw DataError(e.what());
    }
}

std::vector<const ManifestEntry *> pieces_of(const Manifest &m, const std::string &split) {
    if (split != "all" && split != "train" && split != "val" && split != "test")
        throw ConfigError("unknown split '" + split + "' (expected train, val, test or all)");
    auto pieces = m.split(split);
    if (pieces.empty()) throw DataError("dataset has no pieces in split '" + split + "'");
    return pieces;
}

double report_db(double db) { return std::max(kReportFloorDb, db); }

// Slot names can carry characters unsuitable for file names ("<unused:2>").
std::string file_stem(const std::string &slot) {
    std::string out;
    for (char c : slot) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')
            out += c;
        else if (!out.empty() && out.back() != '_')
            out += '_';
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out.empty() ? "slot" : out;
}

json estimates_index(const std::string &method, const std::vector<std::string> &slots) {
    return {{"format", kEstimatesFormat}, {"version", 1}, {"method", method}, {"slots", slots},
            {"pieces", json::array()}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Errors and shared plumbing

ErrorCategory classify(const std::exception &e) {
    if (dynamic_cast<const ConfigError *>(&e)) return ErrorCategory::kConfig;
    if (dynamic_cast<const DataError *>(&e) || dynamic_cast<const WavError *>(&e) ||
        dynamic_cast<const MetricsError *>(&e) || dynamic_cast<const StftError *>(&e))
        return ErrorCategory::kData;
    if (dynamic_cast<const CheckpointError *>(&e) || dynamic_cast<const TrainingError *>(&e) ||
        dynamic_cast<const ShapeError *>(&e))
        return ErrorCategory::kModel;
    return ErrorCategory::kOther;
}

std::string to_string(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::kConfig:
            return "config";
        case ErrorCategory::kData:
            return "data";
        case ErrorCategory::kModel:
            return "model";
        case ErrorCategory::kOther:
            break;
    }
    return "internal";
}

int exit_code(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::kConfig:
            return 2;
        case ErrorCategory::kData:
            return 3;
        case ErrorCategory::kModel:
            return 4;
        case ErrorCategory::kOther:
            break;
    }
    return 1;
}

void prepare_output_dir(const fs::path &dir, bool force) {
    if (dir.empty()) throw ConfigError("an output directory is required");
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw ConfigError("output path '" + dir.string() + "' is not a directory");
        if (!fs::is_empty(dir) && !force)
            throw ConfigError("output directory '" + dir.string() + "' is not empty (use --force to overwrite)");
    }
    fs::create_directories(dir);
}

void write_snapshot(const fs::path &dir, const RunConfig &config, const json &run) {
    write_text(dir / "resolved_config.json", to_json(config).dump(2) + "\n");
    write_text(dir / "run.json", run.dump(2) + "\n");
}

LabelVector parse_labels(const std::string &text, const std::vector<std::string> &vocabulary) {
    const bool bitstring =
        !text.empty() && std::all_of(text.begin(), text.end(), [](char c) { return c == '0' || c == '1'; });
    LabelVector labels(vocabulary.size());
    if (bitstring) {
        if (text.size() != vocabulary.size())
            throw ConfigError("label string '" + text + "' has " + std::to_string(text.size()) +
                              " bits, the model has K = " + std::to_string(vocabulary.size()));
        for (std::size_t i = 0; i < text.size(); ++i) labels.bits[i] = text[i] == '1';
        return labels;
    }
    std::stringstream ss(text);
    std::string name;
    while (std::getline(ss, name, ',')) {
        if (name.empty()) continue;
        auto it = std::find(vocabulary.begin(), vocabulary.end(), name);
        if (it == vocabulary.end()) throw ConfigError("label names unknown instrument '" + name + "'");
        labels.bits[static_cast<std::size_t>(it - vocabulary.begin())] = 1;
    }
    if (labels.count() == 0) throw ConfigError("labels '" + text + "' select no instrument");
    return labels;
}

// ---------------------------------------------------------------------------
// generate

Manifest cmd_generate(const GenerateOptions &options, std::ostream &log) {
    auto manifest = plan_dataset(options.config.data);
    prepare_output_dir(options.out_dir, options.force);
    for (auto &entry : manifest.pieces) {
        const auto ex = render_entry(manifest, entry);
        write_wav(ex.mix, options.out_dir / entry.mix_path);
        for (std::size_t i = 0; i < entry.instruments.size(); ++i) {
            const auto slot = static_cast<std::size_t>(
                std::find(ex.vocabulary.begin(), ex.vocabulary.end(), entry.instruments[i]) - ex.vocabulary.begin());
            write_wav(ex.sources[slot], options.out_dir / entry.source_paths[i]);
        }
    }
    save_manifest(manifest, options.out_dir / "manifest.json");
    write_snapshot(options.out_dir, options.config, {{"command", "generate"}, {"seed", options.config.data.seed}});
    std::size_t counts[3] = {0, 0, 0};
    for (const auto &p : manifest.pieces) counts[p.split == "train" ? 0 : p.split == "val" ? 1 : 2]++;
    log << "generated " << manifest.pieces.size() << " pieces (" << counts[0] << " train, " << counts[1] << " val, "
        << counts[2] << " test) in " << options.out_dir.string() << "\n";
    return manifest;
}

// ---------------------------------------------------------------------------
// train

TrainSummary cmd_train(const TrainOptions &options, std::ostream &log) {
    RunConfig config = options.config;
    config.train.validate();
    config.model.conditioning_enabled = config.train.conditioning_enabled;
    config.model.validate();

    const auto manifest = load_dataset(options.data_dir);
    if (manifest.vocabulary.size() > config.model.num_sources)
        throw ConfigError("dataset vocabulary has " + std::to_string(manifest.vocabulary.size()) +
                          " instruments but num_sources is " + std::to_string(config.model.num_sources));

    std::optional<TrainingState> state;
    std::vector<LossRow> history;
    if (options.resume) {
        if (!fs::exists(*options.resume)) throw DataError("checkpoint '" + options.resume->string() + "' not found");
        state.emplace(load_training_checkpoint(*options.resume));
        const auto &mc = state->model.config();
        if (mc.conditioning_enabled != config.train.conditioning_enabled)
            throw ConfigError(std::string("checkpoint is ") + (mc.conditioning_enabled ? "conditioned" : "unconditioned") +
                              " but --conditioning requests the other variant");
        const auto &vocab = state->model.vocabulary();
        if (!std::equal(manifest.vocabulary.begin(), manifest.vocabulary.end(), vocab.begin()))
            throw ConfigError("checkpoint vocabulary does not match the dataset");
        config.model = mc;
        const auto prior = options.resume->parent_path() / "loss.csv";
        if (fs::exists(prior))
            for (const auto &row : parse_loss_log(read_text(prior)))
                if (row.step <= state->step()) history.push_back(row);
        log << "resuming at step " << state->step() << "\n";
    } else {
        AdamOptions adam;
        adam.lr = static_cast<Real>(config.train.lr);
        state.emplace(WaveUNet(config.model, manifest.vocabulary, config.train.seed), adam);
    }

    const auto plan = plan_shapes(state->model.config(), config.train.segment_output);
    const std::size_t hop = config.train.segment_hop ? config.train.segment_hop : plan.output_length;
    std::vector<Segment> train_set, val_set;
    for (const auto &entry : manifest.pieces) {
        if (entry.split == "test") continue;
        auto &dst = entry.split == "train" ? train_set : val_set;
        const auto ex = load_example(manifest, entry, options.data_dir);
        for (auto &seg : segment_examples(ex, state->model.vocabulary(), plan, hop)) dst.push_back(std::move(seg));
    }
    if (train_set.empty()) throw DataError("dataset has no training segments of " + std::to_string(plan.input_length) + " samples");

    const bool same_dir = options.resume && fs::exists(options.out_dir) &&
                          fs::equivalent(options.resume->parent_path(), options.out_dir);
    prepare_output_dir(options.out_dir, options.force || same_dir);
    config.train.checkpoint_dir = options.out_dir.string();

    log << "training " << (config.train.conditioning_enabled ? "conditioned" : "unconditioned") << " model: "
        << state->model.parameter_count() << " parameters, " << train_set.size() << " train / " << val_set.size()
        << " val segments, input " << plan.input_length << " -> output " << plan.output_length << "\n";
    auto result = train(*state, train_set, val_set, config.train, [&log](const LossRow &row) {
        if (row.val_loss)
            log << "step " << row.step << " train " << row.train_loss << " val " << *row.val_loss << "\n";
    });

    history.insert(history.end(), result.log.begin(), result.log.end());
    write_text(options.out_dir / "loss.csv", loss_log_csv(history));
    json run = {{"command", "train"},
                {"data", options.data_dir.string()},
                {"conditioning", config.train.conditioning_enabled ? "on" : "off"},
                {"seed", config.train.seed},
                {"parameter_count", state->model.parameter_count()}};
    if (options.resume) run["resume"] = options.resume->string();
    write_snapshot(options.out_dir, config, run);

    TrainSummary summary;
    summary.log = std::move(history);
    summary.checkpoint = result.final_checkpoint;
    summary.parameter_count = state->model.parameter_count();
    summary.train_segments = train_set.size();
    summary.val_segments = val_set.size();
    return summary;
}

// ---------------------------------------------------------------------------
// separate

json cmd_separate(const SeparateOptions &options, std::ostream &log) {
    if (options.input_wav.has_value() == options.data_dir.has_value())
        throw ConfigError("separate needs exactly one of --input or --data");
    if (!fs::exists(options.checkpoint))
        throw DataError("checkpoint '" + options.checkpoint.string() + "' not found");
    const auto model = WaveUNet::load(options.checkpoint);
    const auto &vocab = model.vocabulary();
    const bool conditioned = model.config().conditioning_enabled;
    const auto &metrics = options.config.metrics;

    std::vector<std::string> stems;
    for (const auto &slot : vocab) stems.push_back(file_stem(slot));

    json report = {{"checkpoint", options.checkpoint.string()},
                   {"conditioned", conditioned},
                   {"threshold_db", metrics.threshold_db},
                   {"pieces", json::array()}};

    // Runs one mix and writes its slots under `dir`; returns the piece report.
    auto run_one = [&](const std::string &piece_id, const AudioTrack &mix, const LabelVector &labels,
                       const fs::path &dir, const fs::path &rel) {
        const auto outputs = model.separate(mix, labels, options.segment_output);
        json piece = {{"piece_id", piece_id}, {"slots", json::array()}, {"active", json::array()}};
        if (conditioned) piece["labels"] = labels.to_string();
        // A silent mix holds no source of interest, whatever the network emits.
        const bool silent_mix = !(rms_dbfs(mix.samples) > metrics.silence_db);
        std::vector<std::size_t> active;
        if (!silent_mix)
            for (const auto &a : extract_active_sources(outputs, metrics.threshold_db)) active.push_back(a.slot);
        for (std::size_t k = 0; k < outputs.size(); ++k) {
            const auto file = rel / (stems[k] + ".wav");
            write_wav(outputs[k], dir / (stems[k] + ".wav"));
            const double db = report_db(rms_dbfs(outputs[k].samples));
            piece["slots"].push_back({{"slot", k}, {"instrument", vocab[k]}, {"rms_dbfs", db}, {"file", file.generic_string()}});
            if (std::find(active.begin(), active.end(), k) != active.end())
                piece["active"].push_back({{"slot", k}, {"instrument", vocab[k]}, {"rms_dbfs", db}});
        }
        return piece;
    };

    if (options.input_wav) {
        if (!fs::exists(*options.input_wav)) throw DataError("input '" + options.input_wav->string() + "' not found");
        LabelVector labels(vocab.size());
        if (conditioned) {
            if (!options.labels) throw ConfigError("checkpoint is a conditioned model; --labels is required");
            labels = parse_labels(*options.labels, vocab);
        } else if (options.labels) {
            log << "warning: checkpoint is unconditioned; ignoring --labels\n";
        }
        const auto mix = read_wav(*options.input_wav);
        prepare_output_dir(options.out_dir, options.force);
        auto piece = run_one(options.input_wav->stem().string(), mix, labels, options.out_dir, "");
        log << piece["active"].size() << " active slot(s) above " << metrics.threshold_db << " dBFS\n";
        report["pieces"].push_back(std::move(piece));
    } else {
        if (options.labels) log << "warning: --labels is ignored in dataset mode; labels come from the manifest\n";
        const auto manifest = load_dataset(*options.data_dir);
        const auto pieces = pieces_of(manifest, options.split);
        prepare_output_dir(options.out_dir, options.force);
        auto index = estimates_index(conditioned ? "cexp-wave-u-net" : "exp-wave-u-net", vocab);
        for (const auto *entry : pieces) {
            const auto ex = load_example(manifest, *entry, *options.data_dir);
            const auto labels = labels_for(ex, vocab);
            const fs::path rel = fs::path("pieces") / entry->piece_id;
            auto piece = run_one(entry->piece_id, ex.mix, labels, options.out_dir / rel, rel);
            json files = json::object();
            for (const auto &s : piece["slots"]) files[s["instrument"].get<std::string>()] = s["file"];
            index["pieces"].push_back({{"piece_id", entry->piece_id}, {"files", files}});
            report["pieces"].push_back(std::move(piece));
        }
        write_text(options.out_dir / "estimates.json", index.dump(2) + "\n");
        log << "separated " << pieces.size() << " piece(s) into " << options.out_dir.string() << "\n";
    }
    write_text(options.out_dir / "report.json", report.dump(2) + "\n");
    json run = {{"command", "separate"}, {"checkpoint", options.checkpoint.string()},
                {"segment_output", options.segment_output}};
    if (options.input_wav) run["input"] = options.input_wav->string();
    if (options.data_dir) {
        run["data"] = options.data_dir->string();
        run["split"] = options.split;
    }
    if (options.labels) run["labels"] = *options.labels;
    write_snapshot(options.out_dir, options.config, run);
    return report;
}

// ---------------------------------------------------------------------------
// evaluate

EvaluationReport cmd_evaluate(const EvaluateOptions &options, std::ostream &log) {
    const auto index_path = options.estimates_dir / "estimates.json";
    if (!fs::exists(index_path))
        throw DataError("no estimates at '" + options.estimates_dir.string() + "' (estimates.json missing)");
    const auto index = read_json(index_path);
    if (index.value("format", "") != kEstimatesFormat)
        throw DataError("'" + index_path.string() + "' is not an estimates index");
    std::map<std::string, json> files_of;
    for (const auto &p : index.at("pieces")) files_of[p.at("piece_id").get<std::string>()] = p.at("files");

    const auto manifest = load_dataset(options.data_dir);
    const auto pieces = pieces_of(manifest, options.split);
    EvaluationReport report;
    report.method = options.method.value_or(index.value("method", std::string("model")));

    EvaluationOptions eval;
    eval.silence_db = options.config.metrics.silence_db;
    eval.cap_db = options.config.metrics.cap_db;
    eval.segment_length =
        static_cast<std::size_t>(std::llround(options.config.metrics.eval_segment_s * manifest.sample_rate));

    for (const auto *entry : pieces) {
        auto it = files_of.find(entry->piece_id);
        if (it == files_of.end()) throw DataError("estimates have no piece '" + entry->piece_id + "'");
        const auto ex = load_example(manifest, *entry, options.data_dir);
        std::vector<AudioTrack> estimates;
        for (const auto &inst : manifest.vocabulary) {
            if (!it->second.contains(inst))
                throw DataError("estimates for '" + entry->piece_id + "' lack instrument '" + inst + "'");
            estimates.push_back(read_wav(options.estimates_dir / it->second.at(inst).get<std::string>()));
        }
        auto records = evaluate_piece(entry->piece_id, manifest.vocabulary, estimates, ex.sources, ex.n_active, eval);
        report.records.insert(report.records.end(), records.begin(), records.end());
    }

    prepare_output_dir(options.out_dir, options.force);
    json records_json = json::array();
    for (const auto &r : report.records) records_json.push_back(to_json(r));
    write_text(options.out_dir / "records.csv", records_csv(report.records));
    write_text(options.out_dir / "records.json", records_json.dump(2) + "\n");
    json tables = json::object();
    for (auto g : options.group_by) {
        auto rows = aggregate(report.records, g, report.method);
        json rows_json = json::array();
        for (const auto &r : rows) rows_json.push_back(to_json(r));
        tables[to_string(g)] = rows_json;
        write_text(options.out_dir / ("aggregate_" + to_string(g) + ".csv"), aggregate_csv(rows, g));
        report.tables.emplace_back(g, std::move(rows));
    }
    write_text(options.out_dir / "aggregates.json", tables.dump(2) + "\n");
    json groups = json::array();
    for (auto g : options.group_by) groups.push_back(to_string(g));
    write_snapshot(options.out_dir, options.config,
                   {{"command", "evaluate"},
                    {"estimates", options.estimates_dir.string()},
                    {"data", options.data_dir.string()},
                    {"split", options.split},
                    {"method", report.method},
                    {"group_by", groups}});
    for (const auto &[g, rows] : report.tables) {
        if (g != GroupBy::kOverall) continue;
        for (const auto &r : rows)
            if (r.sdr_db)
                log << report.method << ": SDR " << *r.sdr_db << " dB, SIR " << *r.sir_db << " dB, SAR " << *r.sar_db
                    << " dB over " << r.count << " source(s), " << r.absent_count << " absent\n";
    }
    return report;
}

// ---------------------------------------------------------------------------
// bank / baseline

std::map<std::string, std::vector<AudioTrack>> training_notes(const std::vector<std::string> &instruments,
                                                              const NmfConfig &config, int sample_rate) {
    if (config.pitch_step == 0) throw ConfigError("nmf.pitch_step must be positive");
    std::map<std::string, std::vector<AudioTrack>> notes;
    for (const auto &spec : resolve_instruments(instruments)) {
        auto &list = notes[spec.name];
        for (int p = spec.min_midi; p <= spec.max_midi; p += static_cast<int>(config.pitch_step))
            list.push_back(synth_note(spec, p, config.note_duration_s, sample_rate));
    }
    return notes;
}

TemplateBank cmd_bank(const BankOptions &options, std::ostream &log) {
    const auto &nmf = options.config.nmf;
    const auto vocab = canonical_vocabulary(options.config.data.vocabulary);
    const auto notes = training_notes(vocab, nmf, options.config.data.sample_rate);
    prepare_output_dir(options.out_dir, options.force);
    TemplateOptions topt{nmf.templates, nmf.iterations, nmf.window, nmf.hop, nmf.seed};
    std::map<std::string, std::vector<double>> objectives;
    auto bank = learn_templates(notes, topt, &objectives);
    bank.save(options.out_dir / "templates.wsc");
    std::ostringstream csv;
    csv << "instrument,iteration,kl\n";
    char buf[40];
    for (const auto &[name, obj] : objectives)
        for (std::size_t i = 0; i < obj.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", obj[i]);
            csv << name << ',' << i << ',' << buf << '\n';
        }
    write_text(options.out_dir / "objectives.csv", csv.str());
    write_snapshot(options.out_dir, options.config, {{"command", "bank"}, {"instruments", vocab}});
    log << "learned " << nmf.templates << " templates for " << vocab.size() << " instrument(s)\n";
    return bank;
}

json cmd_baseline(const BaselineOptions &options, std::ostream &log) {
    if (!fs::exists(options.bank)) throw DataError("template bank '" + options.bank.string() + "' not found");
    const auto bank = TemplateBank::load(options.bank);
    const auto manifest = load_dataset(options.data_dir);
    if (bank.sample_rate != manifest.sample_rate)
        throw ConfigError("template bank sample rate " + std::to_string(bank.sample_rate) + " != dataset rate " +
                          std::to_string(manifest.sample_rate));
    const auto pieces = pieces_of(manifest, options.split);
    // Fail before any work when a piece needs a template the bank lacks.
    for (const auto *entry : pieces)
        for (const auto &inst : entry->instruments) (void)bank.at(inst);

    prepare_output_dir(options.out_dir, options.force);
    auto index = estimates_index("nmf", manifest.vocabulary);
    json report = {{"bank", options.bank.string()}, {"pieces", json::array()}};
    double worst_drift = -std::numeric_limits<double>::infinity();
    for (const auto *entry : pieces) {
        const auto ex = load_example(manifest, *entry, options.data_dir);
        const auto sep = separate_nmf(ex.mix, bank, entry->instruments, options.config.nmf.separation_iterations,
                                      options.config.nmf.seed);
        const fs::path rel = fs::path("pieces") / entry->piece_id;
        json files = json::object();
        for (const auto &inst : manifest.vocabulary) {
            auto it = std::find(entry->instruments.begin(), entry->instruments.end(), inst);
            AudioTrack track;
            track.sample_rate = ex.mix.sample_rate;
            if (it != entry->instruments.end())
                track = sep.sources[static_cast<std::size_t>(it - entry->instruments.begin())];
            else
                track.samples.assign(ex.mix.samples.size(), Real(0));
            const auto file = rel / (file_stem(inst) + ".wav");
            write_wav(track, options.out_dir / file);
            files[inst] = file.generic_string();
        }
        double drift = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i < sep.objective.size(); ++i)
            drift = std::max(drift, sep.objective[i] - sep.objective[i - 1]);
        worst_drift = std::max(worst_drift, drift);
        index["pieces"].push_back({{"piece_id", entry->piece_id}, {"files", files}});
        report["pieces"].push_back({{"piece_id", entry->piece_id},
                                    {"instruments", entry->instruments},
                                    {"kl_initial", sep.objective.front()},
                                    {"kl_final", sep.objective.back()},
                                    {"max_kl_increase", drift}});
    }
    report["max_kl_increase"] = worst_drift;
    write_text(options.out_dir / "estimates.json", index.dump(2) + "\n");
    write_text(options.out_dir / "report.json", report.dump(2) + "\n");
    write_snapshot(options.out_dir, options.config,
                   {{"command", "baseline"},
                    {"bank", options.bank.string()},
                    {"data", options.data_dir.string()},
                    {"split", options.split}});
    log << "baseline separated " << pieces.size() << " piece(s) into " << options.out_dir.string() << "\n";
    return report;
}

}  // namespace wavesep::cli
