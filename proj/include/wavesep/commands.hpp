#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavesep/config.hpp"
#include "wavesep/metrics.hpp"
#include "wavesep/nmf.hpp"
#include "wavesep/synth.hpp"
#include "wavesep/trainer.hpp"

namespace wavesep::cli {

// Missing or inconsistent input data (dataset directory, estimates, WAVs).
class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

enum class ErrorCategory { kConfig, kData, kModel, kOther };

ErrorCategory classify(const std::exception &e);
std::string to_string(ErrorCategory c);
// 2 config, 3 data, 4 model, 1 anything else.
int exit_code(ErrorCategory c);

// Creates `dir`; refuses an existing non-empty directory unless `force`.
void prepare_output_dir(const std::filesystem::path &dir, bool force);

// resolved_config.json (loadable with --config) and run.json (command and
// inputs) next to a command's outputs.
void write_snapshot(const std::filesystem::path &dir, const RunConfig &config, const nlohmann::json &run);

// Parses "0101" (one bit per slot) or "bass,flute" (instrument names).
LabelVector parse_labels(const std::string &text, const std::vector<std::string> &vocabulary);

struct GenerateOptions {
    RunConfig config;
    std::filesystem::path out_dir;
    bool force = false;
};
Manifest cmd_generate(const GenerateOptions &options, std::ostream &log);

struct TrainOptions {
    RunConfig config;  // train.conditioning_enabled selects the variant
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> resume;
    bool force = false;
};
struct TrainSummary {
    std::vector<LossRow> log;  // full history, including steps before a resume
    std::filesystem::path checkpoint;
    std::size_t parameter_count = 0;
    std::size_t train_segments = 0;
    std::size_t val_segments = 0;
};
TrainSummary cmd_train(const TrainOptions &options, std::ostream &log);

struct SeparateOptions {
    RunConfig config;  // metrics.threshold_db / silence_db
    std::filesystem::path checkpoint;
    std::optional<std::filesystem::path> input_wav;  // single-file mode
    std::optional<std::filesystem::path> data_dir;   // dataset mode
    std::string split = "test";
    std::optional<std::string> labels;  // single-file mode only
    std::filesystem::path out_dir;
    std::size_t segment_output = 2048;
    bool force = false;
};
// Writes one WAV per output slot and report.json; in dataset mode also
// estimates.json. Returns the report.
nlohmann::json cmd_separate(const SeparateOptions &options, std::ostream &log);

struct EvaluateOptions {
    RunConfig config;
    std::filesystem::path estimates_dir;
    std::filesystem::path data_dir;
    std::string split = "test";
    std::vector<GroupBy> group_by = {GroupBy::kOverall, GroupBy::kInstrument, GroupBy::kNActive};
    std::optional<std::string> method;  // defaults to the estimates' method
    std::filesystem::path out_dir;
    bool force = false;
};
struct EvaluationReport {
    std::string method;
    std::vector<MetricsRecord> records;
    std::vector<std::pair<GroupBy, std::vector<AggregateRow>>> tables;
};
EvaluationReport cmd_evaluate(const EvaluateOptions &options, std::ostream &log);

struct BankOptions {
    RunConfig config;  // nmf.* and data.vocabulary
    std::filesystem::path out_dir;
    bool force = false;
};
// Isolated notes across each instrument's range at nmf.pitch_step spacing.
std::map<std::string, std::vector<AudioTrack>> training_notes(const std::vector<std::string> &instruments,
                                                              const NmfConfig &config, int sample_rate);
TemplateBank cmd_bank(const BankOptions &options, std::ostream &log);

struct BaselineOptions {
    RunConfig config;
    std::filesystem::path bank;
    std::filesystem::path data_dir;
    std::string split = "test";
    std::filesystem::path out_dir;
    bool force = false;
};
nlohmann::json cmd_baseline(const BaselineOptions &options, std::ostream &log);

}  // namespace wavesep::cli
