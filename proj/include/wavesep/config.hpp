#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavesep/tensor.hpp"

namespace wavesep {

class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Architecture hyperparameters. Encoder level i has
// base_filters + i * filter_growth channels; the bottleneck uses level `depth`.
struct ModelConfig {
    std::size_t num_sources = 4;
    std::size_t depth = 6;
    std::size_t base_filters = 12;
    std::size_t filter_growth = 12;
    std::size_t kernel_down = 15;
    std::size_t kernel_up = 5;
    Real leaky_slope = Real(0.01);
    bool conditioning_enabled = false;
    std::string output_activation = "tanh";

    std::size_t filters_at(std::size_t level) const { return base_filters + level * filter_growth; }
    std::size_t bottleneck_filters() const { return filters_at(depth); }
    // Throws ConfigError on a config no network can be built from.
    void validate() const;
};

struct TrainConfig {
    double lr = 1e-4;
    std::size_t batch_size = 8;
    std::size_t max_steps = 2000;
    std::uint64_t seed = 0;
    std::size_t validation_interval = 250;
    std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
    std::string checkpoint_dir = "run";
    bool conditioning_enabled = false;
    std::size_t segment_output = 512;  // requested model output samples per segment
    std::size_t segment_hop = 0;       // 0: equal to the planned output length
    double lr_decay_gamma = 1.0;       // multiplicative decay, off at 1.0
    std::size_t lr_decay_every = 0;

    void validate() const;
};

struct DataConfig {
    std::vector<std::string> vocabulary = {"bass", "clarinet", "flute", "violin"};
    std::size_t n_pieces = 40;
    std::vector<std::size_t> ensemble_sizes = {2, 3, 4};
    double min_duration_s = 4.0;
    double max_duration_s = 12.0;
    int sample_rate = 8000;
    std::uint64_t seed = 7;
    double test_fraction = 0.25;
    double val_fraction = 0.1;

    void validate() const;
};

struct MetricsConfig {
    double threshold_db = -40.0;  // active-slot extraction, strict inequality
    double silence_db = -60.0;    // reference RMS below this is "silent"
    double cap_db = 100.0;
    double eval_segment_s = 1.0;
};

struct NmfConfig {
    std::size_t window = 512;
    std::size_t hop = 256;
    std::size_t templates = 8;
    std::size_t iterations = 200;
    std::size_t separation_iterations = 100;
    double note_duration_s = 0.5;
    std::size_t pitch_step = 2;  // semitones between training notes
    std::uint64_t seed = 11;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    MetricsConfig metrics;
    NmfConfig nmf;
};

nlohmann::json to_json(const ModelConfig &c);
nlohmann::json to_json(const TrainConfig &c);
nlohmann::json to_json(const DataConfig &c);
nlohmann::json to_json(const MetricsConfig &c);
nlohmann::json to_json(const NmfConfig &c);
nlohmann::json to_json(const RunConfig &c);

// Strict parsers: unknown keys and wrongly typed values raise ConfigError.
// Missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json &j);
TrainConfig train_config_from_json(const nlohmann::json &j);
DataConfig data_config_from_json(const nlohmann::json &j);
MetricsConfig metrics_config_from_json(const nlohmann::json &j);
NmfConfig nmf_config_from_json(const nlohmann::json &j);
RunConfig run_config_from_json(const nlohmann::json &j);

RunConfig load_run_config(const std::string &path);

// Human-readable key reference generated from the same tables the parser uses.
std::string config_reference();

}  // namespace wavesep
