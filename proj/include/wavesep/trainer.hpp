#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wavesep/adam.hpp"
#include "wavesep/config.hpp"
#include "wavesep/model.hpp"
#include "wavesep/synth.hpp"

namespace wavesep {

class TrainingError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct LossRow {
    std::size_t step = 0;
    double train_loss = 0;
    std::optional<double> val_loss;
    std::optional<double> silent_slot_loss;
    std::optional<double> active_slot_loss;
};

std::string loss_log_csv(const std::vector<LossRow> &rows);
// Inverse of loss_log_csv; throws TrainingError on malformed input.
std::vector<LossRow> parse_loss_log(const std::string &csv);

struct ValidationResult {
    double mean_loss = 0;
    std::vector<double> per_slot_loss;        // mean squared error per output slot
    std::optional<double> silent_slot_loss;   // over (segment, slot) pairs with label 0
    std::optional<double> active_slot_loss;   // over pairs with label 1
};

// Mean over the batch of the waveform MSE across all K slots. With
// include_silent_slots = false, slots whose label is 0 are masked out.
Tensor batch_loss(const WaveUNet &model, std::span<const Segment *const> batch, bool include_silent_slots = true);

ValidationResult validate(const WaveUNet &model, std::span<const Segment> segments);

// Model and optimizer state; the optimizer step count is the global step.
struct TrainingState {
    WaveUNet model;
    AdamState adam;

    explicit TrainingState(WaveUNet m, AdamOptions options = {});
    TrainingState(WaveUNet m, AdamState state) : model(std::move(m)), adam(std::move(state)) {}
    std::size_t step() const { return static_cast<std::size_t>(adam.step_count); }
};

void save_training_checkpoint(const std::filesystem::path &path, const TrainingState &state);
TrainingState load_training_checkpoint(const std::filesystem::path &path);

struct TrainResult {
    std::vector<LossRow> log;
    std::filesystem::path final_checkpoint;  // empty when checkpoint_dir is empty
};

// Runs steps (state.step(), config.max_steps]. Batches are drawn from a
// seeded per-epoch shuffle of `train`. When config.checkpoint_dir is
// non-empty, writes checkpoint_<step>.wsc at each checkpoint_interval,
// and checkpoint.wsc at the end.
// `on_step` sees every logged row.
TrainResult train(TrainingState &state, std::span<const Segment> train, std::span<const Segment> val,
                  const TrainConfig &config, const std::function<void(const LossRow &)> &on_step = {});

}  // namespace wavesep
