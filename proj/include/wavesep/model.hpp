#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wavesep/audio.hpp"
#include "wavesep/checkpoint.hpp"
#include "wavesep/config.hpp"
#include "wavesep/tensor.hpp"
#include "wavesep/types.hpp"

namespace wavesep {

// Feature lengths through the network for one input length.
struct ShapePlan {
    std::size_t input_length = 0;
    std::size_t output_length = 0;
    std::vector<std::size_t> encoder_lengths;    // after each encoder conv (skip lengths)
    std::vector<std::size_t> decimated_lengths;  // after each decimation
    std::size_t bottleneck_length = 0;
    std::vector<std::size_t> upsampled_lengths;  // decoder, deepest level first
    std::vector<std::size_t> decoder_lengths;    // after each decoder conv, deepest first

    // Samples trimmed from each side of the input to align with the output.
    std::size_t crop() const { return (input_length - output_length) / 2; }
};

// Runs the shape calculus for a given input length. Returns nullopt when any
// layer would be invalid (too short, or an odd crop difference).
std::optional<ShapePlan> trace_shapes(const ModelConfig &config, std::size_t input_length);

// Smallest input length whose output is at least `requested_output` samples.
// Depth 0 (bottleneck only) is accepted here for analysis.
ShapePlan plan_shapes(const ModelConfig &config, std::size_t requested_output);

// Sigmoid gate sigmoid(W c + b) as a [C, 1] tensor.
Tensor conditioning_gate(const LabelVector &labels, const Tensor &weight, const Tensor &bias);

// Scales each channel of z [C, L] by the label-derived gate.
Tensor condition_bottleneck(const Tensor &z, const LabelVector &labels, const Tensor &weight,
                            const Tensor &bias);

// Target tensor [K, plan.output_length] for the input window starting at
// `offset`: slot i holds the center-cropped source for model_vocabulary[i],
// zeros when that instrument is absent from the example.
Tensor make_training_target(const EnsembleExample &example,
                            const std::vector<std::string> &model_vocabulary, const ShapePlan &plan,
                            std::size_t offset = 0);

struct ActiveSource {
    std::size_t slot;
    std::vector<Real> samples;
    double rms_dbfs;
};

// Slots whose RMS (dBFS) strictly exceeds the threshold.
std::vector<ActiveSource> extract_active_sources(std::span<const AudioTrack> outputs, double threshold_db);
std::vector<ActiveSource> extract_active_sources(const Tensor &outputs, double threshold_db);

// Multi-source Wave-U-Net with optional multiplicative label conditioning at
// the bottleneck.
class WaveUNet {
   public:
    WaveUNet(ModelConfig config, std::vector<std::string> vocabulary, std::uint64_t seed);

    const ModelConfig &config() const { return config_; }
    const std::vector<std::string> &vocabulary() const { return vocabulary_; }
    std::vector<Tensor> &parameters() { return params_; }
    const std::vector<Tensor> &parameters() const { return params_; }
    const std::vector<std::string> &parameter_names() const { return names_; }
    const Tensor &parameter(const std::string &name) const;
    std::size_t parameter_count() const;

    // mix: exactly a valid input length for this network. Returns [K, out].
    Tensor forward(std::span<const Real> mix, const LabelVector &labels) const;

    // Whole-track inference: zero-pads the borders for context, tiles planned
    // segments and stitches the K outputs back to the mix length.
    std::vector<AudioTrack> separate(const AudioTrack &mix, const LabelVector &labels,
                                     std::size_t segment_output = 2048) const;

    // Parameters plus {"config", "vocabulary"} metadata. Extra metadata keys
    // (training state) can be merged by the caller.
    ParamContainer to_container(const nlohmann::json &extra_metadata = nlohmann::json::object()) const;
    static WaveUNet from_container(const ParamContainer &container);

    void save(const std::filesystem::path &path) const;
    static WaveUNet load(const std::filesystem::path &path);

   private:
    void add_param(const std::string &name, Tensor t);
    const Tensor &p(std::size_t index) const { return params_[index]; }

    ModelConfig config_;
    std::vector<std::string> vocabulary_;
    std::vector<std::string> names_;
    std::vector<Tensor> params_;
    // Indices into params_.
    std::vector<std::size_t> enc_w_, enc_b_, dec_w_, dec_b_;
    std::size_t bottleneck_w_ = 0, bottleneck_b_ = 0, out_w_ = 0, out_b_ = 0;
    std::optional<std::size_t> cond_w_, cond_b_;
};

// Lexicographic slot order for an instrument set.
std::vector<std::string> canonical_vocabulary(std::vector<std::string> names);

}  // namespace wavesep
