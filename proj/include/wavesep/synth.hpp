#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavesep/audio.hpp"
#include "wavesep/model.hpp"
#include "wavesep/tensor.hpp"
#include "wavesep/types.hpp"

namespace wavesep {

// Parametric additive-synthesis instrument.
struct InstrumentSpec {
    std::string name;
    std::vector<double> harmonics;  // amplitude of partial h+1
    double attack_s = 0;            // linear fade-in
    double release_s = 0;           // linear fade-out at note end
    double decay_tau_s = 0;         // exponential decay time constant, 0 = none
    int min_midi = 0;
    int max_midi = 127;
    double vibrato_depth = 0;  // relative frequency deviation
    double vibrato_rate_hz = 0;
};

double midi_to_hz(double midi);

// Sum of harmonic partials of f0 = 440 * 2^((midi - 69) / 12) under the
// envelope. Partial amplitudes are normalized to sum to at most 1, so the
// note peaks at <= 1. Partials at or above Nyquist are dropped.
AudioTrack synth_note(const InstrumentSpec &spec, int midi_pitch, double duration_s,
                      int sample_rate = kDefaultSampleRate);

// Four instruments with distinct registers and harmonic profiles.
std::vector<InstrumentSpec> default_instruments();
// Thirteen orchestral-style instruments.
std::vector<InstrumentSpec> orchestral_instruments();
// Looks up each name among the default and orchestral instruments; the result
// is sorted by name (slot order). Unknown names raise ConfigError.
std::vector<InstrumentSpec> resolve_instruments(const std::vector<std::string> &names);
const InstrumentSpec &find_instrument(const std::vector<InstrumentSpec> &specs, const std::string &name);

inline constexpr double kSilenceDb = -60.0;
inline constexpr double kMixPeak = 0.9;

// Renders a random piece for `instruments` (a subset of `vocabulary`, whose
// order defines the slots). Sources share one gain so that the mix peaks at
// <= 0.9 and mix == sum of sources holds exactly.
EnsembleExample generate_piece(const std::vector<InstrumentSpec> &vocabulary,
                               const std::vector<std::string> &instruments, double duration_s,
                               std::uint64_t seed, int sample_rate = kDefaultSampleRate,
                               std::string piece_id = "piece");

struct Segment {
    std::string piece_id;
    std::size_t offset = 0;
    std::vector<Real> input;  // plan.input_length samples of the mix
    Tensor target;            // [K, plan.output_length]
    LabelVector labels;       // in model slot order
    std::size_t n_active = 0;
};

// Labels of `example` re-expressed in the model's slot order.
LabelVector labels_for(const EnsembleExample &example, const std::vector<std::string> &model_vocabulary);

// Sliding windows at `hop`; empty when the piece is shorter than one input.
std::vector<Segment> segment_examples(const EnsembleExample &example,
                                      const std::vector<std::string> &model_vocabulary, const ShapePlan &plan,
                                      std::size_t hop);

// ---------------------------------------------------------------------------
// Dataset manifest

struct ManifestEntry {
    std::string piece_id;
    std::vector<std::string> instruments;  // active, slot order
    std::string split;                     // "train" | "val" | "test"
    std::size_t n_active = 0;
    double duration_s = 0;
    std::uint64_t seed = 0;
    std::string mix_path;                   // relative to the dataset root
    std::vector<std::string> source_paths;  // parallel to `instruments`
};

struct Manifest {
    std::vector<std::string> vocabulary;
    int sample_rate = kDefaultSampleRate;
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> pieces;

    std::vector<const ManifestEntry *> split(const std::string &name) const;
};

nlohmann::json to_json(const Manifest &m);
Manifest manifest_from_json(const nlohmann::json &j);
void save_manifest(const Manifest &m, const std::filesystem::path &path);
Manifest load_manifest(const std::filesystem::path &path);

// Reads the mix and sources of an entry; absent slots become silent tracks.
EnsembleExample load_example(const Manifest &manifest, const ManifestEntry &entry,
                             const std::filesystem::path &root);

// Piece list for a dataset config: ensemble sizes cycle over the piece index,
// instruments and duration are drawn from a per-piece seeded stream, and paths
// follow pieces/<id>/{mix,<instrument>}.wav. Only `instruments` that render
// non-silent are listed, so entries are final only after render_entry.
Manifest plan_dataset(const DataConfig &config);

// Renders one planned entry in memory; updates entry.instruments / n_active to
// the instruments that actually sound.
EnsembleExample render_entry(const Manifest &manifest, ManifestEntry &entry);

// Deterministic split assignment: evenly spaced test pieces, then evenly
// spaced validation pieces among the rest.
std::vector<std::string> assign_splits(std::size_t n_pieces, double test_fraction, double val_fraction);

}  // namespace wavesep
