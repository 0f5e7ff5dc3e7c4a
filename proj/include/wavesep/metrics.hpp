#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavesep/audio.hpp"

namespace wavesep {

class MetricsError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kMetricCapDb = 100.0;

// Orthogonal-projection decomposition of an estimate against references:
//   estimate == target + interference + artifacts
struct Decomposition {
    std::vector<double> target;
    std::vector<double> interference;
    std::vector<double> artifacts;
    std::size_t dropped_references = 0;  // nonzero references found linearly dependent
};

// `references` may contain silent (all-zero) tracks; they are ignored when
// building the projection subspace. The target reference must be non-silent.
Decomposition decompose(std::span<const Real> estimate, const std::vector<std::span<const Real>> &references,
                        std::size_t target_index);

struct SeparationScores {
    double sdr_db = 0;
    double sir_db = 0;
    double sar_db = 0;
};

// Degenerate ratios are clamped to +/- cap.
SeparationScores sdr_sir_sar(const Decomposition &d, double cap_db = kMetricCapDb);

struct MetricsRecord {
    std::string piece_id;
    std::string instrument;
    std::size_t slot = 0;
    std::size_t n_active = 0;
    std::optional<double> sdr_db;  // absent when the reference is silent
    std::optional<double> sir_db;
    std::optional<double> sar_db;
    double est_rms_dbfs = 0;

    bool absent() const { return !sdr_db.has_value(); }
};

struct EvaluationOptions {
    double silence_db = -60.0;
    double cap_db = kMetricCapDb;
    std::size_t segment_length = 8000;  // samples; 0 = whole track
};

// Scores every slot of one piece. Metrics are computed per segment over
// segments whose reference is non-silent and averaged; slots whose reference
// is silent everywhere are reported absent with only est_rms_dbfs.
std::vector<MetricsRecord> evaluate_piece(const std::string &piece_id, const std::vector<std::string> &slot_names,
                                          std::span<const AudioTrack> estimates,
                                          std::span<const AudioTrack> references, std::size_t n_active,
                                          const EvaluationOptions &options = {});

enum class GroupBy { kOverall, kInstrument, kNActive };
GroupBy parse_group_by(const std::string &s);
std::string to_string(GroupBy g);

struct AggregateRow {
    std::string method;
    std::string key;  // "all", instrument name, or ensemble size
    std::size_t count = 0;
    std::size_t absent_count = 0;
    std::optional<double> sdr_db;
    std::optional<double> sir_db;
    std::optional<double> sar_db;
    std::optional<double> est_rms_dbfs;  // mean over all records in the group
};

// Means over non-absent records; `keys` optionally forces rows for groups
// with no records (they come out with count 0 and no means).
std::vector<AggregateRow> aggregate(const std::vector<MetricsRecord> &records, GroupBy group_by,
                                    const std::string &method = "model",
                                    const std::vector<std::string> &keys = {});

nlohmann::json to_json(const MetricsRecord &r);
nlohmann::json to_json(const AggregateRow &r);
std::string records_csv(const std::vector<MetricsRecord> &records);
std::string aggregate_csv(const std::vector<AggregateRow> &rows, GroupBy group_by);

}  // namespace wavesep
