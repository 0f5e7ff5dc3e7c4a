#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wavesep/audio.hpp"
#include "wavesep/checkpoint.hpp"
#include "wavesep/stft.hpp"

namespace wavesep {

inline constexpr double kNmfEps = 1e-12;

// Generalized KL divergence D(V || WH + eps), with 0 log 0 = 0.
double kl_divergence(const Eigen::MatrixXd &V, const Eigen::MatrixXd &model);

struct NmfResult {
    Eigen::MatrixXd W;               // F x R, columns L1-normalized when learned
    Eigen::MatrixXd H;               // R x T
    std::vector<double> objective;   // KL after init and after each iteration
};

// Multiplicative-update KL-NMF. With `fixed_W`, only H is updated.
NmfResult kl_nmf(const Eigen::MatrixXd &V, std::size_t rank, std::size_t iterations, std::uint64_t seed,
                 const Eigen::MatrixXd *fixed_W = nullptr);

Eigen::MatrixXd magnitude_matrix(const Spectrogram &spec);

// Per-instrument nonnegative spectral templates (F x R, unit L1 columns).
struct TemplateBank {
    std::size_t window = 512;
    std::size_t hop = 256;
    int sample_rate = kDefaultSampleRate;
    std::size_t rank = 8;
    std::map<std::string, Eigen::MatrixXd> templates;

    bool has(const std::string &instrument) const { return templates.count(instrument) != 0; }
    const Eigen::MatrixXd &at(const std::string &instrument) const;

    ParamContainer to_container() const;
    static TemplateBank from_container(const ParamContainer &c);
    void save(const std::filesystem::path &path) const;
    static TemplateBank load(const std::filesystem::path &path);
};

struct TemplateOptions {
    std::size_t rank = 8;
    std::size_t iterations = 200;
    std::size_t window = 512;
    std::size_t hop = 256;
    std::uint64_t seed = 11;
};

// Learns one template set per instrument from its isolated notes.
// `objectives`, when given, receives each instrument's KL trajectory.
TemplateBank learn_templates(const std::map<std::string, std::vector<AudioTrack>> &notes,
                             const TemplateOptions &options,
                             std::map<std::string, std::vector<double>> *objectives = nullptr);

struct NmfSeparation {
    std::vector<AudioTrack> sources;    // in `active` order
    std::vector<Eigen::MatrixXd> masks; // bins x frames, per active instrument
    Eigen::MatrixXd activations;        // stacked H
    std::vector<double> objective;
};

// Informed separation: the templates of the active instruments are stacked
// and held fixed; activations are inferred and Wiener masks applied to the
// complex mixture STFT.
NmfSeparation separate_nmf(const AudioTrack &mix, const TemplateBank &bank,
                           const std::vector<std::string> &active, std::size_t iterations,
                           std::uint64_t seed = 11);

}  // namespace wavesep
