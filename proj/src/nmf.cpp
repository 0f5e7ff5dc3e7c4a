#include "wavesep/nmf.hpp"

#include <cmath>

#include "wavesep/config.hpp"
#include "wavesep/rng.hpp"

namespace wavesep {

using nlohmann::json;

namespace {

constexpr const char *kBankFormat = "wavesep-templates";

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng &rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.uniform(0.5, 1.5);
    return m;
}

void normalize_columns(Eigen::MatrixXd &W, Eigen::MatrixXd &H) {
    for (Eigen::Index r = 0; r < W.cols(); ++r) {
        const double s = W.col(r).sum();
        if (s > 0) {
            W.col(r) /= s;
            H.row(r) *= s;
        }
    }
}

}  // namespace

double kl_divergence(const Eigen::MatrixXd &V, const Eigen::MatrixXd &model) {
    double d = 0;
    for (Eigen::Index j = 0; j < V.cols(); ++j)
        for (Eigen::Index i = 0; i < V.rows(); ++i) {
            const double v = V(i, j);
            const double m = model(i, j) + kNmfEps;
            d += (v > 0 ? v * std::log(v / m) : 0.0) - v + m;
        }
    return d;
}

NmfResult kl_nmf(const Eigen::MatrixXd &V, std::size_t rank, std::size_t iterations, std::uint64_t seed,
                 const Eigen::MatrixXd *fixed_W) {
    if ((V.array() < 0).any()) throw ConfigError("kl_nmf: negative entries in V");
    const Eigen::Index F = V.rows(), T = V.cols();
    Rng rng(seed);
    NmfResult res;
    if (fixed_W) {
        if (fixed_W->rows() != F) throw ConfigError("kl_nmf: template rows do not match spectrogram bins");
        res.W = *fixed_W;
    } else {
        if (rank < 1 || static_cast<Eigen::Index>(rank) > F)
            throw ConfigError("kl_nmf: rank must be in [1, " + std::to_string(F) + "]");
        res.W = random_matrix(F, static_cast<Eigen::Index>(rank), 1.0, rng);
        for (Eigen::Index r = 0; r < res.W.cols(); ++r) res.W.col(r) /= res.W.col(r).sum();
    }
    const Eigen::Index R = res.W.cols();
    const double mean_frame_mass = T > 0 ? V.sum() / static_cast<double>(T) : 0.0;
    res.H = random_matrix(R, T, mean_frame_mass / static_cast<double>(std::max<Eigen::Index>(R, 1)) + kNmfEps, rng);

    Eigen::MatrixXd model = res.W * res.H;
    res.objective.push_back(kl_divergence(V, model));
    for (std::size_t it = 0; it < iterations; ++it) {
        {
            const Eigen::MatrixXd ratio = V.array() / (model.array() + kNmfEps);
            const Eigen::VectorXd denom = res.W.colwise().sum().transpose().array() + kNmfEps;
            const Eigen::MatrixXd numer = res.W.transpose() * ratio;
            res.H.array() *= numer.array().colwise() / denom.array();
            model.noalias() = res.W * res.H;
        }
        if (!fixed_W) {
            const Eigen::MatrixXd ratio = V.array() / (model.array() + kNmfEps);
            const Eigen::RowVectorXd denom = res.H.rowwise().sum().transpose().array() + kNmfEps;
            const Eigen::MatrixXd numer = ratio * res.H.transpose();
            res.W.array() *= numer.array().rowwise() / denom.array();
            normalize_columns(res.W, res.H);
            model.noalias() = res.W * res.H;
        }
        res.objective.push_back(kl_divergence(V, model));
    }
    return res;
}

Eigen::MatrixXd magnitude_matrix(const Spectrogram &spec) {
    Eigen::MatrixXd V(static_cast<Eigen::Index>(spec.bins), static_cast<Eigen::Index>(spec.frames));
    for (std::size_t t = 0; t < spec.frames; ++t)
        for (std::size_t f = 0; f < spec.bins; ++f)
            V(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t)) = std::abs(spec.at(f, t));
    return V;
}

const Eigen::MatrixXd &TemplateBank::at(const std::string &instrument) const {
    auto it = templates.find(instrument);
    if (it == templates.end()) throw ConfigError("no timbre template for instrument '" + instrument + "'");
    return it->second;
}

ParamContainer TemplateBank::to_container() const {
    json instruments = json::array();
    ParamContainer c;
    for (const auto &[name, W] : templates) {
        instruments.push_back(name);
        std::vector<Real> data(static_cast<std::size_t>(W.size()));
        for (Eigen::Index f = 0; f < W.rows(); ++f)
            for (Eigen::Index r = 0; r < W.cols(); ++r)
                data[static_cast<std::size_t>(f * W.cols() + r)] = static_cast<Real>(W(f, r));
        c.add("template." + name,
              Tensor::from({static_cast<std::size_t>(W.rows()), static_cast<std::size_t>(W.cols())}, std::move(data)));
    }
    c.metadata = json{{"format", kBankFormat}, {"window", window},   {"hop", hop},
                      {"sample_rate", sample_rate}, {"rank", rank}, {"instruments", instruments}}
                     .dump();
    return c;
}

TemplateBank TemplateBank::from_container(const ParamContainer &c) {
    json meta;
    try {
        meta = json::parse(c.metadata);
    } catch (const json::exception &e) {
        throw CheckpointError(std::string("template bank metadata is not JSON: ") + e.what());
    }
    if (meta.value("format", "") != kBankFormat) throw CheckpointError("container is not a template bank");
    TemplateBank bank;
    bank.window = meta.at("window").get<std::size_t>();
    bank.hop = meta.at("hop").get<std::size_t>();
    bank.sample_rate = meta.at("sample_rate").get<int>();
    bank.rank = meta.at("rank").get<std::size_t>();
    for (const auto &name : meta.at("instruments").get<std::vector<std::string>>()) {
        const auto &t = c.at("template." + name);
        if (t.rank() != 2 || t.dim(0) != bank.window / 2 + 1)
            throw CheckpointError("template '" + name + "' has shape " + shape_str(t.shape()));
        Eigen::MatrixXd W(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
        for (Eigen::Index f = 0; f < W.rows(); ++f)
            for (Eigen::Index r = 0; r < W.cols(); ++r)
                W(f, r) = t.data()[static_cast<std::size_t>(f * W.cols() + r)];
        bank.templates.emplace(name, std::move(W));
    }
    return bank;
}

void TemplateBank::save(const std::filesystem::path &path) const { save_container(path, to_container()); }
TemplateBank TemplateBank::load(const std::filesystem::path &path) { return from_container(load_container(path)); }

TemplateBank learn_templates(const std::map<std::string, std::vector<AudioTrack>> &notes,
                             const TemplateOptions &options, std::map<std::string, std::vector<double>> *objectives) {
    if (notes.empty()) throw ConfigError("learn_templates: no instruments given");
    TemplateBank bank;
    bank.window = options.window;
    bank.hop = options.hop;
    bank.rank = options.rank;
    const std::size_t bins = options.window / 2 + 1;
    if (options.rank < 1 || options.rank > bins)
        throw ConfigError("learn_templates: R = " + std::to_string(options.rank) + " must be in [1, " +
                          std::to_string(bins) + "]");
    bool first = true;
    std::uint64_t stream = 0;
    for (const auto &[name, tracks] : notes) {
        if (tracks.empty()) throw ConfigError("learn_templates: no notes for instrument '" + name + "'");
        std::vector<Eigen::MatrixXd> parts;
        Eigen::Index total = 0;
        for (const auto &note : tracks) {
            if (first) {
                bank.sample_rate = note.sample_rate;
                first = false;
            } else if (note.sample_rate != bank.sample_rate) {
                throw ConfigError("learn_templates: notes have mixed sample rates");
            }
            parts.push_back(magnitude_matrix(stft(note, options.window, options.hop)));
            total += parts.back().cols();
        }
        if (total == 0) throw ConfigError("learn_templates: notes for '" + name + "' are empty");
        Eigen::MatrixXd V(static_cast<Eigen::Index>(bins), total);
        Eigen::Index col = 0;
        for (const auto &p : parts) {
            V.middleCols(col, p.cols()) = p;
            col += p.cols();
        }
        auto res = kl_nmf(V, options.rank, options.iterations, Rng::derive(options.seed, stream++));
        bank.templates.emplace(name, std::move(res.W));
        if (objectives) (*objectives)[name] = std::move(res.objective);
    }
    return bank;
}

NmfSeparation separate_nmf(const AudioTrack &mix, const TemplateBank &bank, const std::vector<std::string> &active,
                           std::size_t iterations, std::uint64_t seed) {
    if (active.empty()) throw ConfigError("separate_nmf: active instrument set is empty");
    std::vector<const Eigen::MatrixXd *> parts;
    Eigen::Index cols = 0;
    for (const auto &name : active) {
        parts.push_back(&bank.at(name));
        cols += parts.back()->cols();
    }
    const auto spec = stft(mix, bank.window, bank.hop);
    const Eigen::MatrixXd V = magnitude_matrix(spec);
    Eigen::MatrixXd W(V.rows(), cols);
    Eigen::Index c = 0;
    for (const auto *p : parts) {
        W.middleCols(c, p->cols()) = *p;
        c += p->cols();
    }
    auto res = kl_nmf(V, static_cast<std::size_t>(cols), iterations, seed, &W);

    NmfSeparation out;
    out.activations = res.H;
    out.objective = std::move(res.objective);
    const Eigen::MatrixXd total = W * res.H;
    c = 0;
    for (std::size_t i = 0; i < active.size(); ++i) {
        const Eigen::Index r = parts[i]->cols();
        const Eigen::MatrixXd part = W.middleCols(c, r) * res.H.middleRows(c, r);
        c += r;
        Eigen::MatrixXd mask = part.array() / (total.array() + kNmfEps);
        Spectrogram masked = spec;
        for (std::size_t t = 0; t < spec.frames; ++t)
            for (std::size_t f = 0; f < spec.bins; ++f)
                masked.at(f, t) *= mask(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t));
        out.sources.push_back(istft(masked));
        out.masks.push_back(std::move(mask));
    }
    return out;
}

}  // namespace wavesep
