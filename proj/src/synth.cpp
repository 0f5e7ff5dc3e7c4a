#include "wavesep/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "wavesep/config.hpp"
#include "wavesep/rng.hpp"

namespace wavesep {

using nlohmann::json;

double midi_to_hz(double midi) { return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0); }

AudioTrack synth_note(const InstrumentSpec &spec, int midi_pitch, double duration_s, int sample_rate) {
    if (midi_pitch < spec.min_midi || midi_pitch > spec.max_midi)
        throw ConfigError("pitch " + std::to_string(midi_pitch) + " outside range of '" + spec.name + "' [" +
                          std::to_string(spec.min_midi) + ", " + std::to_string(spec.max_midi) + "]");
    if (duration_s < 0 || sample_rate <= 0) throw ConfigError("synth_note: invalid duration or sample rate");

    const double f0 = midi_to_hz(midi_pitch);
    const double nyquist = 0.5 * sample_rate;
    const double top = f0 * (1.0 + std::abs(spec.vibrato_depth));
    double total = 0;
    for (auto a : spec.harmonics) total += std::max(0.0, a);
    const double norm = total > 1.0 ? 1.0 / total : 1.0;

    const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
    AudioTrack track;
    track.sample_rate = sample_rate;
    track.samples.assign(n, Real(0));
    const double two_pi = 2.0 * std::numbers::pi;
    const double end = static_cast<double>(n) / sample_rate;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        double phase = two_pi * f0 * t;
        if (spec.vibrato_depth != 0 && spec.vibrato_rate_hz > 0)
            phase += f0 * spec.vibrato_depth / spec.vibrato_rate_hz * (1.0 - std::cos(two_pi * spec.vibrato_rate_hz * t));
        double v = 0;
        for (std::size_t h = 0; h < spec.harmonics.size(); ++h) {
            const double a = spec.harmonics[h];
            if (a <= 0 || top * static_cast<double>(h + 1) >= nyquist) continue;
            v += a * std::sin(static_cast<double>(h + 1) * phase);
        }
        double env = 1.0;
        if (spec.attack_s > 0) env *= std::min(1.0, t / spec.attack_s);
        if (spec.release_s > 0) env *= std::clamp((end - t) / spec.release_s, 0.0, 1.0);
        if (spec.decay_tau_s > 0) env *= std::exp(-t / spec.decay_tau_s);
        track.samples[i] = static_cast<Real>(norm * env * v);
    }
    return track;
}

std::vector<InstrumentSpec> default_instruments() {
    std::vector<double> saw;
    for (int h = 1; h <= 14; ++h) saw.push_back(1.0 / h);
    return {
        {"bass", saw, 0.01, 0.05, 1.2, 33, 52, 0.0, 0.0},
        {"clarinet", {1.0, 0.0, 0.45, 0.0, 0.25, 0.0, 0.12, 0.0, 0.06}, 0.03, 0.05, 0.0, 50, 72, 0.0, 0.0},
        {"flute", {1.0, 0.25, 0.08, 0.03}, 0.05, 0.05, 0.0, 67, 88, 0.004, 5.0},
        {"violin", {1.0, 0.7, 0.5, 0.45, 0.35, 0.25, 0.2, 0.15}, 0.04, 0.05, 0.0, 55, 81, 0.006, 6.0},
    };
}

std::vector<InstrumentSpec> orchestral_instruments() {
    auto base = default_instruments();
    std::vector<InstrumentSpec> out;
    for (const auto &s : base)
        if (s.name != "bass") out.push_back(s);
    std::vector<double> saw;
    for (int h = 1; h <= 12; ++h) saw.push_back(1.0 / h);
    out.push_back({"bassoon", {0.6, 1.0, 0.7, 0.5, 0.3, 0.2, 0.1}, 0.03, 0.05, 0.0, 34, 60, 0.0, 0.0});
    out.push_back({"cello", saw, 0.05, 0.05, 0.0, 36, 64, 0.005, 5.5});
    out.push_back({"double_bass", saw, 0.04, 0.05, 1.5, 28, 52, 0.004, 5.0});
    out.push_back({"horn", {1.0, 0.6, 0.3, 0.15, 0.05}, 0.06, 0.06, 0.0, 41, 70, 0.0, 0.0});
    out.push_back({"oboe", {0.5, 1.0, 0.8, 0.6, 0.5, 0.3, 0.2, 0.1}, 0.02, 0.04, 0.0, 58, 86, 0.003, 5.0});
    out.push_back({"saxophone", {1.0, 0.8, 0.6, 0.5, 0.3, 0.2}, 0.03, 0.05, 0.0, 49, 80, 0.005, 5.0});
    out.push_back({"trombone", {1.0, 0.9, 0.7, 0.5, 0.35, 0.2}, 0.05, 0.05, 0.0, 40, 72, 0.0, 0.0});
    out.push_back({"trumpet", {0.8, 1.0, 0.9, 0.7, 0.5, 0.35, 0.2}, 0.02, 0.04, 0.0, 54, 82, 0.0, 0.0});
    out.push_back({"tuba", {1.0, 0.5, 0.25, 0.1}, 0.05, 0.05, 0.0, 26, 53, 0.0, 0.0});
    out.push_back({"viola", {1.0, 0.6, 0.45, 0.35, 0.25, 0.2, 0.1}, 0.04, 0.05, 0.0, 48, 76, 0.006, 6.0});
    std::sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.name < b.name; });
    return out;
}

const InstrumentSpec &find_instrument(const std::vector<InstrumentSpec> &specs, const std::string &name) {
    for (const auto &s : specs)
        if (s.name == name) return s;
    throw ConfigError("unknown instrument '" + name + "'");
}

std::vector<InstrumentSpec> resolve_instruments(const std::vector<std::string> &names) {
    const auto defaults = default_instruments();
    const auto orchestral = orchestral_instruments();
    std::vector<InstrumentSpec> out;
    for (const auto &name : canonical_vocabulary(names)) {
        auto match = [&](const std::vector<InstrumentSpec> &specs) -> const InstrumentSpec * {
            for (const auto &s : specs)
                if (s.name == name) return &s;
            return nullptr;
        };
        const InstrumentSpec *spec = match(defaults);
        if (!spec) spec = match(orchestral);
        if (!spec) throw ConfigError("unknown instrument '" + name + "'");
        out.push_back(*spec);
    }
    return out;
}

EnsembleExample generate_piece(const std::vector<InstrumentSpec> &vocabulary,
                               const std::vector<std::string> &instruments, double duration_s,
                               std::uint64_t seed, int sample_rate, std::string piece_id) {
    if (instruments.empty()) throw ConfigError("generate_piece: empty instrument set");
    if (instruments.size() > vocabulary.size())
        throw ConfigError("generate_piece: more instruments than vocabulary slots");
    if (!(duration_s > 0)) throw ConfigError("generate_piece: duration must be positive");
    for (const auto &name : instruments) (void)find_instrument(vocabulary, name);

    const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
    EnsembleExample ex;
    ex.piece_id = std::move(piece_id);
    ex.labels = LabelVector(vocabulary.size());
    std::vector<std::vector<double>> raw(vocabulary.size(), std::vector<double>(n, 0.0));

    for (std::size_t slot = 0; slot < vocabulary.size(); ++slot) {
        const auto &spec = vocabulary[slot];
        ex.vocabulary.push_back(spec.name);
        if (std::find(instruments.begin(), instruments.end(), spec.name) == instruments.end()) continue;
        Rng rng(Rng::derive(seed, slot));
        std::size_t pos = 0;
        bool first = true;
        while (pos < n) {
            const double len_s = rng.uniform(0.25, 1.0);
            const auto len = std::min<std::size_t>(n - pos, static_cast<std::size_t>(len_s * sample_rate));
            if (len == 0) break;
            const bool rest = !first && rng.uniform() < 0.15;
            const auto pitch = static_cast<int>(rng.uniform_int(spec.min_midi, spec.max_midi));
            const double velocity = rng.uniform(0.5, 1.0);
            if (!rest) {
                auto note = synth_note(spec, pitch, static_cast<double>(len) / sample_rate, sample_rate);
                for (std::size_t i = 0; i < note.samples.size() && pos + i < n; ++i)
                    raw[slot][pos + i] = velocity * note.samples[i];
            }
            pos += len;
            first = false;
        }
    }

    double peak = 0;
    for (std::size_t t = 0; t < n; ++t) {
        double m = 0;
        for (std::size_t s = 0; s < raw.size(); ++s) {
            m += raw[s][t];
            peak = std::max(peak, std::abs(raw[s][t]));
        }
        peak = std::max(peak, std::abs(m));
    }
    // Slightly under 0.9 so rounding in the per-source products cannot
    // push the recomputed mix above the bound.
    const double gain = peak > 0 ? kMixPeak / peak * (1.0 - 1e-12) : 1.0;

    ex.sources.resize(vocabulary.size());
    for (std::size_t s = 0; s < raw.size(); ++s) {
        ex.sources[s].sample_rate = sample_rate;
        ex.sources[s].samples.resize(n);
        for (std::size_t t = 0; t < n; ++t) ex.sources[s].samples[t] = static_cast<Real>(gain * raw[s][t]);
    }
    ex.mix.sample_rate = sample_rate;
    ex.mix.samples.assign(n, Real(0));
    for (std::size_t t = 0; t < n; ++t) {
        Real m = 0;
        for (const auto &src : ex.sources) m += src.samples[t];
        ex.mix.samples[t] = m;
    }
    for (std::size_t s = 0; s < ex.sources.size(); ++s) {
        ex.labels.bits[s] = rms_dbfs(ex.sources[s].samples) > kSilenceDb ? 1 : 0;
        ex.n_active += ex.labels.bits[s];
    }
    return ex;
}

LabelVector labels_for(const EnsembleExample &example, const std::vector<std::string> &model_vocabulary) {
    LabelVector labels(model_vocabulary.size());
    for (std::size_t s = 0; s < example.vocabulary.size(); ++s) {
        if (!example.labels[s]) continue;
        auto it = std::find(model_vocabulary.begin(), model_vocabulary.end(), example.vocabulary[s]);
        if (it == model_vocabulary.end())
            throw ConfigError("unknown instrument '" + example.vocabulary[s] + "' in example '" +
                              example.piece_id + "'");
        labels.bits[static_cast<std::size_t>(it - model_vocabulary.begin())] = 1;
    }
    return labels;
}

std::vector<Segment> segment_examples(const EnsembleExample &example,
                                      const std::vector<std::string> &model_vocabulary, const ShapePlan &plan,
                                      std::size_t hop) {
    if (hop == 0) throw ConfigError("segment hop must be positive");
    std::vector<Segment> out;
    if (example.length() < plan.input_length) return out;
    const auto labels = labels_for(example, model_vocabulary);
    for (std::size_t offset = 0; offset + plan.input_length <= example.length(); offset += hop) {
        Segment seg;
        seg.piece_id = example.piece_id;
        seg.offset = offset;
        const auto first = example.mix.samples.begin() + static_cast<std::ptrdiff_t>(offset);
        seg.input.assign(first, first + static_cast<std::ptrdiff_t>(plan.input_length));
        seg.target = make_training_target(example, model_vocabulary, plan, offset);
        seg.labels = labels;
        seg.n_active = example.n_active;
        out.push_back(std::move(seg));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

std::vector<const ManifestEntry *> Manifest::split(const std::string &name) const {
    std::vector<const ManifestEntry *> out;
    for (const auto &p : pieces)
        if (name == "all" || p.split == name) out.push_back(&p);
    return out;
}

json to_json(const Manifest &m) {
    json pieces = json::array();
    for (const auto &p : m.pieces)
        pieces.push_back({{"piece_id", p.piece_id},
                          {"instruments", p.instruments},
                          {"split", p.split},
                          {"n_active", p.n_active},
                          {"duration_s", p.duration_s},
                          {"seed", p.seed},
                          {"mix", p.mix_path},
                          {"sources", p.source_paths}});
    return {{"format", "wavesep-manifest"},
            {"version", 1},
            {"vocabulary", m.vocabulary},
            {"sample_rate", m.sample_rate},
            {"seed", m.seed},
            {"pieces", pieces}};
}

Manifest manifest_from_json(const json &j) {
    try {
        if (j.value("format", "") != "wavesep-manifest") throw ConfigError("not a wavesep manifest");
        Manifest m;
        m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
        m.sample_rate = j.at("sample_rate").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto &p : j.at("pieces")) {
            ManifestEntry e;
            e.piece_id = p.at("piece_id").get<std::string>();
            e.instruments = p.at("instruments").get<std::vector<std::string>>();
            e.split = p.at("split").get<std::string>();
            e.n_active = p.at("n_active").get<std::size_t>();
            e.duration_s = p.at("duration_s").get<double>();
            e.seed = p.at("seed").get<std::uint64_t>();
            e.mix_path = p.at("mix").get<std::string>();
            e.source_paths = p.at("sources").get<std::vector<std::string>>();
            if (e.source_paths.size() != e.instruments.size())
                throw ConfigError("manifest piece '" + e.piece_id + "' lists mismatched sources");
            m.pieces.push_back(std::move(e));
        }
        return m;
    } catch (const json::exception &e) {
        throw ConfigError(std::string("malformed manifest: ") + e.what());
    }
}

void save_manifest(const Manifest &m, const std::filesystem::path &path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write manifest '" + path.string() + "'");
    out << to_json(m).dump(2) << "\n";
}

Manifest load_manifest(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception &e) {
        throw ConfigError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return manifest_from_json(j);
}

EnsembleExample load_example(const Manifest &manifest, const ManifestEntry &entry,
                             const std::filesystem::path &root) {
    EnsembleExample ex;
    ex.piece_id = entry.piece_id;
    ex.mix = read_wav(root / entry.mix_path);
    ex.vocabulary = manifest.vocabulary;
    ex.labels = LabelVector(manifest.vocabulary.size());
    ex.sources.resize(manifest.vocabulary.size());
    for (auto &s : ex.sources) {
        s.sample_rate = ex.mix.sample_rate;
        s.samples.assign(ex.mix.samples.size(), Real(0));
    }
    for (std::size_t i = 0; i < entry.instruments.size(); ++i) {
        auto it = std::find(manifest.vocabulary.begin(), manifest.vocabulary.end(), entry.instruments[i]);
        if (it == manifest.vocabulary.end())
            throw ConfigError("manifest piece '" + entry.piece_id + "' uses unknown instrument '" +
                              entry.instruments[i] + "'");
        const auto slot = static_cast<std::size_t>(it - manifest.vocabulary.begin());
        auto src = read_wav(root / entry.source_paths[i]);
        if (src.samples.size() != ex.mix.samples.size())
            throw WavError("source '" + entry.source_paths[i] + "' length differs from its mix");
        ex.sources[slot] = std::move(src);
        ex.labels.bits[slot] = 1;
    }
    ex.n_active = ex.labels.count();
    return ex;
}

Manifest plan_dataset(const DataConfig &config) {
    config.validate();
    Manifest m;
    m.vocabulary = canonical_vocabulary(config.vocabulary);
    (void)resolve_instruments(m.vocabulary);
    m.sample_rate = config.sample_rate;
    m.seed = config.seed;
    const auto splits = assign_splits(config.n_pieces, config.test_fraction, config.val_fraction);
    for (std::size_t i = 0; i < config.n_pieces; ++i) {
        Rng rng(Rng::derive(config.seed, i));
        const std::size_t size = config.ensemble_sizes[i % config.ensemble_sizes.size()];
        if (size > m.vocabulary.size())
            throw ConfigError("ensemble size " + std::to_string(size) + " exceeds the vocabulary of " +
                              std::to_string(m.vocabulary.size()));
        auto pool = m.vocabulary;
        rng.shuffle(pool);
        pool.resize(size);
        ManifestEntry e;
        char id[32];
        std::snprintf(id, sizeof(id), "piece_%03zu", i);
        e.piece_id = id;
        e.instruments = canonical_vocabulary(pool);
        e.split = splits[i];
        e.n_active = size;
        e.duration_s = std::round(rng.uniform(config.min_duration_s, config.max_duration_s) * 1000.0) / 1000.0;
        e.seed = rng.next_u64();
        e.mix_path = "pieces/" + e.piece_id + "/mix.wav";
        for (const auto &inst : e.instruments) e.source_paths.push_back("pieces/" + e.piece_id + "/" + inst + ".wav");
        m.pieces.push_back(std::move(e));
    }
    return m;
}

EnsembleExample render_entry(const Manifest &manifest, ManifestEntry &entry) {
    auto ex = generate_piece(resolve_instruments(manifest.vocabulary), entry.instruments, entry.duration_s, entry.seed,
                             manifest.sample_rate, entry.piece_id);
    entry.instruments = ex.active_instruments();
    entry.n_active = ex.n_active;
    entry.source_paths.clear();
    for (const auto &inst : entry.instruments)
        entry.source_paths.push_back("pieces/" + entry.piece_id + "/" + inst + ".wav");
    return ex;
}

std::vector<std::string> assign_splits(std::size_t n_pieces, double test_fraction, double val_fraction) {
    std::vector<std::string> split(n_pieces, "train");
    // Piece i is chosen when floor((i+1) f) steps past floor(i f).
    auto chosen = [](std::size_t i, double f) {
        return std::floor(static_cast<double>(i + 1) * f) > std::floor(static_cast<double>(i) * f);
    };
    std::size_t rest = 0;
    for (std::size_t i = 0; i < n_pieces; ++i) {
        if (chosen(i, test_fraction)) {
            split[i] = "test";
        } else {
            if (chosen(rest, val_fraction)) split[i] = "val";
            ++rest;
        }
    }
    return split;
}

}  // namespace wavesep
