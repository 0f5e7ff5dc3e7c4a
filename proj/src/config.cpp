#include "wavesep/config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <type_traits>

namespace wavesep {

using nlohmann::json;

namespace {

template <typename T>
struct Field {
    const char *key;
    const char *doc;
    std::function<json(const T &)> get;
    std::function<void(T &, const json &)> set;
};

template <typename M>
M convert(const json &j, const std::string &key) {
    auto bad = [&](const char *want) {
        return ConfigError("config key '" + key + "' expects " + want + ", got " + j.dump());
    };
    if constexpr (std::is_same_v<M, bool>) {
        if (!j.is_boolean()) throw bad("a boolean");
        return j.get<bool>();
    } else if constexpr (std::is_same_v<M, std::string>) {
        if (!j.is_string()) throw bad("a string");
        return j.get<std::string>();
    } else if constexpr (std::is_unsigned_v<M>) {
        if (!j.is_number_unsigned()) throw bad("a nonnegative integer");
        return j.get<M>();
    } else if constexpr (std::is_integral_v<M>) {
        if (!j.is_number_integer()) throw bad("an integer");
        return j.get<M>();
    } else if constexpr (std::is_floating_point_v<M>) {
        if (!j.is_number()) throw bad("a number");
        return j.get<M>();
    } else {
        // vectors of strings / integers
        if (!j.is_array()) throw bad("an array");
        M out;
        for (const auto &e : j) out.push_back(convert<typename M::value_type>(e, key));
        return out;
    }
}

template <typename T, typename M>
Field<T> field(const char *key, const char *doc, M T::*member) {
    return {key, doc, [member](const T &c) { return json(c.*member); },
            [member, key](T &c, const json &j) { c.*member = convert<M>(j, key); }};
}

template <typename T>
json dump(const T &c, const std::vector<Field<T>> &fields) {
    json j = json::object();
    for (const auto &f : fields) j[f.key] = f.get(c);
    return j;
}

template <typename T>
T parse(const json &j, const std::vector<Field<T>> &fields, const char *section) {
    if (!j.is_object()) throw ConfigError(std::string("config section '") + section + "' must be an object");
    T c{};
    for (const auto &[key, value] : j.items()) {
        const Field<T> *match = nullptr;
        for (const auto &f : fields)
            if (key == f.key) match = &f;
        if (!match) throw ConfigError(std::string("unknown config key '") + section + "." + key + "'");
        match->set(c, value);
    }
    return c;
}

const std::vector<Field<ModelConfig>> &model_fields() {
    static const std::vector<Field<ModelConfig>> f = {
        field("num_sources", "output slots K (>= 2)", &ModelConfig::num_sources),
        field("depth", "number of down/up-sampling blocks", &ModelConfig::depth),
        field("base_filters", "filters at the first encoder level", &ModelConfig::base_filters),
        field("filter_growth", "extra filters per level", &ModelConfig::filter_growth),
        field("kernel_down", "encoder/bottleneck kernel size (odd)", &ModelConfig::kernel_down),
        field("kernel_up", "decoder kernel size (odd)", &ModelConfig::kernel_up),
        field("leaky_slope", "negative slope of leaky ReLU", &ModelConfig::leaky_slope),
        field("conditioning_enabled", "multiplicative label gate at the bottleneck", &ModelConfig::conditioning_enabled),
        field("output_activation", "output nonlinearity (only \"tanh\")", &ModelConfig::output_activation),
    };
    return f;
}

const std::vector<Field<TrainConfig>> &train_fields() {
    static const std::vector<Field<TrainConfig>> f = {
        field("lr", "Adam learning rate", &TrainConfig::lr),
        field("batch_size", "segments per step", &TrainConfig::batch_size),
        field("max_steps", "total optimizer steps", &TrainConfig::max_steps),
        field("seed", "seed for init and batch order", &TrainConfig::seed),
        field("validation_interval", "steps between validation passes (0 = never)", &TrainConfig::validation_interval),
        field("checkpoint_interval", "steps between checkpoints (0 = final only)", &TrainConfig::checkpoint_interval),
        field("checkpoint_dir", "default output directory", &TrainConfig::checkpoint_dir),
        field("conditioning_enabled", "train the label-conditioned variant", &TrainConfig::conditioning_enabled),
        field("segment_output", "requested output samples per training segment", &TrainConfig::segment_output),
        field("segment_hop", "hop between segments (0 = output length)", &TrainConfig::segment_hop),
        field("lr_decay_gamma", "multiplicative lr decay factor (1 = off)", &TrainConfig::lr_decay_gamma),
        field("lr_decay_every", "apply lr decay every N steps (0 = off)", &TrainConfig::lr_decay_every),
    };
    return f;
}

const std::vector<Field<DataConfig>> &data_fields() {
    static const std::vector<Field<DataConfig>> f = {
        field("vocabulary", "instrument names, one slot each", &DataConfig::vocabulary),
        field("n_pieces", "number of generated pieces", &DataConfig::n_pieces),
        field("ensemble_sizes", "active-instrument counts, cycled over pieces", &DataConfig::ensemble_sizes),
        field("min_duration_s", "shortest piece", &DataConfig::min_duration_s),
        field("max_duration_s", "longest piece", &DataConfig::max_duration_s),
        field("sample_rate", "Hz", &DataConfig::sample_rate),
        field("seed", "dataset seed", &DataConfig::seed),
        field("test_fraction", "fraction of pieces in the test split", &DataConfig::test_fraction),
        field("val_fraction", "fraction of non-test pieces used for validation", &DataConfig::val_fraction),
    };
    return f;
}

const std::vector<Field<MetricsConfig>> &metrics_fields() {
    static const std::vector<Field<MetricsConfig>> f = {
        field("threshold_db", "active-source RMS threshold in dBFS (strict)", &MetricsConfig::threshold_db),
        field("silence_db", "reference RMS below this is treated as silence", &MetricsConfig::silence_db),
        field("cap_db", "magnitude cap for degenerate ratios", &MetricsConfig::cap_db),
        field("eval_segment_s", "evaluation segment length in seconds", &MetricsConfig::eval_segment_s),
    };
    return f;
}

const std::vector<Field<NmfConfig>> &nmf_fields() {
    static const std::vector<Field<NmfConfig>> f = {
        field("window", "STFT window (power of two)", &NmfConfig::window),
        field("hop", "STFT hop (window / 2)", &NmfConfig::hop),
        field("templates", "templates per instrument", &NmfConfig::templates),
        field("iterations", "template learning iterations", &NmfConfig::iterations),
        field("separation_iterations", "activation inference iterations", &NmfConfig::separation_iterations),
        field("note_duration_s", "isolated training note length", &NmfConfig::note_duration_s),
        field("pitch_step", "semitone step between training notes", &NmfConfig::pitch_step),
        field("seed", "template initialization seed", &NmfConfig::seed),
    };
    return f;
}

}  // namespace

void ModelConfig::validate() const {
    if (num_sources < 2) throw ConfigError("model.num_sources must be >= 2");
    if (depth < 1) throw ConfigError("model.depth must be >= 1");
    if (base_filters < 1) throw ConfigError("model.base_filters must be >= 1");
    if (kernel_down % 2 == 0 || kernel_up % 2 == 0) throw ConfigError("model kernel sizes must be odd");
    if (!(leaky_slope >= 0 && leaky_slope < 1)) throw ConfigError("model.leaky_slope must be in [0, 1)");
    if (output_activation != "tanh") throw ConfigError("model.output_activation must be \"tanh\"");
}

void TrainConfig::validate() const {
    if (!(lr >= 0)) throw ConfigError("train.lr must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (segment_output < 1) throw ConfigError("train.segment_output must be >= 1");
    if (!(lr_decay_gamma > 0 && lr_decay_gamma <= 1)) throw ConfigError("train.lr_decay_gamma must be in (0, 1]");
}

void DataConfig::validate() const {
    if (vocabulary.size() < 2) throw ConfigError("data.vocabulary needs at least 2 instruments");
    std::set<std::string> unique(vocabulary.begin(), vocabulary.end());
    if (unique.size() != vocabulary.size()) throw ConfigError("data.vocabulary has duplicate names");
    if (ensemble_sizes.empty()) throw ConfigError("data.ensemble_sizes is empty");
    for (auto s : ensemble_sizes)
        if (s < 2 || s > vocabulary.size())
            throw ConfigError("data.ensemble_sizes entries must be in [2, vocabulary size]");
    if (!(min_duration_s > 0 && max_duration_s >= min_duration_s)) throw ConfigError("data durations invalid");
    if (sample_rate <= 0) throw ConfigError("data.sample_rate must be positive");
    if (!(test_fraction >= 0 && test_fraction < 1)) throw ConfigError("data.test_fraction must be in [0, 1)");
    if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("data.val_fraction must be in [0, 1)");
}

json to_json(const ModelConfig &c) { return dump(c, model_fields()); }
json to_json(const TrainConfig &c) { return dump(c, train_fields()); }
json to_json(const DataConfig &c) { return dump(c, data_fields()); }
json to_json(const MetricsConfig &c) { return dump(c, metrics_fields()); }
json to_json(const NmfConfig &c) { return dump(c, nmf_fields()); }

json to_json(const RunConfig &c) {
    return json{{"model", to_json(c.model)},
                {"train", to_json(c.train)},
                {"data", to_json(c.data)},
                {"metrics", to_json(c.metrics)},
                {"nmf", to_json(c.nmf)}};
}

ModelConfig model_config_from_json(const json &j) { return parse(j, model_fields(), "model"); }
TrainConfig train_config_from_json(const json &j) { return parse(j, train_fields(), "train"); }
DataConfig data_config_from_json(const json &j) { return parse(j, data_fields(), "data"); }
MetricsConfig metrics_config_from_json(const json &j) { return parse(j, metrics_fields(), "metrics"); }
NmfConfig nmf_config_from_json(const json &j) { return parse(j, nmf_fields(), "nmf"); }

RunConfig run_config_from_json(const json &j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    RunConfig c;
    for (const auto &[key, value] : j.items()) {
        if (key == "model")
            c.model = model_config_from_json(value);
        else if (key == "train")
            c.train = train_config_from_json(value);
        else if (key == "data")
            c.data = data_config_from_json(value);
        else if (key == "metrics")
            c.metrics = metrics_config_from_json(value);
        else if (key == "nmf")
            c.nmf = nmf_config_from_json(value);
        else
            throw ConfigError("unknown config section '" + key + "'");
    }
    return c;
}

RunConfig load_run_config(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception &e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

std::string config_reference() {
    std::ostringstream os;
    auto section = [&os](const char *name, const auto &fields, const json &defaults) {
        os << "[" << name << "]\n";
        for (const auto &f : fields)
            os << "  " << name << "." << f.key << " = " << defaults[f.key].dump() << "\n      " << f.doc << "\n";
    };
    const RunConfig d;
    section("model", model_fields(), to_json(d.model));
    section("train", train_fields(), to_json(d.train));
    section("data", data_fields(), to_json(d.data));
    section("metrics", metrics_fields(), to_json(d.metrics));
    section("nmf", nmf_fields(), to_json(d.nmf));
    return os.str();
}

}  // namespace wavesep
