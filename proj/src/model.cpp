#include "wavesep/model.hpp"

#include <algorithm>
#include <cmath>

#include "wavesep/rng.hpp"

namespace wavesep {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxPlanInput = std::size_t(1) << 22;
constexpr const char *kModelFormat = "wavesep-model";

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng &rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<Real> w(shape_numel(shape));
    for (auto &v : w) v = static_cast<Real>(rng.uniform(-limit, limit));
    return Tensor::from(std::move(shape), std::move(w), true);
}

Tensor conv_weight(std::size_t c_out, std::size_t c_in, std::size_t k, Rng &rng) {
    return glorot({c_out, c_in, k}, c_in * k, c_out * k, rng);
}

Tensor labels_tensor(const LabelVector &labels) {
    std::vector<Real> c(labels.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = labels[i] ? Real(1) : Real(0);
    return Tensor::from({labels.size(), 1}, std::move(c));
}

}  // namespace

std::optional<ShapePlan> trace_shapes(const ModelConfig &config, std::size_t input_length) {
    const std::size_t kd = config.kernel_down, ku = config.kernel_up;
    if (kd == 0 || ku == 0 || input_length == 0) return std::nullopt;
    ShapePlan plan;
    plan.input_length = input_length;
    std::size_t len = input_length;
    for (std::size_t level = 0; level < config.depth; ++level) {
        if (len < kd) return std::nullopt;
        len -= kd - 1;
        plan.encoder_lengths.push_back(len);
        len = (len + 1) / 2;
        plan.decimated_lengths.push_back(len);
    }
    if (len < kd) return std::nullopt;
    len -= kd - 1;
    plan.bottleneck_length = len;
    for (std::size_t level = config.depth; level-- > 0;) {
        if (len < 2) return std::nullopt;
        len = 2 * len - 1;
        plan.upsampled_lengths.push_back(len);
        const std::size_t skip = plan.encoder_lengths[level];
        if (skip < len || (skip - len) % 2 != 0) return std::nullopt;
        if (len < ku) return std::nullopt;
        len -= ku - 1;
        plan.decoder_lengths.push_back(len);
    }
    if (input_length < len || (input_length - len) % 2 != 0) return std::nullopt;
    plan.output_length = len;
    return plan;
}

ShapePlan plan_shapes(const ModelConfig &config, std::size_t requested_output) {
    if (requested_output < 1) throw ShapeError("plan_shapes: requested output must be >= 1");
    if (config.kernel_down % 2 == 0 || config.kernel_up % 2 == 0)
        throw ShapeError("plan_shapes: kernel sizes must be odd");
    for (std::size_t n = requested_output; n <= kMaxPlanInput; ++n) {
        auto plan = trace_shapes(config, n);
        if (plan && plan->output_length >= requested_output) return *plan;
    }
    throw ShapeError("plan_shapes: no valid input length up to " + std::to_string(kMaxPlanInput) +
                     " for depth " + std::to_string(config.depth));
}

Tensor conditioning_gate(const LabelVector &labels, const Tensor &weight, const Tensor &bias) {
    if (weight.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weight.dim(0))
        throw ShapeError("conditioning: weight " + shape_str(weight.shape()) + " / bias " +
                         shape_str(bias.shape()) + " mismatch");
    if (weight.dim(1) != labels.size())
        throw ShapeError("conditioning: weight expects " + std::to_string(weight.dim(1)) +
                         " labels, got " + std::to_string(labels.size()));
    // W c + b as a width-1 valid convolution over a length-1 "signal".
    auto kernels = reshape(weight, {weight.dim(0), weight.dim(1), 1});
    return sigmoid(conv1d_valid(labels_tensor(labels), kernels, bias));
}

Tensor condition_bottleneck(const Tensor &z, const LabelVector &labels, const Tensor &weight,
                            const Tensor &bias) {
    if (z.rank() != 2 || weight.rank() != 2 || z.dim(0) != weight.dim(0))
        throw ShapeError("condition_bottleneck: features " + shape_str(z.shape()) + " vs weight " +
                         shape_str(weight.shape()));
    return mul(z, conditioning_gate(labels, weight, bias));
}

Tensor make_training_target(const EnsembleExample &example, const std::vector<std::string> &model_vocabulary,
                            const ShapePlan &plan, std::size_t offset) {
    if (example.sources.size() != example.vocabulary.size())
        throw ShapeError("example '" + example.piece_id + "' has mismatched source/vocabulary counts");
    if (offset + plan.input_length > example.length())
        throw ShapeError("target window exceeds example '" + example.piece_id + "'");
    const std::size_t k = model_vocabulary.size();
    const std::size_t out = plan.output_length;
    const std::size_t start = offset + plan.crop();
    std::vector<Real> target(k * out, Real(0));
    for (std::size_t s = 0; s < example.vocabulary.size(); ++s) {
        if (!example.labels[s]) continue;
        const auto &name = example.vocabulary[s];
        auto it = std::find(model_vocabulary.begin(), model_vocabulary.end(), name);
        if (it == model_vocabulary.end())
            throw ConfigError("unknown instrument '" + name + "' in example '" + example.piece_id + "'");
        const auto slot = static_cast<std::size_t>(it - model_vocabulary.begin());
        const auto &src = example.sources[s].samples;
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(start), out, target.begin() + slot * out);
    }
    return Tensor::from({k, out}, std::move(target));
}

std::vector<ActiveSource> extract_active_sources(std::span<const AudioTrack> outputs, double threshold_db) {
    std::vector<ActiveSource> active;
    for (std::size_t slot = 0; slot < outputs.size(); ++slot) {
        const double level = rms_dbfs(outputs[slot].samples);
        if (level > threshold_db) active.push_back({slot, outputs[slot].samples, level});
    }
    return active;
}

std::vector<ActiveSource> extract_active_sources(const Tensor &outputs, double threshold_db) {
    if (outputs.rank() != 2) throw ShapeError("extract_active_sources expects [K, L]");
    std::vector<AudioTrack> tracks(outputs.dim(0));
    const std::size_t len = outputs.dim(1);
    auto d = outputs.data();
    for (std::size_t k = 0; k < tracks.size(); ++k)
        tracks[k].samples.assign(d.begin() + static_cast<std::ptrdiff_t>(k * len),
                                 d.begin() + static_cast<std::ptrdiff_t>((k + 1) * len));
    return extract_active_sources(tracks, threshold_db);
}

std::vector<std::string> canonical_vocabulary(std::vector<std::string> names) {
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    return names;
}

// ---------------------------------------------------------------------------
// WaveUNet

WaveUNet::WaveUNet(ModelConfig config, std::vector<std::string> vocabulary, std::uint64_t seed)
    : config_(std::move(config)), vocabulary_(std::move(vocabulary)) {
    config_.validate();
    if (vocabulary_.size() > config_.num_sources)
        throw ConfigError("vocabulary of " + std::to_string(vocabulary_.size()) + " instruments exceeds K = " +
                          std::to_string(config_.num_sources));
    for (std::size_t i = vocabulary_.size(); i < config_.num_sources; ++i)
        vocabulary_.push_back("<unused:" + std::to_string(i) + ">");

    Rng rng(seed);
    const auto &c = config_;
    std::size_t channels = 1;
    for (std::size_t level = 0; level < c.depth; ++level) {
        const std::size_t f = c.filters_at(level);
        enc_w_.push_back(params_.size());
        add_param("enc" + std::to_string(level) + ".weight", conv_weight(f, channels, c.kernel_down, rng));
        enc_b_.push_back(params_.size());
        add_param("enc" + std::to_string(level) + ".bias", Tensor::zeros({f}, true));
        channels = f;
    }
    const std::size_t fb = c.bottleneck_filters();
    bottleneck_w_ = params_.size();
    add_param("bottleneck.weight", conv_weight(fb, channels, c.kernel_down, rng));
    bottleneck_b_ = params_.size();
    add_param("bottleneck.bias", Tensor::zeros({fb}, true));
    if (c.conditioning_enabled) {
        cond_w_ = params_.size();
        add_param("cond.weight", glorot({fb, c.num_sources}, c.num_sources, fb, rng));
        cond_b_ = params_.size();
        add_param("cond.bias", Tensor::zeros({fb}, true));
    }
    channels = fb;
    dec_w_.resize(c.depth);
    dec_b_.resize(c.depth);
    for (std::size_t level = c.depth; level-- > 0;) {
        const std::size_t f = c.filters_at(level);
        dec_w_[level] = params_.size();
        add_param("dec" + std::to_string(level) + ".weight", conv_weight(f, f + channels, c.kernel_up, rng));
        dec_b_[level] = params_.size();
        add_param("dec" + std::to_string(level) + ".bias", Tensor::zeros({f}, true));
        channels = f;
    }
    out_w_ = params_.size();
    add_param("out.weight", conv_weight(c.num_sources, channels + 1, 1, rng));
    out_b_ = params_.size();
    add_param("out.bias", Tensor::zeros({c.num_sources}, true));
}

void WaveUNet::add_param(const std::string &name, Tensor t) {
    names_.push_back(name);
    params_.push_back(std::move(t));
}

const Tensor &WaveUNet::parameter(const std::string &name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return params_[i];
    throw ConfigError("model has no parameter '" + name + "'");
}

std::size_t WaveUNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto &t : params_) n += t.numel();
    return n;
}

Tensor WaveUNet::forward(std::span<const Real> mix, const LabelVector &labels) const {
    if (!trace_shapes(config_, mix.size()))
        throw ShapeError("segment length " + std::to_string(mix.size()) +
                         " is not a valid input length for this network");
    if (config_.conditioning_enabled && labels.size() != config_.num_sources)
        throw ShapeError("expected " + std::to_string(config_.num_sources) + " labels, got " +
                         std::to_string(labels.size()));
    const Real slope = config_.leaky_slope;
    auto input = Tensor::from({1, mix.size()}, std::vector<Real>(mix.begin(), mix.end()));

    std::vector<Tensor> skips;
    Tensor h = input;
    for (std::size_t level = 0; level < config_.depth; ++level) {
        h = leaky_relu(conv1d_valid(h, p(enc_w_[level]), p(enc_b_[level])), slope);
        skips.push_back(h);
        h = decimate2(h);
    }
    h = leaky_relu(conv1d_valid(h, p(bottleneck_w_), p(bottleneck_b_)), slope);
    if (config_.conditioning_enabled) h = condition_bottleneck(h, labels, p(*cond_w_), p(*cond_b_));
    for (std::size_t level = config_.depth; level-- > 0;) {
        h = crop_concat(skips[level], lininterp_upsample2(h));
        h = leaky_relu(conv1d_valid(h, p(dec_w_[level]), p(dec_b_[level])), slope);
    }
    h = crop_concat(input, h);
    return tanh(conv1d_valid(h, p(out_w_), p(out_b_)));
}

std::vector<AudioTrack> WaveUNet::separate(const AudioTrack &mix, const LabelVector &labels,
                                           std::size_t segment_output) const {
    const auto plan = plan_shapes(config_, segment_output);
    const std::size_t out = plan.output_length;
    const std::size_t crop = plan.crop();
    const std::size_t n = mix.samples.size();
    const std::size_t n_segments = n == 0 ? 0 : (n + out - 1) / out;

    // padded[crop + t] == mix[t]
    std::vector<Real> padded(n_segments * out + 2 * crop, Real(0));
    std::copy(mix.samples.begin(), mix.samples.end(), padded.begin() + static_cast<std::ptrdiff_t>(crop));

    std::vector<AudioTrack> result(config_.num_sources);
    for (auto &t : result) {
        t.sample_rate = mix.sample_rate;
        t.samples.assign(n, Real(0));
    }
    NoGradGuard no_grad;
    for (std::size_t s = 0; s < n_segments; ++s) {
        const std::size_t start = s * out;
        auto y = forward(std::span<const Real>(padded).subspan(start, plan.input_length), labels);
        auto d = y.data();
        const std::size_t take = std::min(out, n - start);
        for (std::size_t k = 0; k < result.size(); ++k)
            std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(k * out), take,
                        result[k].samples.begin() + static_cast<std::ptrdiff_t>(start));
    }
    return result;
}

ParamContainer WaveUNet::to_container(const json &extra_metadata) const {
    json meta = extra_metadata.is_object() ? extra_metadata : json::object();
    meta["format"] = kModelFormat;
    meta["config"] = to_json(config_);
    meta["vocabulary"] = vocabulary_;
    ParamContainer c;
    c.metadata = meta.dump();
    for (std::size_t i = 0; i < params_.size(); ++i) c.add(names_[i], params_[i]);
    return c;
}

WaveUNet WaveUNet::from_container(const ParamContainer &container) {
    json meta;
    try {
        meta = json::parse(container.metadata);
    } catch (const json::exception &e) {
        throw CheckpointError(std::string("checkpoint metadata is not JSON: ") + e.what());
    }
    if (meta.value("format", "") != kModelFormat) throw CheckpointError("container is not a model checkpoint");
    auto config = model_config_from_json(meta.at("config"));
    auto vocabulary = meta.at("vocabulary").get<std::vector<std::string>>();
    if (vocabulary.size() != config.num_sources)
        throw CheckpointError("checkpoint vocabulary size " + std::to_string(vocabulary.size()) +
                              " does not match K = " + std::to_string(config.num_sources));
    WaveUNet model(config, vocabulary, 0);
    for (std::size_t i = 0; i < model.params_.size(); ++i) {
        const Tensor &stored = container.at(model.names_[i]);
        if (stored.shape() != model.params_[i].shape())
            throw CheckpointError("parameter '" + model.names_[i] + "' has shape " + shape_str(stored.shape()) +
                                  ", expected " + shape_str(model.params_[i].shape()));
        auto dst = model.params_[i].mutable_data();
        std::copy(stored.data().begin(), stored.data().end(), dst.begin());
    }
    return model;
}

void WaveUNet::save(const std::filesystem::path &path) const { save_container(path, to_container()); }

WaveUNet WaveUNet::load(const std::filesystem::path &path) { return from_container(load_container(path)); }

}  // namespace wavesep
