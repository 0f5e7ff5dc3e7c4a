#include "wavesep/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "wavesep/rng.hpp"

namespace wavesep {

using nlohmann::json;

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string num(const std::optional<double> &v) { return v ? num(*v) : std::string(); }

}  // namespace

std::string loss_log_csv(const std::vector<LossRow> &rows) {
    std::ostringstream os;
    os << "step,train_loss,val_loss,silent_slot_loss,active_slot_loss\n";
    for (const auto &r : rows)
        os << r.step << ',' << num(r.train_loss) << ',' << num(r.val_loss) << ',' << num(r.silent_slot_loss) << ','
           << num(r.active_slot_loss) << '\n';
    return os.str();
}

std::vector<LossRow> parse_loss_log(const std::string &csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != "step,train_loss,val_loss,silent_slot_loss,active_slot_loss")
        throw TrainingError("loss log has an unexpected header");
    std::vector<LossRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        cells.resize(5);
        try {
            LossRow r;
            r.step = std::stoull(cells[0]);
            r.train_loss = std::stod(cells[1]);
            auto opt = [](const std::string &c) { return c.empty() ? std::optional<double>() : std::stod(c); };
            r.val_loss = opt(cells[2]);
            r.silent_slot_loss = opt(cells[3]);
            r.active_slot_loss = opt(cells[4]);
            rows.push_back(r);
        } catch (const std::exception &) {
            throw TrainingError("malformed loss log line '" + line + "'");
        }
    }
    return rows;
}

Tensor batch_loss(const WaveUNet &model, std::span<const Segment *const> batch, bool include_silent_slots) {
    if (batch.empty()) throw TrainingError("empty batch");
    const std::size_t k = model.config().num_sources;
    Tensor total;
    for (const Segment *seg : batch) {
        if (seg->target.dim(0) != k)
            throw TrainingError("segment target has " + std::to_string(seg->target.dim(0)) + " slots, model has " +
                                std::to_string(k));
        auto pred = model.forward(seg->input, seg->labels);
        Tensor loss;
        if (include_silent_slots) {
            loss = mse_loss(pred, seg->target);
        } else {
            std::vector<Real> m(k);
            for (std::size_t i = 0; i < k; ++i) m[i] = seg->labels[i] ? Real(1) : Real(0);
            auto mask = Tensor::from({k, 1}, std::move(m));
            loss = mse_loss(mul(pred, mask), mul(seg->target, mask));
        }
        total = total.defined() ? add(total, loss) : loss;
    }
    return scale(total, Real(1) / static_cast<Real>(batch.size()));
}

ValidationResult validate(const WaveUNet &model, std::span<const Segment> segments) {
    const std::size_t k = model.config().num_sources;
    ValidationResult res;
    res.per_slot_loss.assign(k, 0.0);
    double silent = 0, active = 0;
    std::size_t n_silent = 0, n_active = 0;
    NoGradGuard no_grad;
    for (const auto &seg : segments) {
        if (seg.target.dim(0) != k || seg.labels.size() != k)
            throw TrainingError("validation data has K = " + std::to_string(seg.target.dim(0)) +
                                ", checkpoint has K = " + std::to_string(k));
        auto pred = model.forward(seg.input, seg.labels);
        const std::size_t len = pred.dim(1);
        auto p = pred.data();
        auto t = seg.target.data();
        for (std::size_t slot = 0; slot < k; ++slot) {
            double acc = 0;
            for (std::size_t i = slot * len; i < (slot + 1) * len; ++i) {
                const double d = static_cast<double>(p[i]) - t[i];
                acc += d * d;
            }
            const double mse = acc / static_cast<double>(len);
            res.per_slot_loss[slot] += mse;
            if (seg.labels[slot]) {
                active += mse;
                ++n_active;
            } else {
                silent += mse;
                ++n_silent;
            }
        }
    }
    if (segments.empty()) return res;
    const auto n = static_cast<double>(segments.size());
    double mean = 0;
    for (auto &v : res.per_slot_loss) {
        v /= n;
        mean += v;
    }
    res.mean_loss = mean / static_cast<double>(k);
    if (n_silent) res.silent_slot_loss = silent / static_cast<double>(n_silent);
    if (n_active) res.active_slot_loss = active / static_cast<double>(n_active);
    return res;
}

TrainingState::TrainingState(WaveUNet m, AdamOptions options)
    : model(std::move(m)), adam(AdamState::for_params(model.parameters(), options)) {}

void save_training_checkpoint(const std::filesystem::path &path, const TrainingState &state) {
    const auto &o = state.adam.options;
    json extra = {{"train_step", state.adam.step_count},
                  {"adam", {{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}}}};
    auto c = state.model.to_container(extra);
    const auto &names = state.model.parameter_names();
    const auto &params = state.model.parameters();
    for (std::size_t i = 0; i < names.size(); ++i) {
        c.add("adam.m." + names[i], Tensor::from(params[i].shape(), state.adam.m[i]));
        c.add("adam.v." + names[i], Tensor::from(params[i].shape(), state.adam.v[i]));
    }
    save_container(path, c);
}

TrainingState load_training_checkpoint(const std::filesystem::path &path) {
    const auto c = load_container(path);
    auto model = WaveUNet::from_container(c);
    const auto meta = json::parse(c.metadata);
    AdamOptions options;
    if (meta.contains("adam")) {
        const auto &a = meta.at("adam");
        options.lr = a.at("lr").get<Real>();
        options.beta1 = a.at("beta1").get<Real>();
        options.beta2 = a.at("beta2").get<Real>();
        options.eps = a.at("eps").get<Real>();
    }
    AdamState adam = AdamState::for_params(model.parameters(), options);
    adam.step_count = meta.value("train_step", std::uint64_t{0});
    const auto &names = model.parameter_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (const auto *m = c.find("adam.m." + names[i])) std::copy(m->data().begin(), m->data().end(), adam.m[i].begin());
        if (const auto *v = c.find("adam.v." + names[i])) std::copy(v->data().begin(), v->data().end(), adam.v[i].begin());
    }
    return TrainingState(std::move(model), std::move(adam));
}

TrainResult train(TrainingState &state, std::span<const Segment> train, std::span<const Segment> val,
                  const TrainConfig &config, const std::function<void(const LossRow &)> &on_step) {
    config.validate();
    if (train.empty()) throw TrainingError("no training segments");
    const std::size_t k = state.model.config().num_sources;
    for (const auto &s : train)
        if (s.target.dim(0) != k) throw TrainingError("training data K does not match the model");

    const bool write_files = !config.checkpoint_dir.empty();
    const std::filesystem::path dir = config.checkpoint_dir;
    TrainResult result;
    auto &params = state.model.parameters();

    // Batch order is a pure function of (seed, epoch), so resuming at any
    // step reproduces the uninterrupted sequence.
    const std::size_t per_epoch = train.size();
    std::size_t cached_epoch = SIZE_MAX;
    std::vector<std::size_t> order;
    auto order_for = [&](std::size_t epoch) -> const std::vector<std::size_t> & {
        if (epoch != cached_epoch) {
            order.resize(per_epoch);
            for (std::size_t i = 0; i < per_epoch; ++i) order[i] = i;
            Rng rng(Rng::derive(config.seed, epoch));
            rng.shuffle(order);
            cached_epoch = epoch;
        }
        return order;
    };

    std::vector<const Segment *> batch;
    while (state.step() < config.max_steps) {
        const std::size_t step = state.step() + 1;
        batch.clear();
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            const std::size_t flat = (step - 1) * config.batch_size + b;
            batch.push_back(&train[order_for(flat / per_epoch)[flat % per_epoch]]);
        }

        double lr = config.lr;
        if (config.lr_decay_every > 0) lr *= std::pow(config.lr_decay_gamma, double((step - 1) / config.lr_decay_every));
        state.adam.options.lr = static_cast<Real>(lr);

        zero_grads(params);
        auto loss = batch_loss(state.model, batch);
        const double value = loss.item();
        if (!std::isfinite(value))
            throw TrainingError("non-finite loss at step " + std::to_string(step) + " (batch " +
                                std::to_string(step - 1) + ", first segment '" + batch.front()->piece_id +
                                "' @" + std::to_string(batch.front()->offset) + ")");
        loss.backward();
        adam_step(params, state.adam);

        LossRow row{step, value, {}, {}, {}};
        if (!val.empty() && config.validation_interval > 0 &&
            (step % config.validation_interval == 0 || step == config.max_steps)) {
            auto v = validate(state.model, val);
            row.val_loss = v.mean_loss;
            row.silent_slot_loss = v.silent_slot_loss;
            row.active_slot_loss = v.active_slot_loss;
        }
        result.log.push_back(row);
        if (on_step) on_step(row);

        if (write_files && config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0)
            save_training_checkpoint(dir / ("checkpoint_" + std::to_string(step) + ".wsc"), state);
    }

    if (write_files) {
        result.final_checkpoint = dir / "checkpoint.wsc";
        save_training_checkpoint(result.final_checkpoint, state);
    }
    return result;
}

}  // namespace wavesep
