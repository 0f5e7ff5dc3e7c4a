#include "wavesep/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace wavesep {

using nlohmann::json;

namespace {

constexpr double kRmsFloorDb = -200.0;

double energy(std::span<const double> x) {
    double e = 0;
    for (double v : x) e += v * v;
    return e;
}

double ratio_db(double num, double den, double cap) {
    if (!(num > 0)) return -cap;
    if (!(den > 0)) return cap;
    return std::clamp(10.0 * std::log10(num / den), -cap, cap);
}

double floored_rms_dbfs(std::span<const Real> x) { return std::max(kRmsFloorDb, rms_dbfs(x)); }

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string fmt(const std::optional<double> &v) { return v ? fmt(*v) : std::string("absent"); }

json opt(const std::optional<double> &v) { return v ? json(*v) : json(nullptr); }

}  // namespace

Decomposition decompose(std::span<const Real> estimate, const std::vector<std::span<const Real>> &references,
                        std::size_t target_index) {
    if (target_index >= references.size()) throw MetricsError("decompose: target index out of range");
    const std::size_t n = estimate.size();
    for (const auto &r : references)
        if (r.size() != n) throw MetricsError("decompose: estimate and references differ in length");

    Eigen::VectorXd est(static_cast<Eigen::Index>(n));
    for (std::size_t t = 0; t < n; ++t) est[static_cast<Eigen::Index>(t)] = estimate[t];

    auto column = [n](std::span<const Real> r) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(n));
        for (std::size_t t = 0; t < n; ++t) v[static_cast<Eigen::Index>(t)] = r[t];
        return v;
    };
    const Eigen::VectorXd target_ref = column(references[target_index]);
    const double target_energy = target_ref.squaredNorm();
    if (!(target_energy > 0)) throw MetricsError("decompose: target reference is silent");

    // Target first, then every other non-silent reference.
    std::vector<Eigen::VectorXd> cols{target_ref};
    for (std::size_t i = 0; i < references.size(); ++i) {
        if (i == target_index) continue;
        auto c = column(references[i]);
        if (c.squaredNorm() > 0) cols.push_back(std::move(c));
    }
    Eigen::MatrixXd basis(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) basis.col(static_cast<Eigen::Index>(j)) = cols[j];

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis);
    qr.setThreshold(1e-10);
    const Eigen::VectorXd proj_all = basis * qr.solve(est);
    const Eigen::VectorXd proj_target = (target_ref.dot(est) / target_energy) * target_ref;

    Decomposition d;
    d.dropped_references = cols.size() - static_cast<std::size_t>(qr.rank());
    d.target.resize(n);
    d.interference.resize(n);
    d.artifacts.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const auto i = static_cast<Eigen::Index>(t);
        d.target[t] = proj_target[i];
        d.interference[t] = proj_all[i] - proj_target[i];
        d.artifacts[t] = est[i] - proj_all[i];
    }
    return d;
}

SeparationScores sdr_sir_sar(const Decomposition &d, double cap_db) {
    const std::size_t n = d.target.size();
    std::vector<double> distortion(n), signal_plus_interf(n);
    for (std::size_t t = 0; t < n; ++t) {
        distortion[t] = d.interference[t] + d.artifacts[t];
        signal_plus_interf[t] = d.target[t] + d.interference[t];
    }
    const double e_target = energy(d.target);
    SeparationScores s;
    s.sdr_db = ratio_db(e_target, energy(distortion), cap_db);
    s.sir_db = ratio_db(e_target, energy(d.interference), cap_db);
    s.sar_db = ratio_db(energy(signal_plus_interf), energy(d.artifacts), cap_db);
    return s;
}

std::vector<MetricsRecord> evaluate_piece(const std::string &piece_id, const std::vector<std::string> &slot_names,
                                          std::span<const AudioTrack> estimates,
                                          std::span<const AudioTrack> references, std::size_t n_active,
                                          const EvaluationOptions &options) {
    if (estimates.size() != references.size() || slot_names.size() != references.size())
        throw MetricsError("evaluate_piece: slot counts differ for '" + piece_id + "'");
    const std::size_t len = references.empty() ? 0 : references[0].samples.size();
    for (std::size_t k = 0; k < references.size(); ++k)
        if (references[k].samples.size() != len || estimates[k].samples.size() != len)
            throw MetricsError("evaluate_piece: track lengths differ for '" + piece_id + "' slot " +
                               slot_names[k]);
    const std::size_t seg = options.segment_length == 0 ? std::max<std::size_t>(len, 1) : options.segment_length;

    std::vector<MetricsRecord> records;
    for (std::size_t k = 0; k < references.size(); ++k) {
        MetricsRecord rec;
        rec.piece_id = piece_id;
        rec.instrument = slot_names[k];
        rec.slot = k;
        rec.n_active = n_active;
        rec.est_rms_dbfs = floored_rms_dbfs(estimates[k].samples);

        double sdr = 0, sir = 0, sar = 0;
        std::size_t used = 0;
        for (std::size_t start = 0; start < len; start += seg) {
            const std::size_t count = std::min(seg, len - start);
            auto cut = [&](const AudioTrack &t) { return std::span<const Real>(t.samples).subspan(start, count); };
            if (!(rms_dbfs(cut(references[k])) > options.silence_db)) continue;
            std::vector<std::span<const Real>> refs{cut(references[k])};
            for (std::size_t j = 0; j < references.size(); ++j)
                if (j != k && rms_dbfs(cut(references[j])) > options.silence_db) refs.push_back(cut(references[j]));
            const auto scores = sdr_sir_sar(decompose(cut(estimates[k]), refs, 0), options.cap_db);
            sdr += scores.sdr_db;
            sir += scores.sir_db;
            sar += scores.sar_db;
            ++used;
        }
        if (used > 0) {
            rec.sdr_db = sdr / static_cast<double>(used);
            rec.sir_db = sir / static_cast<double>(used);
            rec.sar_db = sar / static_cast<double>(used);
        }
        records.push_back(std::move(rec));
    }
    return records;
}

GroupBy parse_group_by(const std::string &s) {
    if (s == "overall") return GroupBy::kOverall;
    if (s == "instrument") return GroupBy::kInstrument;
    if (s == "n_active") return GroupBy::kNActive;
    throw MetricsError("unknown group_by '" + s + "' (expected overall, instrument or n_active)");
}

std::string to_string(GroupBy g) {
    switch (g) {
        case GroupBy::kOverall:
            return "overall";
        case GroupBy::kInstrument:
            return "instrument";
        case GroupBy::kNActive:
            return "n_active";
    }
    return "overall";
}

std::vector<AggregateRow> aggregate(const std::vector<MetricsRecord> &records, GroupBy group_by,
                                    const std::string &method, const std::vector<std::string> &keys) {
    auto key_of = [group_by](const MetricsRecord &r) -> std::string {
        switch (group_by) {
            case GroupBy::kInstrument:
                return r.instrument;
            case GroupBy::kNActive:
                return std::to_string(r.n_active);
            case GroupBy::kOverall:
                break;
        }
        return "all";
    };
    // Numeric keys sort numerically; zero-padding makes map order do that.
    auto sort_key = [group_by](const std::string &k) {
        return group_by == GroupBy::kNActive ? std::string(12 - std::min<std::size_t>(12, k.size()), '0') + k : k;
    };
    struct Acc {
        std::string key;
        std::size_t count = 0, absent = 0, total = 0;
        double sdr = 0, sir = 0, sar = 0, rms = 0;
    };
    std::map<std::string, Acc> groups;
    if (group_by == GroupBy::kOverall) groups[sort_key("all")].key = "all";
    for (const auto &k : keys) groups[sort_key(k)].key = k;
    for (const auto &r : records) {
        const auto k = key_of(r);
        auto &a = groups[sort_key(k)];
        a.key = k;
        a.total += 1;
        a.rms += r.est_rms_dbfs;
        if (r.absent()) {
            a.absent += 1;
            continue;
        }
        a.count += 1;
        a.sdr += *r.sdr_db;
        a.sir += *r.sir_db;
        a.sar += *r.sar_db;
    }
    std::vector<AggregateRow> rows;
    for (const auto &[_, a] : groups) {
        AggregateRow row;
        row.method = method;
        row.key = a.key;
        row.count = a.count;
        row.absent_count = a.absent;
        if (a.count > 0) {
            const auto c = static_cast<double>(a.count);
            row.sdr_db = a.sdr / c;
            row.sir_db = a.sir / c;
            row.sar_db = a.sar / c;
        }
        if (a.total > 0) row.est_rms_dbfs = a.rms / static_cast<double>(a.total);
        rows.push_back(std::move(row));
    }
    return rows;
}

json to_json(const MetricsRecord &r) {
    return {{"piece_id", r.piece_id}, {"instrument", r.instrument}, {"slot", r.slot},
            {"n_active", r.n_active}, {"absent", r.absent()},       {"sdr", opt(r.sdr_db)},
            {"sir", opt(r.sir_db)},   {"sar", opt(r.sar_db)},       {"est_rms_dbfs", r.est_rms_dbfs}};
}

json to_json(const AggregateRow &r) {
    return {{"method", r.method},        {"key", r.key},          {"count", r.count},
            {"absent", r.absent_count},  {"sdr", opt(r.sdr_db)},  {"sir", opt(r.sir_db)},
            {"sar", opt(r.sar_db)},      {"est_rms_dbfs", opt(r.est_rms_dbfs)}};
}

std::string records_csv(const std::vector<MetricsRecord> &records) {
    std::ostringstream os;
    os << "piece_id,instrument,n_active,sdr,sir,sar,est_rms_dbfs\n";
    for (const auto &r : records)
        os << r.piece_id << ',' << r.instrument << ',' << r.n_active << ',' << fmt(r.sdr_db) << ','
           << fmt(r.sir_db) << ',' << fmt(r.sar_db) << ',' << fmt(r.est_rms_dbfs) << '\n';
    return os.str();
}

std::string aggregate_csv(const std::vector<AggregateRow> &rows, GroupBy group_by) {
    std::ostringstream os;
    os << "method";
    if (group_by == GroupBy::kInstrument) os << ",instrument";
    if (group_by == GroupBy::kNActive) os << ",n_sources";
    os << ",count,absent,sdr,sir,sar,est_rms_dbfs\n";
    for (const auto &r : rows) {
        os << r.method;
        if (group_by != GroupBy::kOverall) os << ',' << r.key;
        auto cell = [](const std::optional<double> &v) { return v ? fmt(*v) : std::string(); };
        os << ',' << r.count << ',' << r.absent_count << ',' << cell(r.sdr_db) << ',' << cell(r.sir_db) << ','
           << cell(r.sar_db) << ',' << cell(r.est_rms_dbfs) << '\n';
    }
    return os.str();
}

}  // namespace wavesep
