#pragma once

// Two synthetic instruments at the same pitch whose partials never overlap:
// one carries the odd harmonics, the other the even ones.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "wavesep/nmf.hpp"
#include "wavesep/synth.hpp"

namespace wavesep::testing {

inline InstrumentSpec odd_partials() { return {"odd", {1.0, 0.0, 0.6, 0.0, 0.3}, 0.01, 0.02, 0.8, 0, 127, 0, 0}; }
inline InstrumentSpec even_partials() { return {"even", {0.0, 1.0, 0.0, 0.5, 0.0, 0.25}, 0.01, 0.02, 0.5, 0, 127, 0, 0}; }

// Nonincreasing up to `tol` relative to the current value at every step.
inline bool monotone_nonincreasing(const std::vector<double> &obj, double tol = 1e-9) {
    for (std::size_t i = 1; i < obj.size(); ++i)
        if (obj[i] > obj[i - 1] + tol * std::max(1.0, std::abs(obj[i - 1]))) return false;
    return true;
}

struct DisjointCase {
    TemplateBank bank;
    AudioTrack mix;
    std::vector<AudioTrack> refs;  // odd, even
    std::map<std::string, std::vector<double>> template_objectives;
};

inline DisjointCase disjoint_case(int pitch = 57) {
    DisjointCase c;
    const auto odd = odd_partials(), even = even_partials();
    std::map<std::string, std::vector<AudioTrack>> notes;
    for (int p : {pitch, pitch}) {
        notes["odd"].push_back(synth_note(odd, p, 0.6));
        notes["even"].push_back(synth_note(even, p, 0.6));
    }
    TemplateOptions o;
    o.rank = 2;
    o.iterations = 150;
    c.bank = learn_templates(notes, o, &c.template_objectives);

    c.refs = {synth_note(odd, pitch, 1.0), synth_note(even, pitch, 1.0)};
    for (auto &r : c.refs)
        for (auto &v : r.samples) v *= Real(0.45);
    c.mix = c.refs[0];
    for (std::size_t t = 0; t < c.mix.samples.size(); ++t) c.mix.samples[t] += c.refs[1].samples[t];
    return c;
}

// Share of the estimate's spectral energy that falls in the bins where its
// own reference dominates the other one.
inline double in_band_fraction(const AudioTrack &estimate, const AudioTrack &own, const AudioTrack &other,
                               std::size_t window = 512, std::size_t hop = 256) {
    const auto e = stft(estimate, window, hop), a = stft(own, window, hop), b = stft(other, window, hop);
    std::vector<double> pa(a.bins, 0), pb(a.bins, 0), pe(a.bins, 0);
    for (std::size_t f = 0; f < a.frames; ++f)
        for (std::size_t k = 0; k < a.bins; ++k) {
            pa[k] += std::norm(a.at(k, f));
            pb[k] += std::norm(b.at(k, f));
            pe[k] += std::norm(e.at(k, f));
        }
    double in = 0, total = 0;
    for (std::size_t k = 0; k < a.bins; ++k) {
        total += pe[k];
        if (pa[k] > pb[k]) in += pe[k];
    }
    return total > 0 ? in / total : 0;
}

}  // namespace wavesep::testing
