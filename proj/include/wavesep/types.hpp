#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wavesep/audio.hpp"

namespace wavesep {

// Binary instrument-presence vector, one bit per output slot.
struct LabelVector {
    std::vector<std::uint8_t> bits;

    LabelVector() = default;
    explicit LabelVector(std::size_t k) : bits(k, 0) {}
    explicit LabelVector(std::vector<std::uint8_t> b) : bits(std::move(b)) {}

    std::size_t size() const { return bits.size(); }
    std::size_t count() const;
    bool operator[](std::size_t i) const { return bits.at(i) != 0; }
    std::string to_string() const;  // e.g. "0101"
    bool operator==(const LabelVector &) const = default;
};

// One mixture with all K slot tracks aligned to it. `vocabulary` names the
// slots in order; absent slots hold exact zeros.
struct EnsembleExample {
    std::string piece_id;
    AudioTrack mix;
    std::vector<std::string> vocabulary;
    std::vector<AudioTrack> sources;
    LabelVector labels;
    std::size_t n_active = 0;

    std::size_t length() const { return mix.samples.size(); }
    std::vector<std::string> active_instruments() const;
};

}  // namespace wavesep
