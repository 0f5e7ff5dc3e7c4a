#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "wavesep/audio.hpp"

namespace wavesep {

class StftError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Complex STFT with a periodic Hann window and hop = window / 2. Frames are
// centered: window/2 zeros are prepended, so every signal sample lies in two
// frames whose window weights sum to one.
struct Spectrogram {
    std::size_t window = 0;
    std::size_t hop = 0;
    std::size_t bins = 0;    // window / 2 + 1
    std::size_t frames = 0;
    std::size_t signal_length = 0;
    int sample_rate = kDefaultSampleRate;
    std::vector<std::complex<double>> values;  // values[frame * bins + bin]

    std::complex<double> &at(std::size_t bin, std::size_t frame) { return values[frame * bins + bin]; }
    const std::complex<double> &at(std::size_t bin, std::size_t frame) const { return values[frame * bins + bin]; }
    // Magnitudes as a bins x frames matrix, row-major.
    std::vector<double> magnitudes() const;
};

std::vector<double> hann_window(std::size_t n);

Spectrogram stft(const AudioTrack &track, std::size_t window, std::size_t hop);
AudioTrack istft(const Spectrogram &spec);

}  // namespace wavesep
