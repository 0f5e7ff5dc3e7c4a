#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "wavesep/tensor.hpp"

namespace wavesep {

inline constexpr int kDefaultSampleRate = 8000;

struct AudioTrack {
    std::vector<Real> samples;
    int sample_rate = kDefaultSampleRate;

    std::size_t size() const { return samples.size(); }
    double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

class WavError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

enum class WavEncoding { kPcm16, kFloat32, kFloat64 };

// Reads RIFF/WAVE PCM16 or IEEE float (32 or 64 bit). Multi-channel input is downmixed by
// averaging channels.
AudioTrack read_wav(const std::filesystem::path &path);
void write_wav(const AudioTrack &track, const std::filesystem::path &path,
               WavEncoding encoding = WavEncoding::kFloat32);

double rms(std::span<const Real> x);
// RMS in dB relative to full scale 1.0; -inf for silence.
double rms_dbfs(std::span<const Real> x);
double peak_abs(std::span<const Real> x);

}  // namespace wavesep
