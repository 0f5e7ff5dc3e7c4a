#include "wavesep/stft.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <numbers>

namespace wavesep {

namespace {

struct FftwFree {
    void operator()(void *p) const { fftw_free(p); }
};
struct PlanDestroy {
    void operator()(fftw_plan_s *p) const { fftw_destroy_plan(p); }
};
using Plan = std::unique_ptr<fftw_plan_s, PlanDestroy>;

// Scratch buffers plus forward (r2c) and inverse (c2r) plans for one size.
class RealFft {
   public:
    explicit RealFft(std::size_t n)
        : n_(n),
          real_(static_cast<double *>(fftw_malloc(sizeof(double) * n))),
          cplx_(static_cast<fftw_complex *>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
        forward_.reset(fftw_plan_dft_r2c_1d(static_cast<int>(n), real_.get(), cplx_.get(), FFTW_ESTIMATE));
        inverse_.reset(fftw_plan_dft_c2r_1d(static_cast<int>(n), cplx_.get(), real_.get(), FFTW_ESTIMATE));
    }

    double *real() { return real_.get(); }
    fftw_complex *cplx() { return cplx_.get(); }
    void forward() { fftw_execute(forward_.get()); }
    // Unnormalized: result is n times the true inverse.
    void inverse() { fftw_execute(inverse_.get()); }

   private:
    std::size_t n_;
    std::unique_ptr<double, FftwFree> real_;
    std::unique_ptr<fftw_complex, FftwFree> cplx_;
    Plan forward_, inverse_;
};

void check_params(std::size_t window, std::size_t hop) {
    if (window < 4 || (window & (window - 1)) != 0)
        throw StftError("STFT window must be a power of two >= 4, got " + std::to_string(window));
    if (hop * 2 != window)
        throw StftError("Hann overlap-add needs hop = window / 2, got hop " + std::to_string(hop) +
                        " for window " + std::to_string(window));
}

}  // namespace

std::vector<double> Spectrogram::magnitudes() const {
    std::vector<double> mag(bins * frames);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t f = 0; f < bins; ++f) mag[f * frames + t] = std::abs(values[t * bins + f]);
    return mag;
}

std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

Spectrogram stft(const AudioTrack &track, std::size_t window, std::size_t hop) {
    check_params(window, hop);
    Spectrogram spec;
    spec.window = window;
    spec.hop = hop;
    spec.bins = window / 2 + 1;
    spec.signal_length = track.samples.size();
    spec.sample_rate = track.sample_rate;
    const std::size_t len = track.samples.size();
    spec.frames = len == 0 ? 0 : (len - 1) / hop + 2;
    spec.values.assign(spec.frames * spec.bins, {0.0, 0.0});

    const auto w = hann_window(window);
    const std::size_t pad = window / 2;
    RealFft fft(window);
    for (std::size_t t = 0; t < spec.frames; ++t) {
        double *buf = fft.real();
        for (std::size_t i = 0; i < window; ++i) {
            const std::size_t j = t * hop + i;  // index into the padded signal
            buf[i] = (j >= pad && j - pad < len) ? w[i] * static_cast<double>(track.samples[j - pad]) : 0.0;
        }
        fft.forward();
        const fftw_complex *c = fft.cplx();
        for (std::size_t f = 0; f < spec.bins; ++f) spec.values[t * spec.bins + f] = {c[f][0], c[f][1]};
    }
    return spec;
}

AudioTrack istft(const Spectrogram &spec) {
    check_params(spec.window, spec.hop);
    if (spec.values.size() != spec.frames * spec.bins || spec.bins != spec.window / 2 + 1)
        throw StftError("istft: spectrogram dimensions are inconsistent");
    const std::size_t window = spec.window, hop = spec.hop, pad = window / 2;
    const std::size_t padded_len = spec.frames == 0 ? 0 : (spec.frames - 1) * hop + window;
    std::vector<double> acc(padded_len, 0.0), weight(padded_len, 0.0);
    const auto w = hann_window(window);
    RealFft fft(window);
    const double inv_n = 1.0 / static_cast<double>(window);
    for (std::size_t t = 0; t < spec.frames; ++t) {
        fftw_complex *c = fft.cplx();
        for (std::size_t f = 0; f < spec.bins; ++f) {
            c[f][0] = spec.values[t * spec.bins + f].real();
            c[f][1] = spec.values[t * spec.bins + f].imag();
        }
        fft.inverse();
        const double *buf = fft.real();
        for (std::size_t i = 0; i < window; ++i) {
            acc[t * hop + i] += buf[i] * inv_n;
            weight[t * hop + i] += w[i];
        }
    }
    AudioTrack out;
    out.sample_rate = spec.sample_rate;
    out.samples.assign(spec.signal_length, Real(0));
    for (std::size_t i = 0; i < spec.signal_length; ++i) {
        const double wsum = weight[i + pad];
        out.samples[i] = static_cast<Real>(wsum > 1e-8 ? acc[i + pad] / wsum : 0.0);
    }
    return out;
}

}  // namespace wavesep
