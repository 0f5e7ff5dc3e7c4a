#include "wavesep/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace wavesep {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t le32(const unsigned char *p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}
std::uint16_t le16(const unsigned char *p) { return std::uint16_t(p[0] | (p[1] << 8)); }

void put32(std::string &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put16(std::string &out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

}  // namespace

AudioTrack read_wav(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WavError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    const auto *bytes = reinterpret_cast<const unsigned char *>(buf.data());
    const std::string where = "'" + path.string() + "': ";

    if (buf.size() < 12 || std::memcmp(bytes, "RIFF", 4) != 0 || std::memcmp(bytes + 8, "WAVE", 4) != 0)
        throw WavError(where + "not a RIFF/WAVE file");

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    const unsigned char *data = nullptr;
    std::size_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const unsigned char *chunk = bytes + pos;
        const std::uint32_t len = le32(chunk + 4);
        if (pos + 8 + len > buf.size()) throw WavError(where + "truncated chunk '" + std::string(reinterpret_cast<const char *>(chunk), 4) + "'");
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (len < 16) throw WavError(where + "fmt chunk too short");
            format = le16(chunk + 8);
            channels = le16(chunk + 10);
            rate = le32(chunk + 12);
            bits = le16(chunk + 22);
            if (format == kFormatExtensible) {
                if (len < 40) throw WavError(where + "extensible fmt chunk too short");
                format = le16(chunk + 8 + 24);
            }
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = chunk + 8;
            data_len = len;
        }
        pos += 8 + len + (len & 1);
    }
    if (!have_fmt) throw WavError(where + "missing fmt chunk");
    if (!data) throw WavError(where + "missing data chunk");
    if (channels == 0) throw WavError(where + "zero channels");
    if (rate == 0 || rate > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
        throw WavError(where + "invalid sample rate");

    int bytes_per_sample = 0;
    if (format == kFormatPcm && bits == 16)
        bytes_per_sample = 2;
    else if (format == kFormatFloat && (bits == 32 || bits == 64))
        bytes_per_sample = bits / 8;
    else
        throw WavError(where + "unsupported codec (format " + std::to_string(format) + ", " +
                       std::to_string(bits) + " bits); need PCM16 or float32/64");

    const std::size_t frame_bytes = static_cast<std::size_t>(bytes_per_sample) * channels;
    if (data_len % frame_bytes != 0) throw WavError(where + "data chunk is not a whole number of frames");
    const std::size_t frames = data_len / frame_bytes;

    AudioTrack track;
    track.sample_rate = static_cast<int>(rate);
    track.samples.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0;
        for (std::size_t c = 0; c < channels; ++c) {
            const unsigned char *p = data + f * frame_bytes + c * bytes_per_sample;
            if (bytes_per_sample == 2)
                acc += static_cast<std::int16_t>(le16(p)) / 32768.0;
            else if (bytes_per_sample == 4)
                acc += std::bit_cast<float>(le32(p));
            else
                acc += std::bit_cast<double>(std::uint64_t(le32(p)) | (std::uint64_t(le32(p + 4)) << 32));
        }
        track.samples[f] = static_cast<Real>(acc / channels);
    }
    return track;
}

void write_wav(const AudioTrack &track, const std::filesystem::path &path, WavEncoding encoding) {
    const bool pcm = encoding == WavEncoding::kPcm16;
    const std::uint16_t bits = pcm ? 16 : (encoding == WavEncoding::kFloat32 ? 32 : 64);
    const std::uint32_t data_len = static_cast<std::uint32_t>(track.samples.size() * (bits / 8));

    std::string out;
    out.reserve(44 + data_len);
    out += "RIFF";
    put32(out, 36 + data_len);
    out += "WAVEfmt ";
    put32(out, 16);
    put16(out, pcm ? kFormatPcm : kFormatFloat);
    put16(out, 1);
    put32(out, static_cast<std::uint32_t>(track.sample_rate));
    put32(out, static_cast<std::uint32_t>(track.sample_rate) * (bits / 8));
    put16(out, bits / 8);
    put16(out, bits);
    out += "data";
    put32(out, data_len);
    for (Real s : track.samples) {
        if (!std::isfinite(static_cast<double>(s))) throw WavError("refusing to write non-finite sample");
        if (pcm) {
            const double q = std::clamp(std::round(static_cast<double>(s) * 32768.0), -32768.0, 32767.0);
            put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
        } else if (bits == 32) {
            put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
        } else {
            const auto u = std::bit_cast<std::uint64_t>(static_cast<double>(s));
            put32(out, static_cast<std::uint32_t>(u));
            put32(out, static_cast<std::uint32_t>(u >> 32));
        }
    }

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw WavError("cannot open '" + path.string() + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw WavError("failed writing '" + path.string() + "'");
}

double rms(std::span<const Real> x) {
    if (x.empty()) return 0;
    double acc = 0;
    for (Real v : x) acc += static_cast<double>(v) * v;
    return std::sqrt(acc / static_cast<double>(x.size()));
}

double rms_dbfs(std::span<const Real> x) {
    const double r = rms(x);
    if (r <= 0) return -std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(r);
}

double peak_abs(std::span<const Real> x) {
    double p = 0;
    for (Real v : x) p = std::max(p, std::abs(static_cast<double>(v)));
    return p;
}

}  // namespace wavesep
