#include "wavesep/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace wavesep {

namespace {

constexpr char kMagic[8] = {'W', 'S', 'E', 'P', 'C', 'K', 'P', 'T'};

template <typename U>
void put_le(std::string &out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
   public:
    explicit Reader(const std::string &bytes) : bytes_(bytes) {}

    template <typename U>
    U get(const char *what) {
        need(sizeof(U), what);
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return value;
    }

    std::string take(std::size_t n, const char *what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

   private:
    void need(std::size_t n, const char *what) {
        if (bytes_.size() - pos_ < n)
            throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
    }

    const std::string &bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void ParamContainer::add(std::string name, Tensor t) {
    if (find(name)) throw CheckpointError("duplicate container entry '" + name + "'");
    entries.emplace_back(std::move(name), std::move(t));
}

const Tensor *ParamContainer::find(const std::string &name) const {
    for (const auto &[n, t] : entries)
        if (n == name) return &t;
    return nullptr;
}

const Tensor &ParamContainer::at(const std::string &name) const {
    if (const auto *t = find(name)) return *t;
    throw CheckpointError("checkpoint has no entry '" + name + "'");
}

std::string encode_container(const ParamContainer &container) {
    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, ParamContainer::kContainerVersion);
    put_le<std::uint64_t>(out, container.metadata.size());
    out += container.metadata;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(container.entries.size()));
    for (const auto &[name, t] : container.entries) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
        for (auto v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
    }
    return out;
}

ParamContainer decode_container(const std::string &bytes) {
    Reader r(bytes);
    if (r.take(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic)))
        throw CheckpointError("not a wavesep container (bad magic)");
    const auto version = r.get<std::uint32_t>("version");
    if (version != ParamContainer::kContainerVersion)
        throw CheckpointError("unsupported container version " + std::to_string(version));
    ParamContainer c;
    const auto meta_len = r.get<std::uint64_t>("metadata length");
    c.metadata = r.take(meta_len, "metadata");
    const auto count = r.get<std::uint32_t>("entry count");
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto name_len = r.get<std::uint32_t>("entry name length");
        auto name = r.take(name_len, "entry name");
        const auto rank = r.get<std::uint32_t>("entry rank");
        if (rank == 0 || rank > 8) throw CheckpointError("entry '" + name + "' has invalid rank");
        Shape shape(rank);
        for (auto &d : shape) d = r.get<std::uint64_t>("entry extent");
        std::size_t n = 1;
        for (auto d : shape) {
            if (d == 0 || d > (std::size_t(1) << 32)) throw CheckpointError("entry '" + name + "' has invalid extent");
            n *= d;
        }
        std::vector<Real> values(n);
        for (auto &v : values) v = static_cast<Real>(std::bit_cast<double>(r.get<std::uint64_t>("entry values")));
        c.add(std::move(name), Tensor::from(std::move(shape), std::move(values)));
    }
    if (!r.at_end()) throw CheckpointError("trailing bytes after last checkpoint entry");
    return c;
}

void save_container(const std::filesystem::path &path, const ParamContainer &container) {
    const auto bytes = encode_container(container);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing '" + path.string() + "'");
}

ParamContainer load_container(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_container(ss.str());
}

}  // namespace wavesep
