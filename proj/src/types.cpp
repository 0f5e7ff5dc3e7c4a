#include "wavesep/types.hpp"

namespace wavesep {

std::size_t LabelVector::count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b ? 1 : 0;
    return n;
}

std::string LabelVector::to_string() const {
    std::string s;
    for (auto b : bits) s.push_back(b ? '1' : '0');
    return s;
}

std::vector<std::string> EnsembleExample::active_instruments() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < vocabulary.size(); ++i)
        if (i < labels.size() && labels[i]) out.push_back(vocabulary[i]);
    return out;
}

}  // namespace wavesep
