#include "absparse/config.hpp"

#include <algorithm>
#include <stdexcept>

namespace absparse {

void QuantSpec::validate() const {
    if (bits != 2 && bits != 4 && bits != 8) {
        throw std::invalid_argument("quant bits must be one of {2, 4, 8}");
    }
}

std::string quant_spec_name(const QuantSpec& spec) {
    return "int" + std::to_string(spec.bits) +
           (spec.mode == QuantMode::kSymmetric ? "xsym" : "xasym");
}

QuantSpec parse_quant_spec(const std::string& name) {
    for (int bits : {2, 4, 8}) {
        for (QuantMode mode : {QuantMode::kSymmetric, QuantMode::kAsymmetric}) {
            QuantSpec spec{bits, mode};
            if (quant_spec_name(spec) == name) return spec;
        }
    }
    throw std::invalid_argument("unknown quant spec '" + name +
                                "' (expected int{2,4,8}x{sym,asym} or none)");
}

std::string centroid_method_name(CentroidMethod method) {
    return method == CentroidMethod::kMean ? "mean" : "maxmin";
}

CentroidMethod parse_centroid_method(const std::string& name) {
    if (name == "mean") return CentroidMethod::kMean;
    if (name == "maxmin") return CentroidMethod::kMaxMin;
    throw std::invalid_argument("unknown centroid method '" + name + "' (expected mean|maxmin)");
}

std::size_t EngineConfig::min_candidate() const {
    return *std::min_element(candidate_block_sizes.begin(), candidate_block_sizes.end());
}

std::size_t EngineConfig::max_candidate() const {
    return *std::max_element(candidate_block_sizes.begin(), candidate_block_sizes.end());
}

void EngineConfig::validate() const {
    if (num_heads == 0) throw std::invalid_argument("num_heads must be positive");
    if (head_dim == 0) throw std::invalid_argument("head_dim must be positive");
    if (page_size == 0) throw std::invalid_argument("page_size must be >= 1");
    if (candidate_block_sizes.empty()) {
        throw std::invalid_argument("candidate_block_sizes must not be empty");
    }
    for (std::size_t b : candidate_block_sizes) {
        if (b == 0 || b % page_size != 0) {
            throw std::invalid_argument("candidate block size " + std::to_string(b) +
                                        " is not a positive multiple of page_size " +
                                        std::to_string(page_size));
        }
    }
    if (!std::is_sorted(candidate_block_sizes.begin(), candidate_block_sizes.end())) {
        throw std::invalid_argument("candidate_block_sizes must be ascending");
    }
    if (std::adjacent_find(candidate_block_sizes.begin(), candidate_block_sizes.end()) !=
        candidate_block_sizes.end()) {
        throw std::invalid_argument("candidate_block_sizes must be distinct");
    }
    if (token_budget < max_candidate()) {
        throw std::invalid_argument("token_budget must be >= the largest candidate block size");
    }
    // Values above 1 are accepted: Eq.-2-style assignment degenerates to the
    // finest candidate there, which the CLI exposes for boundary analysis.
    if (recall_threshold <= 0.0) {
        throw std::invalid_argument("recall_threshold must be positive");
    }
    if (quant) quant->validate();
}

}  // namespace absparse
