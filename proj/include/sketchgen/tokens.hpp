#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"

namespace sketchgen {

// Reserved value standing in for a masked token across all interfaces.
constexpr int kMaskSentinel = -100;

// Latent image as h*w discrete codebook indices, row-major.
struct TokenGrid {
    int h = 0;
    int w = 0;
    std::vector<int> indices;

    TokenGrid() = default;
    TokenGrid(int h_, int w_) : h(h_), w(w_), indices(static_cast<size_t>(h_) * w_, 0) {}

    int num_tokens() const { return h * w; }

    void check_valid(int vocab) const {
        if (static_cast<int>(indices.size()) != h * w)
            throw contract_error("TokenGrid: index count " + std::to_string(indices.size()) +
                                 " != " + std::to_string(h) + "*" + std::to_string(w));
        for (int idx : indices)
            if (idx < 0 || idx >= vocab)
                throw contract_error("TokenGrid: index " + std::to_string(idx) +
                                     " outside vocabulary of " + std::to_string(vocab));
    }
};

}  // namespace sketchgen
