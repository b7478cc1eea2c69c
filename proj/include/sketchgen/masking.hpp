#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "errors.hpp"
#include "random.hpp"
#include "tokens.hpp"

namespace sketchgen {

// Token sequence with masked positions replaced by the sentinel, kept
// alongside the binary mask itself: values[i] == kMaskSentinel <=> mask[i] == 1.
struct MaskedTokens {
    int h = 0;
    int w = 0;
    std::vector<int> values;
    std::vector<std::uint8_t> mask;

    int size() const { return static_cast<int>(values.size()); }

    int masked_count() const {
        int m = 0;
        for (std::uint8_t b : mask) m += b;
        return m;
    }
};

// One draw of the training-time mask schedule.
struct MaskScheduleSample {
    double r = 0.0;       // uniform draw in [0, 1)
    double ratio = 0.0;   // cos(pi * r / 2)
    int masked_count = 0; // round(ratio * n), clamped to [1, n]
};

inline double cosine_ratio(double r) {
    if (!(r >= 0.0 && r <= 1.0))
        throw contract_error("cosine_ratio: r must lie in [0, 1], got " + std::to_string(r));
    return std::cos(1.5707963267948966192 * r);
}

inline MaskScheduleSample sample_schedule(int n, Rng& rng) {
    if (n < 1) throw contract_error("sample_schedule: n must be >= 1");
    MaskScheduleSample s;
    s.r = rng.uniform();
    s.ratio = cosine_ratio(s.r);
    const int rounded = static_cast<int>(std::floor(s.ratio * n + 0.5));
    // At least one masked position so the masked-token loss is well defined.
    s.masked_count = std::clamp(rounded, 1, n);
    return s;
}

// Masks `count` positions chosen uniformly without replacement.
inline std::vector<std::uint8_t> sample_mask_positions(int n, int count, Rng& rng) {
    if (n < 1) throw contract_error("sample_mask_positions: n must be >= 1");
    if (count < 0 || count > n) throw contract_error("sample_mask_positions: count out of range");
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 0; i < count; ++i) {
        const int j = rng.uniform_int(i, n - 1);
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }
    std::vector<std::uint8_t> mask(static_cast<size_t>(n), 0);
    for (int i = 0; i < count; ++i) mask[static_cast<size_t>(perm[static_cast<size_t>(i)])] = 1;
    return mask;
}

inline std::vector<std::uint8_t> sample_training_mask(int n, Rng& rng) {
    const MaskScheduleSample s = sample_schedule(n, rng);
    return sample_mask_positions(n, s.masked_count, rng);
}

// Substitution rule: keep z_i where m_i = 0, write the sentinel where m_i = 1.
inline MaskedTokens apply_mask(const TokenGrid& z, const std::vector<std::uint8_t>& mask) {
    if (mask.size() != z.indices.size())
        throw contract_error("apply_mask: mask length " + std::to_string(mask.size()) +
                             " != token count " + std::to_string(z.indices.size()));
    MaskedTokens out;
    out.h = z.h;
    out.w = z.w;
    out.mask = mask;
    out.values.resize(z.indices.size());
    for (size_t i = 0; i < z.indices.size(); ++i)
        out.values[i] = mask[i] ? kMaskSentinel : z.indices[i];
    return out;
}

inline MaskedTokens fully_masked(int h, int w) {
    MaskedTokens out;
    out.h = h;
    out.w = w;
    out.values.assign(static_cast<size_t>(h) * w, kMaskSentinel);
    out.mask.assign(static_cast<size_t>(h) * w, 1);
    return out;
}

// How many tokens are still masked at decode time t (t = t_steps is the fully
// masked start, t = 0 the fully revealed end). Cosine shape mirrored onto the
// decoding axis.
inline int inference_masked_count(int t, int t_steps, int n) {
    if (t_steps < 1) throw contract_error("inference_masked_count: t_steps must be >= 1");
    if (t < 0 || t > t_steps)
        throw contract_error("inference_masked_count: t = " + std::to_string(t) +
                             " outside [0, " + std::to_string(t_steps) + "]");
    if (t == 0) return 0;
    const double frac = std::sin(1.5707963267948966192 * static_cast<double>(t) / t_steps);
    const int count = static_cast<int>(std::ceil(n * frac));
    return std::min(n, count);
}

}  // namespace sketchgen
