#pragma once

#include <algorithm>
#include <cmath>

#include "pgm.hpp"
#include "tensor.hpp"

namespace sketchgen {

// Structural similarity over 8x8 uniform windows at stride 1, dynamic range
// L = 1, C1 = (0.01 L)^2, C2 = (0.03 L)^2. Window statistics are population
// moments computed in two passes (centered sums, no cancellation). Result is
// the mean index over all windows, clamped to [-1, 1].
inline double ssim(const Tensor& a, const Tensor& b, int window = 8) {
    check_image(a, "ssim");
    check_image(b, "ssim");
    if (a.shape() != b.shape())
        throw contract_error("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    for (double v : a.data())
        if (!(v >= 0.0 && v <= 1.0)) throw contract_error("ssim: first image outside [0, 1]");
    for (double v : b.data())
        if (!(v >= 0.0 && v <= 1.0)) throw contract_error("ssim: second image outside [0, 1]");

    const int h = a.dim(1), w = a.dim(2);
    if (h < window || w < window)
        throw contract_error("ssim: image smaller than the " + std::to_string(window) +
                             "-pixel window");

    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    const double inv_n = 1.0 / (static_cast<double>(window) * window);

    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double total = 0.0;
    long long count = 0;
    for (int y = 0; y + window <= h; ++y) {
        for (int x = 0; x + window <= w; ++x) {
            double sx = 0.0, sy = 0.0;
            for (int dy = 0; dy < window; ++dy) {
                const double* ra = pa + static_cast<size_t>(y + dy) * w + x;
                const double* rb = pb + static_cast<size_t>(y + dy) * w + x;
                for (int dx = 0; dx < window; ++dx) {
                    sx += ra[dx];
                    sy += rb[dx];
                }
            }
            const double mx = sx * inv_n, my = sy * inv_n;
            double vx = 0.0, vy = 0.0, cxy = 0.0;
            for (int dy = 0; dy < window; ++dy) {
                const double* ra = pa + static_cast<size_t>(y + dy) * w + x;
                const double* rb = pb + static_cast<size_t>(y + dy) * w + x;
                for (int dx = 0; dx < window; ++dx) {
                    const double da = ra[dx] - mx;
                    const double db = rb[dx] - my;
                    vx += da * da;
                    vy += db * db;
                    cxy += da * db;
                }
            }
            vx *= inv_n;
            vy *= inv_n;
            cxy *= inv_n;
            const double num = (2.0 * mx * my + kC1) * (2.0 * cxy + kC2);
            const double den = (mx * mx + my * my + kC1) * (vx + vy + kC2);
            total += num / den;
            ++count;
        }
    }
    return std::clamp(total / static_cast<double>(count), -1.0, 1.0);
}

}  // namespace sketchgen
