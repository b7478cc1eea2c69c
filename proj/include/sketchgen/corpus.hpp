#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "pgm.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace sketchgen {

enum class Domain { pretrain, finetune };

inline const char* domain_name(Domain d) {
    return d == Domain::pretrain ? "pretrain" : "finetune";
}

// Paired sample: a cluttered grayscale "photo" of a face-like scene and the
// clean stroke rendering of the same geometry. Sketch background is exactly
// 1.0 (paper white).
struct PhotoSketchPair {
    Tensor photo;
    Tensor sketch;
    int style = 0;
    Domain domain = Domain::pretrain;
};

struct CorpusConfig {
    int resolution = 32;
    int pretrain_pairs = 512;
    int finetune_pairs = 128;
    int heldout_pairs = 32;
    int num_styles = 3;
    // Stroke width in pixels per style; the per-style signature.
    std::vector<double> stroke_widths = {1.0, 2.4, 1.7};
    // Stroke waviness (normalized units) per domain; the finetune domain is
    // the "hand-drawn" analog and wobbles more.
    double jitter_pretrain = 0.010;
    double jitter_finetune = 0.035;
    std::uint64_t seed = 0;

    void validate() const {
        if (resolution < 16) throw config_error("corpus: resolution must be >= 16");
        if (pretrain_pairs < 1 || finetune_pairs < 1 || heldout_pairs < 0)
            throw config_error("corpus: pair counts must be positive");
        if (num_styles < 1) throw config_error("corpus: num_styles must be >= 1");
        if (static_cast<int>(stroke_widths.size()) < num_styles)
            throw config_error("corpus: one stroke width per style required");
    }
};

// Scene layout in normalized [0,1] coordinates; depends on the pair seed only,
// never on style or domain.
struct SceneGeometry {
    double cx, cy, rx, ry;
    double eye_dx, eye_dy, eye_r;
    double mouth_half_w, mouth_dy, mouth_curve;
    double shade_dir, shade_strength, skin_base;
    double bg_base, bg_ax, bg_ay;
    int clutter_count;
    double clutter[3][5];  // x, y, w, h, delta
};

inline SceneGeometry sample_geometry(std::uint64_t pair_seed) {
    Rng rng(derive_seed(pair_seed, "geometry"));
    SceneGeometry g;
    g.cx = rng.uniform(0.42, 0.58);
    g.cy = rng.uniform(0.42, 0.56);
    g.rx = rng.uniform(0.24, 0.33);
    g.ry = rng.uniform(0.30, 0.41);
    g.eye_dx = g.rx * rng.uniform(0.34, 0.52);
    g.eye_dy = g.ry * rng.uniform(-0.30, -0.12);
    g.eye_r = rng.uniform(0.045, 0.075);
    g.mouth_half_w = g.rx * rng.uniform(0.32, 0.52);
    g.mouth_dy = g.ry * rng.uniform(0.35, 0.55);
    g.mouth_curve = rng.uniform(-0.06, 0.12);
    g.shade_dir = rng.uniform() < 0.5 ? -1.0 : 1.0;
    g.shade_strength = rng.uniform(0.10, 0.20);
    g.skin_base = rng.uniform(0.70, 0.80);
    g.bg_base = rng.uniform(0.42, 0.60);
    g.bg_ax = rng.uniform(-0.22, 0.22);
    g.bg_ay = rng.uniform(-0.22, 0.22);
    g.clutter_count = rng.uniform_int(1, 3);
    for (int i = 0; i < 3; ++i) {
        g.clutter[i][0] = rng.uniform(0.0, 0.8);
        g.clutter[i][1] = rng.uniform(0.0, 0.8);
        g.clutter[i][2] = rng.uniform(0.1, 0.35);
        g.clutter[i][3] = rng.uniform(0.1, 0.35);
        g.clutter[i][4] = rng.uniform(-0.14, 0.14);
    }
    return g;
}

namespace detail {

inline void stamp_disk(Tensor& img, double cx, double cy, double radius, double value) {
    const int h = img.dim(1), w = img.dim(2);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + radius + 1)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + radius + 1)));
    const double r2 = radius * radius;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r2) img.data()[static_cast<size_t>(y) * w + x] = value;
        }
}

inline void fill_ellipse(Tensor& img, double cx, double cy, double rx, double ry,
                         const std::function<double(int, int)>& shade) {
    const int h = img.dim(1), w = img.dim(2);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double ex = (x - cx) / rx, ey = (y - cy) / ry;
            if (ex * ex + ey * ey <= 1.0)
                img.data()[static_cast<size_t>(y) * w + x] = shade(x, y);
        }
}

// Low-frequency displacement along a curve: three harmonics with random
// amplitude and phase give a hand-drawn wobble rather than pixel noise.
struct JitterWave {
    double amp[3];
    double phase[3];

    static JitterWave sample(Rng& rng, double amplitude) {
        JitterWave w;
        for (int k = 0; k < 3; ++k) {
            w.amp[k] = amplitude * rng.uniform(0.4, 1.0) / (k + 1);
            w.phase[k] = rng.uniform(0.0, 6.283185307179586);
        }
        return w;
    }

    double at(double t) const {
        double d = 0.0;
        for (int k = 0; k < 3; ++k)
            d += amp[k] * std::sin(6.283185307179586 * (k + 1) * t + phase[k]);
        return d;
    }
};

}  // namespace detail

inline PhotoSketchPair generate_pair(std::uint64_t pair_seed, int style, Domain domain,
                                     const CorpusConfig& cfg) {
    cfg.validate();
    if (style < 0 || style >= cfg.num_styles)
        throw contract_error("generate_pair: style " + std::to_string(style) +
                             " outside [0, " + std::to_string(cfg.num_styles) + ")");
    const int res = cfg.resolution;
    const double r = static_cast<double>(res);
    const SceneGeometry g = sample_geometry(pair_seed);

    // --- photo: background gradient, clutter, shaded head, facial marks, noise
    Tensor photo = make_image(res, res);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x)
            photo.data()[static_cast<size_t>(y) * res + x] =
                g.bg_base + g.bg_ax * (x / r - 0.5) + g.bg_ay * (y / r - 0.5);
    for (int i = 0; i < g.clutter_count; ++i) {
        const int x0 = static_cast<int>(g.clutter[i][0] * r);
        const int y0 = static_cast<int>(g.clutter[i][1] * r);
        const int x1 = std::min(res - 1, x0 + static_cast<int>(g.clutter[i][2] * r));
        const int y1 = std::min(res - 1, y0 + static_cast<int>(g.clutter[i][3] * r));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                photo.data()[static_cast<size_t>(y) * res + x] += g.clutter[i][4];
    }
    const double hcx = g.cx * r, hcy = g.cy * r, hrx = g.rx * r, hry = g.ry * r;
    detail::fill_ellipse(photo, hcx, hcy, hrx, hry, [&](int, int y) {
        return g.skin_base - g.shade_strength * g.shade_dir * ((y - hcy) / hry);
    });
    const double exl = hcx - g.eye_dx * r, exr = hcx + g.eye_dx * r, ey = hcy + g.eye_dy * r;
    detail::stamp_disk(photo, exl, ey, g.eye_r * r, 0.18);
    detail::stamp_disk(photo, exr, ey, g.eye_r * r, 0.18);
    {
        const double my = hcy + g.mouth_dy * r;
        const double mw = g.mouth_half_w * r;
        for (int s = 0; s <= 40; ++s) {
            const double t = s / 40.0;
            const double px = hcx - mw + 2.0 * mw * t;
            const double py = my + g.mouth_curve * r * 4.0 * t * (1.0 - t);
            detail::stamp_disk(photo, px, py, 0.7, 0.30);
        }
    }
    Rng noise(derive_seed(pair_seed, "photo-noise"));
    for (double& v : photo.data()) v = std::clamp(v + 0.015 * noise.normal(), 0.0, 1.0);

    // --- sketch: same geometry as strokes on paper white
    Tensor sketch = make_image(res, res, 1.0);
    const double width = cfg.stroke_widths[static_cast<size_t>(style)];
    const double jitter_amp =
        (domain == Domain::pretrain ? cfg.jitter_pretrain : cfg.jitter_finetune) * r;
    const double stroke_r = std::max(0.55, width * 0.5);
    Rng stroke_rng(derive_seed(pair_seed, "stroke",
                               static_cast<std::uint64_t>(style) * 2 +
                                   (domain == Domain::finetune ? 1 : 0)));
    const auto head_wave = detail::JitterWave::sample(stroke_rng, jitter_amp);
    const auto mouth_wave = detail::JitterWave::sample(stroke_rng, jitter_amp);

    const int steps = 240;
    for (int s = 0; s < steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        const double th = 6.283185307179586 * t;
        double px = hcx + hrx * std::cos(th);
        double py = hcy + hry * std::sin(th);
        double nx = std::cos(th) / hrx, ny = std::sin(th) / hry;
        const double nn = std::sqrt(nx * nx + ny * ny);
        nx /= nn;
        ny /= nn;
        const double d = head_wave.at(t);
        detail::stamp_disk(sketch, px + d * nx, py + d * ny, stroke_r, 0.0);
    }
    detail::stamp_disk(sketch, exl, ey, g.eye_r * r * (0.6 + 0.2 * width), 0.0);
    detail::stamp_disk(sketch, exr, ey, g.eye_r * r * (0.6 + 0.2 * width), 0.0);
    {
        const double my = hcy + g.mouth_dy * r;
        const double mw = g.mouth_half_w * r;
        for (int s = 0; s <= 60; ++s) {
            const double t = s / 60.0;
            const double px = hcx - mw + 2.0 * mw * t;
            const double py =
                my + g.mouth_curve * r * 4.0 * t * (1.0 - t) + mouth_wave.at(t) * 0.6;
            detail::stamp_disk(sketch, px, py, stroke_r, 0.0);
        }
    }

    PhotoSketchPair pair;
    pair.photo = photo;
    pair.sketch = sketch;
    pair.style = style;
    pair.domain = domain;
    return pair;
}

// Fraction of pixels darker than mid-gray; a simple per-image ink statistic
// that orders stroke thickness.
inline double ink_coverage(const Tensor& img) {
    check_image(img, "ink_coverage");
    long long dark = 0;
    for (double v : img.data()) dark += v < 0.5 ? 1 : 0;
    return static_cast<double>(dark) / static_cast<double>(img.numel());
}

// Mean absolute deviation of head-outline ink from the ideal ellipse, in
// pixels. Ink near the eyes and mouth is excluded.
inline double stroke_jitter_estimate(const Tensor& sketch, const SceneGeometry& g) {
    check_image(sketch, "stroke_jitter_estimate");
    const int res = sketch.dim(1);
    const double r = static_cast<double>(res);
    const double hcx = g.cx * r, hcy = g.cy * r, hrx = g.rx * r, hry = g.ry * r;
    const double mean_r = 0.5 * (hrx + hry);
    double total = 0.0;
    long long count = 0;
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            if (sketch.data()[static_cast<size_t>(y) * res + x] >= 0.5) continue;
            const double ex = (x - hcx) / hrx, eyv = (y - hcy) / hry;
            const double rho = std::sqrt(ex * ex + eyv * eyv);
            const double dist = std::fabs(rho - 1.0) * mean_r;
            if (dist > 3.5) continue;  // not part of the outline band
            // skip facial features
            const double fy = (y - hcy) / hry;
            if (std::fabs(fy - g.eye_dy / g.ry) < 0.25 && rho < 0.9) continue;
            if (std::fabs(fy - g.mouth_dy / g.ry) < 0.25 && rho < 0.9) continue;
            total += dist;
            ++count;
        }
    return count > 0 ? total / static_cast<double>(count) : 0.0;
}

// ---------------------------------------------------------------------------
// Corpus assembly and on-disk layout
// ---------------------------------------------------------------------------
struct Corpus {
    std::vector<PhotoSketchPair> pretrain;
    std::vector<PhotoSketchPair> finetune;
    std::vector<PhotoSketchPair> heldout;  // finetune-domain, never trained on
};

inline std::uint64_t pair_seed_for(const CorpusConfig& cfg, const std::string& split, int index) {
    return derive_seed(cfg.seed, split + "-pair", static_cast<std::uint64_t>(index));
}

inline Corpus build_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    Corpus c;
    for (int i = 0; i < cfg.pretrain_pairs; ++i)
        c.pretrain.push_back(generate_pair(pair_seed_for(cfg, "pretrain", i), i % cfg.num_styles,
                                           Domain::pretrain, cfg));
    for (int i = 0; i < cfg.finetune_pairs; ++i)
        c.finetune.push_back(generate_pair(pair_seed_for(cfg, "finetune", i), i % cfg.num_styles,
                                           Domain::finetune, cfg));
    for (int i = 0; i < cfg.heldout_pairs; ++i)
        c.heldout.push_back(generate_pair(pair_seed_for(cfg, "heldout", i), i % cfg.num_styles,
                                          Domain::finetune, cfg));
    return c;
}

// Manifest: one line per pair, "photo-path sketch-path style split".
inline void write_corpus(const std::string& dir, const Corpus& corpus) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.txt");
    if (!manifest) throw io_error("write_corpus: cannot open manifest in " + dir);
    auto write_split = [&](const char* split, const std::vector<PhotoSketchPair>& pairs) {
        fs::create_directories(dir + "/" + split);
        char name[64];
        for (size_t i = 0; i < pairs.size(); ++i) {
            std::snprintf(name, sizeof(name), "%s/pair%04zu", split, i);
            const std::string photo_rel = std::string(name) + "_photo.pgm";
            const std::string sketch_rel = std::string(name) + "_sketch.pgm";
            write_image(dir + "/" + photo_rel, pairs[i].photo);
            write_image(dir + "/" + sketch_rel, pairs[i].sketch);
            manifest << photo_rel << " " << sketch_rel << " " << pairs[i].style << " " << split
                     << "\n";
        }
    };
    write_split("pretrain", corpus.pretrain);
    write_split("finetune", corpus.finetune);
    write_split("heldout", corpus.heldout);
}

inline Corpus read_corpus(const std::string& dir) {
    std::ifstream manifest(dir + "/manifest.txt");
    if (!manifest) throw io_error("read_corpus: cannot open " + dir + "/manifest.txt");
    Corpus c;
    std::string photo_rel, sketch_rel, split;
    int style;
    while (manifest >> photo_rel >> sketch_rel >> style >> split) {
        PhotoSketchPair p;
        p.photo = read_image(dir + "/" + photo_rel);
        p.sketch = read_image(dir + "/" + sketch_rel);
        p.style = style;
        if (split == "pretrain") {
            p.domain = Domain::pretrain;
            c.pretrain.push_back(std::move(p));
        } else if (split == "finetune") {
            p.domain = Domain::finetune;
            c.finetune.push_back(std::move(p));
        } else if (split == "heldout") {
            p.domain = Domain::finetune;
            c.heldout.push_back(std::move(p));
        } else {
            throw io_error("read_corpus: unknown split '" + split + "' in manifest");
        }
    }
    if (c.pretrain.empty() && c.finetune.empty())
        throw io_error("read_corpus: manifest lists no pairs");
    return c;
}

}  // namespace sketchgen
