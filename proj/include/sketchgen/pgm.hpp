#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace sketchgen {

// Images are grayscale tensors shaped {1, H, W} with values in [0, 1].
inline Tensor make_image(int h, int w, double fill = 0.0) {
    return Tensor::filled({1, h, w}, fill);
}

inline void check_image(const Tensor& img, const char* op) {
    if (img.rank() != 3 || img.dim(0) != 1)
        throw contract_error(std::string(op) + ": expected a {1, H, W} grayscale image, got " +
                             shape_str(img.shape()));
}

// Binary portable graymap (P5), 8-bit, maxval 255. Quantization rounds half
// away from zero so 0.5 maps to byte 128.
inline void write_image(const std::string& path, const Tensor& img) {
    check_image(img, "write_image");
    for (double v : img.data())
        if (!(v >= 0.0 && v <= 1.0))
            throw contract_error("write_image: pixel value " + std::to_string(v) +
                                 " outside [0, 1]");
    const int h = img.dim(1), w = img.dim(2);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("write_image: cannot open " + path);
    f << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> bytes(img.data().size());
    for (size_t i = 0; i < bytes.size(); ++i) {
        int q = static_cast<int>(std::floor(img.data()[i] * 255.0 + 0.5));
        bytes[i] = static_cast<unsigned char>(std::clamp(q, 0, 255));
    }
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw io_error("write_image: short write to " + path);
}

namespace detail {

// Reads one PGM header token, skipping whitespace and '#' comments.
inline std::string next_pgm_token(const std::vector<char>& buf, size_t& pos) {
    while (pos < buf.size()) {
        if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
            ++pos;
        } else if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    const size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos)
        throw io_error("read_image: truncated header", static_cast<long long>(start));
    return std::string(buf.begin() + static_cast<long>(start), buf.begin() + static_cast<long>(pos));
}

}  // namespace detail

inline Tensor read_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("read_image: cannot open " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5')
        throw io_error("read_image: not a binary graymap (bad magic)", 0);
    size_t pos = 2;
    auto parse_int = [&](const char* what) {
        const size_t at = pos;
        const std::string tok = detail::next_pgm_token(buf, pos);
        try {
            size_t used = 0;
            const int v = std::stoi(tok, &used);
            if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
            return v;
        } catch (const std::exception&) {
            throw io_error(std::string("read_image: malformed ") + what + " field",
                           static_cast<long long>(at));
        }
    };
    const int w = parse_int("width");
    const int h = parse_int("height");
    const int maxval = parse_int("maxval");
    if (maxval != 255)
        throw io_error("read_image: unsupported maxval " + std::to_string(maxval),
                       static_cast<long long>(pos));
    if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
        throw io_error("read_image: missing header terminator", static_cast<long long>(pos));
    ++pos;  // single whitespace between header and payload

    const size_t need = static_cast<size_t>(w) * static_cast<size_t>(h);
    if (buf.size() - pos < need)
        throw io_error("read_image: truncated payload, expected " + std::to_string(need) +
                           " bytes, have " + std::to_string(buf.size() - pos),
                       static_cast<long long>(buf.size()));
    Tensor img = make_image(h, w);
    for (size_t i = 0; i < need; ++i)
        img.data()[i] = static_cast<double>(static_cast<unsigned char>(buf[pos + i])) / 255.0;
    return img;
}

}  // namespace sketchgen
