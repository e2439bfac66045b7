#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace uad {

// Declared normalization range of an image's values. Preprocessed inputs are
// bounded; noisy / residual images are not.
struct ValueRange {
    double lo = 0.0;
    double hi = 1.0;
    bool bounded = true;

    static ValueRange unit() { return {0.0, 1.0, true}; }
    static ValueRange unbounded() { return {0.0, 0.0, false}; }
    double width() const { return hi - lo; }
    bool operator==(const ValueRange&) const = default;
};

// 2D image with channel count; the x_0 / x_t / reconstruction currency of the
// pipeline. Values are stored CHW in double for exact metric arithmetic.
struct ImageTensor {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<double> values;
    ValueRange range = ValueRange::unit();

    ImageTensor() = default;
    ImageTensor(int h, int w, int c = 1, ValueRange r = ValueRange::unit())
        : height(h), width(w), channels(c), values(static_cast<size_t>(h) * w * c, 0.0), range(r) {}

    size_t size() const { return values.size(); }
    double& at(int y, int x, int c = 0) {
        return values[(static_cast<size_t>(c) * height + y) * width + x];
    }
    double at(int y, int x, int c = 0) const {
        return values[(static_cast<size_t>(c) * height + y) * width + x];
    }
    bool same_shape(const ImageTensor& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    bool all_finite() const;
    void clip_to_range();
};

// Boolean per-pixel mask (ground truth / foreground).
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> values;  // 0 or 1

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), values(static_cast<size_t>(h) * w, 0) {}
    uint8_t& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
    size_t count() const;
    bool empty_mask() const { return count() == 0; }
};

// --- PGM / PPM I/O -----------------------------------------------------
// Data images are 16-bit binary PGM (values scaled by the declared range);
// masks are 8-bit PGM with {0, 255}. Writers are byte-deterministic.

void write_pgm16(const std::filesystem::path& path, const ImageTensor& img);
ImageTensor read_pgm(const std::filesystem::path& path);  // accepts 8- or 16-bit

void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_mask_pgm(const std::filesystem::path& path);

// RGB byte image for overlays.
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> values;  // HWC, 3 channels

    RgbImage() = default;
    RgbImage(int h, int w) : height(h), width(w), values(static_cast<size_t>(h) * w * 3, 0) {}
    uint8_t& at(int y, int x, int c) { return values[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    uint8_t at(int y, int x, int c) const { return values[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

void write_ppm(const std::filesystem::path& path, const RgbImage& img);

// --- basic image ops ----------------------------------------------------

// Bilinear resize (half-pixel centers, clamped edges).
ImageTensor bilinear_resize(const ImageTensor& src, int out_h, int out_w);

// Median filter with odd window k (border replication).
ImageTensor median_filter(const ImageTensor& src, int k);

// Atomic file write helper: writes to <path>.tmp then renames.
void atomic_write_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace uad
