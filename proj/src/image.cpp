#include "uad/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace uad {

bool ImageTensor::all_finite() const {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

void ImageTensor::clip_to_range() {
    if (!range.bounded) return;
    for (double& v : values) v = std::clamp(v, range.lo, range.hi);
}

size_t BinaryMask::count() const {
    size_t n = 0;
    for (uint8_t v : values) n += (v != 0);
    return n;
}

void atomic_write_bytes(const std::filesystem::path& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for write: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_pgm16(const std::filesystem::path& path, const ImageTensor& img) {
    if (img.channels != 1) throw std::invalid_argument("write_pgm16: single channel only");
    const double lo = img.range.bounded ? img.range.lo : 0.0;
    const double w = img.range.bounded ? img.range.width() : 1.0;
    std::string bytes;
    bytes.reserve(32 + img.size() * 2);
    char header[64];
    std::snprintf(header, sizeof(header), "P5\n%d %d\n65535\n", img.width, img.height);
    bytes += header;
    for (double v : img.values) {
        double t = w > 0 ? (v - lo) / w : 0.0;
        int q = static_cast<int>(std::lround(std::clamp(t, 0.0, 1.0) * 65535.0));
        bytes.push_back(static_cast<char>((q >> 8) & 0xff));
        bytes.push_back(static_cast<char>(q & 0xff));
    }
    atomic_write_bytes(path, bytes);
}

namespace {

void read_pnm_header(std::istream& in, const std::string& magic, int& w, int& h, int& maxval) {
    std::string m;
    in >> m;
    if (m != magic) throw std::runtime_error("bad magic, expected " + magic + " got " + m);
    auto next_int = [&in]() {
        // skip whitespace and '#' comments
        int ch = in.peek();
        while (ch == '#' || std::isspace(ch)) {
            if (ch == '#') {
                std::string line;
                std::getline(in, line);
            } else {
                in.get();
            }
            ch = in.peek();
        }
        int v = 0;
        in >> v;
        return v;
    };
    w = next_int();
    h = next_int();
    maxval = next_int();
    in.get();  // single whitespace before raster
    if (w <= 0 || h <= 0 || maxval <= 0) throw std::runtime_error("bad PNM header");
}

}  // namespace

ImageTensor read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image: " + path.string());
    int w = 0, h = 0, maxval = 0;
    read_pnm_header(in, "P5", w, h, maxval);
    ImageTensor img(h, w, 1, ValueRange::unit());
    const size_t npix = static_cast<size_t>(w) * h;
    if (maxval < 256) {
        std::vector<uint8_t> buf(npix);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(npix));
        if (!in) throw std::runtime_error("truncated image: " + path.string());
        for (size_t i = 0; i < npix; ++i) img.values[i] = buf[i] / static_cast<double>(maxval);
    } else {
        std::vector<uint8_t> buf(npix * 2);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(npix * 2));
        if (!in) throw std::runtime_error("truncated image: " + path.string());
        for (size_t i = 0; i < npix; ++i) {
            int v = (buf[2 * i] << 8) | buf[2 * i + 1];
            img.values[i] = v / static_cast<double>(maxval);
        }
    }
    return img;
}

void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
    std::string bytes;
    char header[64];
    std::snprintf(header, sizeof(header), "P5\n%d %d\n255\n", mask.width, mask.height);
    bytes += header;
    for (uint8_t v : mask.values) bytes.push_back(static_cast<char>(v ? 255 : 0));
    atomic_write_bytes(path, bytes);
}

BinaryMask read_mask_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open mask: " + path.string());
    int w = 0, h = 0, maxval = 0;
    read_pnm_header(in, "P5", w, h, maxval);
    if (maxval >= 256) throw std::runtime_error("mask must be 8-bit: " + path.string());
    BinaryMask mask(h, w);
    std::vector<uint8_t> buf(mask.values.size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw std::runtime_error("truncated mask: " + path.string());
    for (size_t i = 0; i < buf.size(); ++i) mask.values[i] = buf[i] >= (maxval + 1) / 2 ? 1 : 0;
    return mask;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
    std::string bytes;
    char header[64];
    std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", img.width, img.height);
    bytes += header;
    bytes.append(reinterpret_cast<const char*>(img.values.data()), img.values.size());
    atomic_write_bytes(path, bytes);
}

ImageTensor bilinear_resize(const ImageTensor& src, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize: non-positive target size");
    ImageTensor dst(out_h, out_w, src.channels, src.range);
    const double sy = static_cast<double>(src.height) / out_h;
    const double sx = static_cast<double>(src.width) / out_w;
    for (int c = 0; c < src.channels; ++c) {
        for (int y = 0; y < out_h; ++y) {
            double fy = (y + 0.5) * sy - 0.5;
            int y0 = static_cast<int>(std::floor(fy));
            double wy = fy - y0;
            int y0c = std::clamp(y0, 0, src.height - 1);
            int y1c = std::clamp(y0 + 1, 0, src.height - 1);
            for (int x = 0; x < out_w; ++x) {
                double fx = (x + 0.5) * sx - 0.5;
                int x0 = static_cast<int>(std::floor(fx));
                double wx = fx - x0;
                int x0c = std::clamp(x0, 0, src.width - 1);
                int x1c = std::clamp(x0 + 1, 0, src.width - 1);
                double v00 = src.at(y0c, x0c, c), v01 = src.at(y0c, x1c, c);
                double v10 = src.at(y1c, x0c, c), v11 = src.at(y1c, x1c, c);
                dst.at(y, x, c) = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                  wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    }
    return dst;
}

ImageTensor median_filter(const ImageTensor& src, int k) {
    if (k <= 0 || k % 2 == 0) throw std::invalid_argument("median_filter: k must be odd positive");
    ImageTensor dst = src;
    const int r = k / 2;
    std::vector<double> window;
    window.reserve(static_cast<size_t>(k) * k);
    for (int c = 0; c < src.channels; ++c) {
        for (int y = 0; y < src.height; ++y) {
            for (int x = 0; x < src.width; ++x) {
                window.clear();
                for (int dy = -r; dy <= r; ++dy) {
                    int yy = std::clamp(y + dy, 0, src.height - 1);
                    for (int dx = -r; dx <= r; ++dx) {
                        int xx = std::clamp(x + dx, 0, src.width - 1);
                        window.push_back(src.at(yy, xx, c));
                    }
                }
                auto mid = window.begin() + window.size() / 2;
                std::nth_element(window.begin(), mid, window.end());
                dst.at(y, x, c) = *mid;
            }
        }
    }
    return dst;
}

}  // namespace uad
