#include "mm/io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mm/errors.hpp"

namespace fs = std::filesystem;

namespace mm {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'T', 'N', 'T', 'N', 'S', 'R'};

void put_u32(std::ostream& os, uint32_t v) {
    // little-endian, byte by byte so the format is host-order independent
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw InputError("tensor file truncated in header");
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 | static_cast<uint32_t>(b[2]) << 16 |
           static_cast<uint32_t>(b[3]) << 24;
}

void put_f32(std::ostream& os, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}

float get_f32(const unsigned char* b) {
    uint32_t v = static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 | static_cast<uint32_t>(b[2]) << 16 |
                 static_cast<uint32_t>(b[3]) << 24;
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

}  // namespace

void check_video(const Tensor& v, const char* what) {
    if (v.rank() != 4 || v.shape[3] != 3) {
        throw ShapeError(std::string(what) + " must be (T, H, W, 3), got " + v.shape_str());
    }
}

void write_tensor_file(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InputError("cannot open for write: " + path);
    os.write(kMagic, 8);
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape) put_u32(os, static_cast<uint32_t>(d));
    for (double v : t.data) put_f32(os, static_cast<float>(v));
    if (!os) throw InputError("write failed: " + path);
}

Tensor read_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) throw InputError("bad tensor magic in " + path);
    const uint32_t rank = get_u32(is);
    if (rank == 0 || rank > 8) throw InputError("implausible tensor rank in " + path);
    std::vector<int64_t> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(get_u32(is));
    Tensor t(shape);
    std::vector<unsigned char> raw(static_cast<size_t>(t.numel()) * 4);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw InputError("tensor file truncated: " + path);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(get_f32(raw.data() + i * 4));
    return t;
}

void write_ppm(const std::string& path, const Tensor& frame) {
    if (frame.rank() != 3 || frame.shape[2] != 3) {
        throw ShapeError("ppm frame must be (H, W, 3), got " + frame.shape_str());
    }
    const int64_t h = frame.shape[0], w = frame.shape[1];
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InputError("cannot open for write: " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w * 3; ++x) {
            double v = frame[y * w * 3 + x];
            v = std::clamp(v, 0.0, 1.0);
            row[static_cast<size_t>(x)] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw InputError("write failed: " + path);
}

Tensor read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open: " + path);
    std::string tag;
    int64_t w = 0, h = 0, maxval = 0;
    is >> tag >> w >> h >> maxval;
    if (tag != "P6" || w <= 0 || h <= 0 || maxval != 255) throw InputError("unsupported ppm: " + path);
    is.get();  // single whitespace after maxval
    Tensor frame({h, w, 3});
    std::vector<unsigned char> raw(static_cast<size_t>(h * w * 3));
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw InputError("ppm truncated: " + path);
    for (int64_t i = 0; i < h * w * 3; ++i) frame[i] = raw[static_cast<size_t>(i)] / 255.0;
    return frame;
}

void write_frame_dir(const std::string& dir, const VideoClip& v) {
    check_video(v);
    fs::create_directories(dir);
    const int64_t T = v.shape[0], fsz = v.shape[1] * v.shape[2] * 3;
    for (int64_t t = 0; t < T; ++t) {
        Tensor frame({v.shape[1], v.shape[2], 3});
        std::copy(v.data.begin() + t * fsz, v.data.begin() + (t + 1) * fsz, frame.data.begin());
        char name[32];
        std::snprintf(name, sizeof name, "frame_%05lld.ppm", static_cast<long long>(t));
        write_ppm((fs::path(dir) / name).string(), frame);
    }
}

VideoClip read_frame_dir(const std::string& dir) {
    std::vector<Tensor> frames;
    for (int64_t t = 0;; ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%05lld.ppm", static_cast<long long>(t));
        fs::path p = fs::path(dir) / name;
        if (!fs::exists(p)) break;
        frames.push_back(read_ppm(p.string()));
    }
    if (frames.empty()) throw InputError("no frame_*.ppm files in " + dir);
    const int64_t h = frames[0].shape[0], w = frames[0].shape[1];
    VideoClip v({static_cast<int64_t>(frames.size()), h, w, 3});
    for (size_t t = 0; t < frames.size(); ++t) {
        if (!frames[t].same_shape(frames[0])) throw ShapeError("inconsistent frame sizes in " + dir);
        std::copy(frames[t].data.begin(), frames[t].data.end(), v.data.begin() + static_cast<int64_t>(t) * h * w * 3);
    }
    return v;
}

std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw InputError("cannot open for write: " + tmp);
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!os) throw InputError("write failed: " + tmp);
    }
    fs::rename(tmp, path);
}

}  // namespace mm
