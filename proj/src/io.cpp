#include "arcpick/io.hpp"

#include <png.h>

#include <csetjmp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include "json.hpp"
#include <regex>
#include <sstream>

namespace arcpick::io {

namespace {

using json = nlohmann::json;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw FormatError("cannot open " + path.string());
    return f;
}

void png_warning_fn(png_structp, png_const_charp) {}

// bit_depth/color_type per libpng; rows are raw big-endian PNG samples.
void write_png(const fs::path& path, std::size_t width, std::size_t height, int bit_depth, int color_type,
               const std::vector<std::uint8_t>& raw) {
    auto file = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_fn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};
    // libpng reports errors by longjmp back into this frame.
    if (setjmp(png_jmpbuf(png))) throw FormatError("png: failed writing " + path.string());

    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = raw.size() / std::max<std::size_t>(height, 1);
    for (std::size_t r = 0; r < height; ++r) png_write_row(png, raw.data() + r * stride);
    png_write_end(png, nullptr);
}

struct RawPng {
    std::size_t width = 0, height = 0;
    int bit_depth = 0, color_type = 0;
    std::vector<std::uint8_t> raw;
};

RawPng read_png(const fs::path& path) {
    auto file = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_fn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_read_struct(p, i, nullptr); }
    } guard{&png, &info};
    RawPng out;
    if (setjmp(png_jmpbuf(png))) throw FormatError("png: failed reading " + path.string());

    png_init_io(png, file.get());
    png_read_info(png, info);
    out.width = png_get_image_width(png, info);
    out.height = png_get_image_height(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    out.color_type = png_get_color_type(png, info);
    if (out.color_type == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
        out.color_type = PNG_COLOR_TYPE_RGB;
    }
    if (out.color_type == PNG_COLOR_TYPE_GRAY && out.bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
        out.bit_depth = 8;
    }
    png_read_update_info(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    out.raw.resize(stride * out.height);
    for (std::size_t r = 0; r < out.height; ++r) png_read_row(png, out.raw.data() + r * stride, nullptr);
    png_read_end(png, nullptr);
    return out;
}

}  // namespace

void write_png_rgb(const fs::path& path, const ColorImage& image) {
    std::vector<std::uint8_t> raw(image.size() * 3);
    for (std::size_t i = 0; i < image.size(); ++i)
        for (int ch = 0; ch < 3; ++ch) raw[3 * i + ch] = image.data()[i][ch];
    write_png(path, image.cols(), image.rows(), 8, PNG_COLOR_TYPE_RGB, raw);
}

ColorImage read_png_rgb(const fs::path& path) {
    const RawPng png = read_png(path);
    if (png.bit_depth != 8) throw FormatError(path.string() + ": expected 8-bit color");
    int channels = 0;
    switch (png.color_type) {
        case PNG_COLOR_TYPE_RGB: channels = 3; break;
        case PNG_COLOR_TYPE_RGB_ALPHA: channels = 4; break;
        case PNG_COLOR_TYPE_GRAY: channels = 1; break;
        default: throw FormatError(path.string() + ": unsupported color type");
    }
    ColorImage img(png.height, png.width);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const std::uint8_t* px = png.raw.data() + i * static_cast<std::size_t>(channels);
        img.data()[i] = channels == 1 ? Rgb{px[0], px[0], px[0]} : Rgb{px[0], px[1], px[2]};
    }
    return img;
}

void write_png_gray8(const fs::path& path, const Grid<std::uint8_t>& image) {
    write_png(path, image.cols(), image.rows(), 8, PNG_COLOR_TYPE_GRAY, image.data());
}

Grid<std::uint8_t> read_png_gray8(const fs::path& path) {
    const RawPng png = read_png(path);
    if (png.bit_depth != 8 || png.color_type != PNG_COLOR_TYPE_GRAY)
        throw FormatError(path.string() + ": expected 8-bit grayscale");
    Grid<std::uint8_t> img(png.height, png.width);
    img.data() = png.raw;
    return img;
}

// PNG stores 16-bit samples most-significant byte first; values round-trip
// as host integers regardless of endianness.
void write_png_gray16(const fs::path& path, const Grid<std::uint16_t>& image) {
    std::vector<std::uint8_t> raw(image.size() * 2);
    for (std::size_t i = 0; i < image.size(); ++i) {
        raw[2 * i] = static_cast<std::uint8_t>(image.data()[i] >> 8);
        raw[2 * i + 1] = static_cast<std::uint8_t>(image.data()[i] & 0xff);
    }
    write_png(path, image.cols(), image.rows(), 16, PNG_COLOR_TYPE_GRAY, raw);
}

Grid<std::uint16_t> read_png_gray16(const fs::path& path) {
    const RawPng png = read_png(path);
    if (png.bit_depth != 16 || png.color_type != PNG_COLOR_TYPE_GRAY)
        throw FormatError(path.string() + ": expected 16-bit grayscale");
    Grid<std::uint16_t> img(png.height, png.width);
    for (std::size_t i = 0; i < img.size(); ++i)
        img.data()[i] = static_cast<std::uint16_t>((png.raw[2 * i] << 8) | png.raw[2 * i + 1]);
    return img;
}

void write_frame(const fs::path& dir, const std::string& stem, const rgbd::RgbdFrame& frame) {
    frame.validate();
    fs::create_directories(dir);
    write_png_rgb(dir / (stem + ".color.png"), frame.color);

    Grid<std::uint16_t> mm(frame.depth.rows(), frame.depth.cols());
    for (std::size_t i = 0; i < mm.size(); ++i)
        mm.data()[i] = static_cast<std::uint16_t>(std::lround(static_cast<double>(frame.depth.data()[i]) * 1000.0));
    write_png_gray16(dir / (stem + ".depth.png"), mm);

    const auto& k = frame.intrinsics;
    json meta;
    meta["fx"] = k.fx;
    meta["fy"] = k.fy;
    meta["cx"] = k.cx;
    meta["cy"] = k.cy;
    std::vector<double> rot(9);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rot[static_cast<std::size_t>(3 * r + c)] = frame.pose.rotation(r, c);
    meta["rotation"] = rot;
    meta["translation"] = {frame.pose.translation.x(), frame.pose.translation.y(), frame.pose.translation.z()};
    std::ofstream(dir / (stem + ".meta.json")) << meta.dump(2) << '\n';
}

rgbd::RgbdFrame read_frame(const fs::path& dir, const std::string& stem) {
    const fs::path meta_path = dir / (stem + ".meta.json");
    std::ifstream in(meta_path);
    if (!in) throw FormatError("missing " + meta_path.string());
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw FormatError(meta_path.string() + ": " + e.what());
    }

    rgbd::RgbdFrame frame;
    frame.color = read_png_rgb(dir / (stem + ".color.png"));
    const auto mm = read_png_gray16(dir / (stem + ".depth.png"));
    frame.depth = DepthImage(mm.rows(), mm.cols());
    for (std::size_t i = 0; i < mm.size(); ++i) frame.depth.data()[i] = static_cast<float>(mm.data()[i]) / 1000.0f;

    try {
        frame.intrinsics.fx = meta.at("fx").get<double>();
        frame.intrinsics.fy = meta.at("fy").get<double>();
        frame.intrinsics.cx = meta.at("cx").get<double>();
        frame.intrinsics.cy = meta.at("cy").get<double>();
        const auto rot = meta.at("rotation").get<std::vector<double>>();
        const auto trans = meta.at("translation").get<std::vector<double>>();
        if (rot.size() != 9 || trans.size() != 3) throw FormatError(meta_path.string() + ": bad pose shape");
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) frame.pose.rotation(r, c) = rot[static_cast<std::size_t>(3 * r + c)];
        frame.pose.translation = Eigen::Vector3d(trans[0], trans[1], trans[2]);
    } catch (const json::exception& e) {
        throw FormatError(meta_path.string() + ": " + e.what());
    }
    frame.intrinsics.width = frame.depth.cols();
    frame.intrinsics.height = frame.depth.rows();
    if (!frame.pose.is_valid(1e-6)) throw CalibrationError(meta_path.string() + ": rotation is not orthonormal");
    frame.validate();
    return frame;
}

std::vector<std::string> list_frames(const fs::path& dir) {
    std::vector<std::string> stems;
    if (!fs::is_directory(dir)) return stems;
    static const std::regex pattern(R"(^(\d+)\.meta\.json$)");
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) stems.push_back(m[1]);
    }
    std::sort(stems.begin(), stems.end());
    return stems;
}

void write_ply(const fs::path& path, const rgbd::PointCloud& cloud) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
        << "\nproperty float x\nproperty float y\nproperty float z\n"
           "property float nx\nproperty float ny\nproperty float nz\n"
           "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    out << std::setprecision(9);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        const Eigen::Vector3d n = cloud.has_normals() ? cloud.normals[i] : Eigen::Vector3d::Zero();
        const Rgb c = i < cloud.colors.size() ? cloud.colors[i] : Rgb{0, 0, 0};
        out << p.x() << ' ' << p.y() << ' ' << p.z() << ' ' << n.x() << ' ' << n.y() << ' ' << n.z() << ' '
            << int(c[0]) << ' ' << int(c[1]) << ' ' << int(c[2]) << '\n';
    }
}

void BinaryWriter::bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
}

void BinaryWriter::u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v & 0xff));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void BinaryWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void BinaryWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void BinaryWriter::save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
}

BinaryReader BinaryReader::open(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return BinaryReader(std::move(data));
}

void BinaryReader::need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("truncated binary file");
}

void BinaryReader::bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
}

std::uint16_t BinaryReader::u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(buf_[pos_] | (buf_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
}

std::uint32_t BinaryReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
}

float BinaryReader::f32() { return std::bit_cast<float>(u32()); }

std::string BinaryReader::magic() {
    std::string m(4, '\0');
    bytes(m.data(), 4);
    return m;
}

}  // namespace arcpick::io
