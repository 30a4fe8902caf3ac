#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "arcpick/core.hpp"
#include "arcpick/rgbd.hpp"

namespace arcpick::io {

namespace fs = std::filesystem;

// PNG codecs (libpng). Readers throw FormatError on unsupported layouts.
void write_png_rgb(const fs::path& path, const ColorImage& image);
ColorImage read_png_rgb(const fs::path& path);
void write_png_gray8(const fs::path& path, const Grid<std::uint8_t>& image);
Grid<std::uint8_t> read_png_gray8(const fs::path& path);
void write_png_gray16(const fs::path& path, const Grid<std::uint16_t>& image);
Grid<std::uint16_t> read_png_gray16(const fs::path& path);

/**
 * @brief Frame triplet on disk: NNN.color.png, NNN.depth.png (uint16 mm), NNN.meta.json.
 *
 * meta.json holds {"fx","fy","cx","cy","rotation":[9 row-major],"translation":[3]}.
 * Depth is quantized to whole millimeters on write.
 */
void write_frame(const fs::path& dir, const std::string& stem, const rgbd::RgbdFrame& frame);
rgbd::RgbdFrame read_frame(const fs::path& dir, const std::string& stem);

/// Stems (e.g. "000") of every NNN.meta.json in dir, sorted.
std::vector<std::string> list_frames(const fs::path& dir);

/// ASCII PLY with x y z nx ny nz red green blue. Missing normals are written as 0.
void write_ply(const fs::path& path, const rgbd::PointCloud& cloud);

/// Little-endian binary encoding helpers shared by the binary file formats.
class BinaryWriter {
public:
    void bytes(const void* data, std::size_t n);
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void f32(float v);
    const std::vector<std::uint8_t>& buffer() const { return buf_; }
    void save(const fs::path& path) const;

private:
    std::vector<std::uint8_t> buf_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::vector<std::uint8_t> data) : buf_(std::move(data)) {}
    static BinaryReader open(const fs::path& path);

    void bytes(void* out, std::size_t n);
    std::uint16_t u16();
    std::uint32_t u32();
    float f32();
    std::string magic();  ///< next four bytes as text
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const;
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

}  // namespace arcpick::io
