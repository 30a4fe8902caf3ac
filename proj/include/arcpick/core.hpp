#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace arcpick {

/// Base class for all errors raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Camera calibration or frame-dimension inconsistency.
class CalibrationError : public Error {
public:
    using Error::Error;
};

/// Malformed file, bad magic, truncated payload, or non-finite data.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Caller violated an operation's preconditions.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

using Rgb = std::array<std::uint8_t, 3>;

/**
 * @brief Dense row-major H x W grid of values.
 *
 * Used for depth images, color images (T = Rgb), masks and affordance maps.
 */
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    bool in_bounds(long r, long c) const {
        return r >= 0 && c >= 0 && static_cast<std::size_t>(r) < rows_ && static_cast<std::size_t>(c) < cols_;
    }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    template <typename U>
    bool same_shape(const Grid<U>& other) const {
        return rows_ == other.rows() && cols_ == other.cols();
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// 0 = false, nonzero = true. std::vector<bool> is avoided on purpose.
using Mask = Grid<std::uint8_t>;
using DepthImage = Grid<float>;
using ColorImage = Grid<Rgb>;

struct PixelIndex {
    long row = 0;
    long col = 0;
    friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

}  // namespace arcpick
