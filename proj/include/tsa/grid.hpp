#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tsa {

/// Dense row-major matrix with value semantics.
template <typename T>
struct Grid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> cells;

    Grid() = default;
    Grid(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), cells(r * c, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return cells[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }

    std::span<T> row(std::size_t r) { return {cells.data() + r * cols, cols}; }
    std::span<const T> row(std::size_t r) const { return {cells.data() + r * cols, cols}; }

    friend bool operator==(const Grid&, const Grid&) = default;
};

}  // namespace tsa
