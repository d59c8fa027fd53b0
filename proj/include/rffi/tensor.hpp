#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace rffi {

// Dense n-dimensional array with an optional same-shape gradient buffer.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty unless allocated

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        values.assign(numel(shape), T(0));
    }

    static std::size_t numel(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (const auto d : s) n *= d;
        return n;
    }

    std::size_t size() const { return values.size(); }

    void alloc_grad() { grad.assign(values.size(), T(0)); }

    bool shape_equals(const Tensor& other) const { return shape == other.shape; }
};

}  // namespace rffi
