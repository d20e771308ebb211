#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "breen/errors.hpp"
#include "breen/rng.hpp"

namespace breen::num {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw contract_error("array: non-positive dimension " + std::to_string(d));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major array. Immutable by convention once built (the autograd
// tape only ever accumulates into gradient arrays).
template <class T>
struct ArrayT {
    Shape shape;
    std::vector<T> data;

    ArrayT() = default;
    explicit ArrayT(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
    ArrayT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw contract_error("array: data size does not match shape " + shape_str(shape));
    }

    std::size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }

    int rows() const {
        if (shape.size() != 2) throw contract_error("array: rows() on non-matrix " + shape_str(shape));
        return shape[0];
    }
    int cols() const {
        if (shape.size() != 2) throw contract_error("array: cols() on non-matrix " + shape_str(shape));
        return shape[1];
    }

    T& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    T* row_ptr(int r) { return data.data() + static_cast<std::size_t>(r) * shape.back(); }
    const T* row_ptr(int r) const { return data.data() + static_cast<std::size_t>(r) * shape.back(); }

    bool same_shape(const ArrayT& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class U>
    ArrayT<U> astype() const {
        ArrayT<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    static ArrayT zeros(Shape s) { return ArrayT(std::move(s)); }

    static ArrayT full(Shape s, T v) {
        ArrayT out(std::move(s));
        for (T& x : out.data) x = v;
        return out;
    }

    static ArrayT scalar(T v) { return ArrayT({1}, {v}); }

    static ArrayT randn(Shape s, Rng& rng, T std_dev) {
        ArrayT out(std::move(s));
        for (T& x : out.data) x = static_cast<T>(rng.gauss()) * std_dev;
        return out;
    }

    static ArrayT from(Shape s, std::initializer_list<T> vals) {
        return ArrayT(std::move(s), std::vector<T>(vals));
    }
};

using Array = ArrayT<float>;
using ArrayD = ArrayT<double>;

template <class T>
inline T max_abs_diff(const ArrayT<T>& a, const ArrayT<T>& b) {
    if (!a.same_shape(b))
        throw contract_error("max_abs_diff: shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    T m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        T d = std::abs(a.data[i] - b.data[i]);
        if (d > m) m = d;
    }
    return m;
}

template <class T>
inline bool bitwise_equal(const ArrayT<T>& a, const ArrayT<T>& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        if (a.data[i] != b.data[i]) return false;
    return true;
}

}  // namespace breen::num
