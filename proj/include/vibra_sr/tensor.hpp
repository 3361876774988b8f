#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "vibra_sr/common.hpp"

namespace vibra_sr {

// Dense row-major tensor of doubles. Rank is small (<= 3) in practice:
// (C x T) activations, (B x C) tokens, (Cout x Cin x K) conv kernels.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shp) {
        Tensor t;
        t.shape = std::move(shp);
        t.data.assign(static_cast<size_t>(numel(t.shape)), 0.0);
        return t;
    }

    static Tensor full(std::vector<int64_t> shp, double v) {
        Tensor t = zeros(std::move(shp));
        for (double& x : t.data) x = v;
        return t;
    }

    static Tensor from(std::vector<int64_t> shp, std::vector<double> values) {
        Tensor t;
        t.shape = std::move(shp);
        if (numel(t.shape) != static_cast<int64_t>(values.size()))
            throw ConfigError("tensor: value count does not match shape");
        t.data = std::move(values);
        return t;
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    static int64_t numel(const std::vector<int64_t>& shp) {
        int64_t n = 1;
        for (int64_t d : shp) n *= d;
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    int rank() const { return static_cast<int>(shape.size()); }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // (r, c) indexing for rank-2 tensors.
    double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
    double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += " x ";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

}  // namespace vibra_sr
