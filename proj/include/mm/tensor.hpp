#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mm/errors.hpp"

namespace mm {

// Dense row-major tensor of doubles. All internal math runs at 64-bit
// precision; the on-disk format is 32-bit (see io.hpp).
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s);

    static Tensor zeros(std::vector<int64_t> s);
    static Tensor full(std::vector<int64_t> s, double v);
    static Tensor scalar(double v);
    static Tensor zeros_like(const Tensor& t);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    // Negative axes count from the back.
    int64_t dim(int axis) const;

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // Multi-index access for up to 4 axes; bounds unchecked.
    double& at(int64_t a, int64_t b);
    double& at(int64_t a, int64_t b, int64_t c);
    double& at(int64_t a, int64_t b, int64_t c, int64_t d);
    double at(int64_t a, int64_t b) const;
    double at(int64_t a, int64_t b, int64_t c) const;
    double at(int64_t a, int64_t b, int64_t c, int64_t d) const;

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
    std::string shape_str() const;
};

std::string shape_str(const std::vector<int64_t>& s);
int64_t shape_numel(const std::vector<int64_t>& s);
std::vector<int64_t> strides_of(const std::vector<int64_t>& s);

// Plain (graph-free) tensor helpers shared by the autodiff ops.
Tensor permute_tensor(const Tensor& t, const std::vector<int>& perm);
Tensor reshape_tensor(const Tensor& t, std::vector<int64_t> s);

// Deterministic RNG. Normal variates use Box-Muller on top of mt19937_64 so
// sequences are identical across standard libraries.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }
    double uniform();  // [0, 1)
    double normal();   // standard normal
    int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive range

    Tensor normal_tensor(std::vector<int64_t> s, double mean = 0.0, double stddev = 1.0);
    Tensor uniform_tensor(std::vector<int64_t> s, double lo = 0.0, double hi = 1.0);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(0, i))]);
        }
    }

    // Deterministic derived stream (for per-step / per-item draws).
    Rng fork() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ULL); }

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mm
