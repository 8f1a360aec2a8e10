#include "mm/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace mm {

int64_t shape_numel(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ")";
    return os.str();
}

std::vector<int64_t> strides_of(const std::vector<int64_t>& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

Tensor::Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("non-positive tensor dimension in " + mm::shape_str(shape));
    }
    data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
}

Tensor Tensor::zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

Tensor Tensor::full(std::vector<int64_t> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
}

Tensor Tensor::zeros_like(const Tensor& t) { return Tensor(t.shape); }

int64_t Tensor::dim(int axis) const {
    int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("axis out of range for " + mm::shape_str(shape));
    return shape[static_cast<size_t>(axis)];
}

double& Tensor::at(int64_t a, int64_t b) { return data[static_cast<size_t>(a * shape[1] + b)]; }
double& Tensor::at(int64_t a, int64_t b, int64_t c) {
    return data[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
}
double& Tensor::at(int64_t a, int64_t b, int64_t c, int64_t d) {
    return data[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
}
double Tensor::at(int64_t a, int64_t b) const { return data[static_cast<size_t>(a * shape[1] + b)]; }
double Tensor::at(int64_t a, int64_t b, int64_t c) const {
    return data[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
}
double Tensor::at(int64_t a, int64_t b, int64_t c, int64_t d) const {
    return data[static_cast<size_t>(((a * shape[1] + b) * shape[2] + c) * shape[3] + d)];
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const { return mm::shape_str(shape); }

Tensor permute_tensor(const Tensor& t, const std::vector<int>& perm) {
    const int r = t.rank();
    if (static_cast<int>(perm.size()) != r) throw ShapeError("permutation rank mismatch");
    std::vector<int64_t> out_shape(perm.size());
    for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = t.shape[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    Tensor out(out_shape);
    const auto in_st = strides_of(t.shape);
    const auto out_st = strides_of(out_shape);
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    const int64_t n = t.numel();
    for (int64_t flat = 0; flat < n; ++flat) {
        int64_t rem = flat;
        int64_t out_flat = 0;
        for (int i = 0; i < r; ++i) {
            idx[static_cast<size_t>(i)] = rem / in_st[static_cast<size_t>(i)];
            rem %= in_st[static_cast<size_t>(i)];
        }
        for (int i = 0; i < r; ++i) out_flat += idx[static_cast<size_t>(perm[static_cast<size_t>(i)])] * out_st[static_cast<size_t>(i)];
        out.data[static_cast<size_t>(out_flat)] = t.data[static_cast<size_t>(flat)];
    }
    return out;
}

Tensor reshape_tensor(const Tensor& t, std::vector<int64_t> s) {
    if (shape_numel(s) != t.numel()) {
        throw ShapeError("reshape " + t.shape_str() + " -> " + shape_str(s) + " changes element count");
    }
    Tensor out;
    out.shape = std::move(s);
    out.data = t.data;
    return out;
}

double Rng::uniform() {
    // 53-bit mantissa yields a uniform double in [0, 1).
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw InputError("uniform_int: empty range");
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // Rejection sampling keeps the draw unbiased.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x = 0;
    do {
        x = gen_();
    } while (x >= limit);
    return lo + static_cast<int64_t>(x % span);
}

Tensor Rng::normal_tensor(std::vector<int64_t> s, double mean, double stddev) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = mean + stddev * normal();
    return t;
}

Tensor Rng::uniform_tensor(std::vector<int64_t> s, double lo, double hi) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = lo + (hi - lo) * uniform();
    return t;
}

}  // namespace mm
