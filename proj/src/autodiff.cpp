#include "mm/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace mm {

namespace {

std::atomic<int64_t> g_node_counter{0};
thread_local bool g_grad_enabled = true;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

std::shared_ptr<Node> make_leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && g_grad_enabled;
    n->order = g_node_counter.fetch_add(1);
    return n;
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    bool needs = false;
    if (g_grad_enabled) {
        for (const Var& p : parents) needs = needs || p.requires_grad();
    }
    Var out;
    out.node_ = std::make_shared<Node>();
    out.node_->value = std::move(value);
    out.node_->order = g_node_counter.fetch_add(1);
    out.node_->requires_grad = needs;
    if (needs) {
        out.node_->backprop = std::move(backprop);
        out.node_->parents.reserve(parents.size());
        for (Var& p : parents) out.node_->parents.push_back(p.node_);
    }
    return out;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.val().same_shape(b.val())) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.val().shape_str() + " vs " + b.val().shape_str());
    }
}

// C[m,n] += A[m,k] * B[k,n], with optional transposes on A/B.
void gemm_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool ta, bool tb) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            const double av = ta ? a[p * m + i] : a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = tb ? nullptr : b + p * n;
            if (!tb) {
                double* crow = c + i * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            } else {
                double* crow = c + i * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
            }
        }
    }
}

}  // namespace

Tensor& Node::ensure_grad() {
    if (grad.shape != value.shape) grad = Tensor::zeros_like(value);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(make_leaf(std::move(value), requires_grad)) {}

void Var::zero_grad() const {
    if (node_) node_->grad = Tensor::zeros_like(node_->value);
}

Var Var::detach() const { return Var(node_->value, false); }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
    if (!loss.defined() || loss.val().numel() != 1) throw InputError("backward: loss must be a defined scalar");
    if (!loss.node_->requires_grad) throw InputError("backward: loss does not require grad");

    // Collect the reachable subgraph, then run closures newest-first.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.node_.get()};
    seen.insert(loss.node_.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->order > b->order; });

    loss.node_->ensure_grad();
    loss.node_->grad.data[0] += 1.0;
    for (Node* n : order) {
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------- elementwise ----------------

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a.val();
    const Tensor& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const Tensor& g = n.grad;
        for (int pi = 0; pi < 2; ++pi) {
            if (!n.parents[static_cast<size_t>(pi)]->requires_grad) continue;
            Tensor& pg = n.parents[static_cast<size_t>(pi)]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.val();
    const Tensor& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const Tensor& g = n.grad;
        if (n.parents[0]->requires_grad) {
            Tensor& pg = n.parents[0]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& pg = n.parents[1]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] -= g[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.val();
    const Tensor& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const Tensor& g = n.grad;
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv2 = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor& pg = n.parents[0]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * bv2[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& pg = n.parents[1]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.val();
    for (double& v : out.data) v *= s;
    return make_op(std::move(out), {a}, [s](Node& n) {
        Tensor& pg = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += s * n.grad[i];
    });
}

Var add_scalar(const Var& a, double c) {
    Tensor out = a.val();
    for (double& v : out.data) v += c;
    return make_op(std::move(out), {a}, [](Node& n) {
        Tensor& pg = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += n.grad[i];
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var gelu(const Var& a) {
    Tensor out = a.val();
    for (double& v : out.data) v = v * 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    return make_op(std::move(out), {a}, [](Node& n) {
        const Tensor& x = n.parents[0]->value;
        Tensor& pg = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            const double xi = x[i];
            const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
            pg[i] += n.grad[i] * (cdf + xi * pdf);
        }
    });
}

Var exp_op(const Var& a) {
    Tensor out = a.val();
    for (double& v : out.data) v = std::exp(v);
    return make_op(std::move(out), {a}, [](Node& n) {
        Tensor& pg = n.parents[0]->ensure_grad();
        const Tensor& y = n.value;
        for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += n.grad[i] * y[i];
    });
}

Var square(const Var& a) { return mul(a, a); }

// ---------------- matrix ----------------

Var matmul(const Var& a, const Var& b) {
    if (a.val().rank() != 2 || b.val().rank() != 2 || a.val().shape[1] != b.val().shape[0]) {
        throw ShapeError("matmul: incompatible " + a.val().shape_str() + " x " + b.val().shape_str());
    }
    const int64_t m = a.val().shape[0], k = a.val().shape[1], n = b.val().shape[1];
    Tensor out({m, n});
    gemm_acc(a.val().data.data(), b.val().data.data(), out.data.data(), m, k, n, false, false);
    return make_op(std::move(out), {a, b}, [m, k, n](Node& node) {
        const double* g = node.grad.data.data();
        const Tensor& av = node.parents[0]->value;
        const Tensor& bv = node.parents[1]->value;
        if (node.parents[0]->requires_grad) {
            // dA[m,k] = G[m,n] * B^T
            gemm_acc(g, bv.data.data(), node.parents[0]->ensure_grad().data.data(), m, n, k, false, true);
        }
        if (node.parents[1]->requires_grad) {
            // dB[k,n] = A^T * G
            gemm_acc(av.data.data(), g, node.parents[1]->ensure_grad().data.data(), k, m, n, true, false);
        }
    });
}

Var bmm(const Var& a, const Var& b) {
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.rank() != 3 || bv.rank() != 3 || av.shape[0] != bv.shape[0] || av.shape[2] != bv.shape[1]) {
        throw ShapeError("bmm: incompatible " + av.shape_str() + " x " + bv.shape_str());
    }
    const int64_t B = av.shape[0], m = av.shape[1], k = av.shape[2], n = bv.shape[2];
    Tensor out({B, m, n});
    for (int64_t bi = 0; bi < B; ++bi) {
        gemm_acc(av.data.data() + bi * m * k, bv.data.data() + bi * k * n, out.data.data() + bi * m * n, m, k, n,
                 false, false);
    }
    return make_op(std::move(out), {a, b}, [B, m, k, n](Node& node) {
        const Tensor& av2 = node.parents[0]->value;
        const Tensor& bv2 = node.parents[1]->value;
        for (int64_t bi = 0; bi < B; ++bi) {
            const double* g = node.grad.data.data() + bi * m * n;
            if (node.parents[0]->requires_grad) {
                gemm_acc(g, bv2.data.data() + bi * k * n, node.parents[0]->ensure_grad().data.data() + bi * m * k, m,
                         n, k, false, true);
            }
            if (node.parents[1]->requires_grad) {
                gemm_acc(av2.data.data() + bi * m * k, g, node.parents[1]->ensure_grad().data.data() + bi * k * n, k,
                         m, n, true, false);
            }
        }
    });
}

Var transpose_last2(const Var& a) {
    const int r = a.val().rank();
    if (r < 2) throw ShapeError("transpose_last2 needs rank >= 2");
    std::vector<int> perm(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) perm[static_cast<size_t>(i)] = i;
    std::swap(perm[static_cast<size_t>(r - 1)], perm[static_cast<size_t>(r - 2)]);
    return permute(a, perm);
}

// ---------------- structure ----------------

Var permute(const Var& a, const std::vector<int>& perm) {
    Tensor out = permute_tensor(a.val(), perm);
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    return make_op(std::move(out), {a}, [inv](Node& n) {
        Tensor back = permute_tensor(n.grad, inv);
        Tensor& pg = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < back.numel(); ++i) pg[i] += back[i];
    });
}

Var reshape(const Var& a, std::vector<int64_t> s) {
    Tensor out = reshape_tensor(a.val(), std::move(s));
    return make_op(std::move(out), {a}, [](Node& n) {
        Tensor& pg = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += n.grad[i];
    });
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw InputError("concat: no inputs");
    const int r = parts[0].val().rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("concat: bad axis");
    std::vector<int64_t> out_shape = parts[0].val().shape;
    int64_t total = 0;
    for (const Var& p : parts) {
        if (p.val().rank() != r) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < r; ++i) {
            if (i != axis && p.val().shape[static_cast<size_t>(i)] != out_shape[static_cast<size_t>(i)]) {
                throw ShapeError("concat: shape mismatch " + p.val().shape_str());
            }
        }
        total += p.val().shape[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = total;

    Tensor out(out_shape);
    // outer: product of dims before axis; inner: product after.
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<size_t>(i)];

    std::vector<int64_t> axis_sizes;
    int64_t offset = 0;
    for (const Var& p : parts) {
        const int64_t len = p.val().shape[static_cast<size_t>(axis)];
        axis_sizes.push_back(len);
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = p.val().data.data() + o * len * inner;
            double* dst = out.data.data() + (o * total + offset) * inner;
            std::copy(src, src + len * inner, dst);
        }
        offset += len;
    }

    return make_op(std::move(out), parts, [axis_sizes, outer, inner, total](Node& n) {
        int64_t off = 0;
        for (size_t pi = 0; pi < n.parents.size(); ++pi) {
            const int64_t len = axis_sizes[pi];
            if (n.parents[pi]->requires_grad) {
                Tensor& pg = n.parents[pi]->ensure_grad();
                for (int64_t o = 0; o < outer; ++o) {
                    const double* src = n.grad.data.data() + (o * total + off) * inner;
                    double* dst = pg.data.data() + o * len * inner;
                    for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                }
            }
            off += len;
        }
    });
}

Var slice(const Var& a, int axis, int64_t start, int64_t len) {
    const Tensor& av = a.val();
    const int r = av.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("slice: bad axis");
    const int64_t dim = av.shape[static_cast<size_t>(axis)];
    if (start < 0 || len <= 0 || start + len > dim) throw ShapeError("slice: window out of range");

    std::vector<int64_t> out_shape = av.shape;
    out_shape[static_cast<size_t>(axis)] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= av.shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= av.shape[static_cast<size_t>(i)];

    Tensor out(out_shape);
    for (int64_t o = 0; o < outer; ++o) {
        const double* src = av.data.data() + (o * dim + start) * inner;
        std::copy(src, src + len * inner, out.data.data() + o * len * inner);
    }
    return make_op(std::move(out), {a}, [outer, inner, dim, start, len](Node& n) {
        Tensor& pg = n.parents[0]->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = n.grad.data.data() + o * len * inner;
            double* dst = pg.data.data() + (o * dim + start) * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
}

Var upsample2x_hw(const Var& a) {
    const Tensor& av = a.val();
    if (av.rank() != 4) throw ShapeError("upsample2x_hw expects (T, h, w, C), got " + av.shape_str());
    const int64_t T = av.shape[0], h = av.shape[1], w = av.shape[2], C = av.shape[3];
    Tensor out({T, 2 * h, 2 * w, C});
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t y = 0; y < 2 * h; ++y) {
            for (int64_t x = 0; x < 2 * w; ++x) {
                const double* src = av.data.data() + ((t * h + y / 2) * w + x / 2) * C;
                double* dst = out.data.data() + ((t * 2 * h + y) * 2 * w + x) * C;
                std::copy(src, src + C, dst);
            }
        }
    }
    return make_op(std::move(out), {a}, [T, h, w, C](Node& n) {
        Tensor& pg = n.parents[0]->ensure_grad();
        for (int64_t t = 0; t < T; ++t) {
            for (int64_t y = 0; y < 2 * h; ++y) {
                for (int64_t x = 0; x < 2 * w; ++x) {
                    const double* src = n.grad.data.data() + ((t * 2 * h + y) * 2 * w + x) * C;
                    double* dst = pg.data.data() + ((t * h + y / 2) * w + x / 2) * C;
                    for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
                }
            }
        }
    });
}

// ---------------- broadcast ----------------

namespace {
void check_vec(const Var& x, const Var& v, const char* op) {
    if (v.val().rank() != 1 || x.val().shape.back() != v.val().shape[0]) {
        throw ShapeError(std::string(op) + ": vector " + v.val().shape_str() + " does not match trailing axis of " +
                         x.val().shape_str());
    }
}
}  // namespace

Var add_vec(const Var& x, const Var& v) {
    check_vec(x, v, "add_vec");
    const int64_t D = v.val().shape[0];
    const int64_t rows = x.val().numel() / D;
    Tensor out = x.val();
    for (int64_t r = 0; r < rows; ++r) {
        double* row = out.data.data() + r * D;
        for (int64_t d = 0; d < D; ++d) row[d] += v.val()[d];
    }
    return make_op(std::move(out), {x, v}, [D, rows](Node& n) {
        if (n.parents[0]->requires_grad) {
            Tensor& pg = n.parents[0]->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) pg[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& vg = n.parents[1]->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const double* row = n.grad.data.data() + r * D;
                for (int64_t d = 0; d < D; ++d) vg[d] += row[d];
            }
        }
    });
}

Var mul_vec(const Var& x, const Var& v) {
    check_vec(x, v, "mul_vec");
    const int64_t D = v.val().shape[0];
    const int64_t rows = x.val().numel() / D;
    Tensor out = x.val();
    for (int64_t r = 0; r < rows; ++r) {
        double* row = out.data.data() + r * D;
        for (int64_t d = 0; d < D; ++d) row[d] *= v.val()[d];
    }
    return make_op(std::move(out), {x, v}, [D, rows](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& vv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor& pg = n.parents[0]->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t d = 0; d < D; ++d) pg[r * D + d] += n.grad[r * D + d] * vv[d];
            }
        }
        if (n.parents[1]->requires_grad) {
            Tensor& vg = n.parents[1]->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t d = 0; d < D; ++d) vg[d] += n.grad[r * D + d] * xv[r * D + d];
            }
        }
    });
}

// ---------------- normalization / reductions ----------------

Var layernorm(const Var& x, double eps) {
    const Tensor& xv = x.val();
    const int64_t D = xv.shape.back();
    const int64_t rows = xv.numel() / D;
    Tensor out(xv.shape);
    std::vector<double> invstd(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = xv.data.data() + r * D;
        double mean = 0.0;
        for (int64_t d = 0; d < D; ++d) mean += row[d];
        mean /= static_cast<double>(D);
        double var = 0.0;
        for (int64_t d = 0; d < D; ++d) var += (row[d] - mean) * (row[d] - mean);
        var /= static_cast<double>(D);
        const double is = 1.0 / std::sqrt(var + eps);
        invstd[static_cast<size_t>(r)] = is;
        double* orow = out.data.data() + r * D;
        for (int64_t d = 0; d < D; ++d) orow[d] = (row[d] - mean) * is;
    }
    return make_op(std::move(out), {x}, [D, rows, invstd](Node& n) {
        Tensor& pg = n.parents[0]->ensure_grad();
        const Tensor& y = n.value;  // normalized output
        for (int64_t r = 0; r < rows; ++r) {
            const double* g = n.grad.data.data() + r * D;
            const double* yr = y.data.data() + r * D;
            double gmean = 0.0, gymean = 0.0;
            for (int64_t d = 0; d < D; ++d) {
                gmean += g[d];
                gymean += g[d] * yr[d];
            }
            gmean /= static_cast<double>(D);
            gymean /= static_cast<double>(D);
            const double is = invstd[static_cast<size_t>(r)];
            double* pgr = pg.data.data() + r * D;
            for (int64_t d = 0; d < D; ++d) pgr[d] += is * (g[d] - gmean - yr[d] * gymean);
        }
    });
}

Var softmax_last(const Var& x) {
    const Tensor& xv = x.val();
    const int64_t D = xv.shape.back();
    const int64_t rows = xv.numel() / D;
    Tensor out(xv.shape);
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = xv.data.data() + r * D;
        double m = row[0];
        for (int64_t d = 1; d < D; ++d) m = std::max(m, row[d]);
        double z = 0.0;
        double* orow = out.data.data() + r * D;
        for (int64_t d = 0; d < D; ++d) {
            orow[d] = std::exp(row[d] - m);
            z += orow[d];
        }
        for (int64_t d = 0; d < D; ++d) orow[d] /= z;
    }
    return make_op(std::move(out), {x}, [D, rows](Node& n) {
        Tensor& pg = n.parents[0]->ensure_grad();
        const Tensor& p = n.value;
        for (int64_t r = 0; r < rows; ++r) {
            const double* g = n.grad.data.data() + r * D;
            const double* pr = p.data.data() + r * D;
            double dot = 0.0;
            for (int64_t d = 0; d < D; ++d) dot += g[d] * pr[d];
            double* pgr = pg.data.data() + r * D;
            for (int64_t d = 0; d < D; ++d) pgr[d] += pr[d] * (g[d] - dot);
        }
    });
}

Var sum_all(const Var& x) {
    double s = 0.0;
    for (double v : x.val().data) s += v;
    return make_op(Tensor::scalar(s), {x}, [](Node& n) {
        Tensor& pg = n.parents[0]->ensure_grad();
        for (double& v : pg.data) v += n.grad[0];
    });
}

Var mean_all(const Var& x) {
    const double inv = 1.0 / static_cast<double>(x.val().numel());
    double s = 0.0;
    for (double v : x.val().data) s += v;
    return make_op(Tensor::scalar(s * inv), {x}, [inv](Node& n) {
        Tensor& pg = n.parents[0]->ensure_grad();
        for (double& v : pg.data) v += n.grad[0] * inv;
    });
}

Var mse(const Var& a, const Var& b) {
    check_same_shape(a, b, "mse");
    return mean_all(square(sub(a, b)));
}

}  // namespace mm
