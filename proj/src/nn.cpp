#include "mm/nn.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>

#include "json.hpp"

#include "mm/digest.hpp"
#include "mm/errors.hpp"
#include "mm/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mm {

Var& ParamStore::ensure(const std::string& name, const std::vector<int64_t>& shape,
                        const std::function<Tensor()>& init) {
    auto it = params_.find(name);
    if (it != params_.end()) {
        if (it->second.val().shape != shape) {
            throw WeightsError("parameter " + name + " has shape " + it->second.val().shape_str() +
                               ", expected " + shape_str(shape));
        }
        return it->second;
    }
    Tensor t = init();
    if (t.shape != shape) throw WeightsError("init for " + name + " produced wrong shape");
    auto [pos, ok] = params_.emplace(name, Var(std::move(t), true));
    (void)ok;
    return pos->second;
}

Var& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw WeightsError("missing parameter: " + name);
    return it->second;
}

const Var& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw WeightsError("missing parameter: " + name);
    return it->second;
}

std::vector<std::string> ParamStore::names(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : params_) {
        if (k.rfind(prefix, 0) == 0) out.push_back(k);
    }
    return out;
}

void ParamStore::set_requires_grad(const std::string& prefix, bool value) {
    for (auto& [k, v] : params_) {
        if (k.rfind(prefix, 0) == 0) v.node_->requires_grad = value;
    }
}

void ParamStore::zero_grads() {
    for (auto& [k, v] : params_) v.zero_grad();
}

Linear Linear::create(ParamStore& ps, const std::string& name, int64_t in, int64_t out, Rng* rng) {
    const double std = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.w = ps.ensure(name + ".w", {in, out}, [&]() -> Tensor {
        if (!rng) throw WeightsError("missing parameter " + name + ".w (incomplete checkpoint?)");
        Tensor t = rng->normal_tensor({in, out});
        for (double& v : t.data) v *= std;
        return t;
    });
    l.b = ps.ensure(name + ".b", {out}, [&]() -> Tensor {
        if (!rng) throw WeightsError("missing parameter " + name + ".b (incomplete checkpoint?)");
        return Tensor::zeros({out});
    });
    return l;
}

Linear Linear::create_zero(ParamStore& ps, const std::string& name, int64_t in, int64_t out) {
    Linear l;
    l.w = ps.ensure(name + ".w", {in, out}, [&] { return Tensor::zeros({in, out}); });
    l.b = ps.ensure(name + ".b", {out}, [&] { return Tensor::zeros({out}); });
    return l;
}

Var Linear::operator()(const Var& x) const {
    const std::vector<int64_t>& s = x.val().shape;
    const int64_t in = w.val().shape[0], out = w.val().shape[1];
    if (s.empty() || s.back() != in) {
        throw ShapeError("linear expects trailing dim " + std::to_string(in) + ", got " + x.val().shape_str());
    }
    const int64_t rows = x.val().numel() / in;
    Var flat = x.val().rank() == 2 ? x : reshape(x, {rows, in});
    Var y = add_vec(matmul(flat, w), b);
    if (x.val().rank() == 2) return y;
    std::vector<int64_t> out_shape(s.begin(), s.end() - 1);
    out_shape.push_back(out);
    return reshape(y, out_shape);
}

AdamW::AdamW(ParamStore& ps, std::vector<std::string> param_names, AdamWConfig cfg)
    : ps_(ps), names_(std::move(param_names)), cfg_(cfg) {}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const std::string& name : names_) {
        Var& p = ps_.at(name);
        Tensor& val = p.mutable_val();
        const Tensor& g = p.node_->ensure_grad();
        Tensor& m = m_.try_emplace(name, Tensor::zeros_like(val)).first->second;
        Tensor& v = v_.try_emplace(name, Tensor::zeros_like(val)).first->second;
        for (int64_t i = 0; i < val.numel(); ++i) {
            // decoupled weight decay, then the Adam moment update
            val[i] -= cfg_.lr * cfg_.weight_decay * val[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            val[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

double clip_global_norm(ParamStore& ps, const std::vector<std::string>& names, double max_norm) {
    double sq = 0.0;
    for (const std::string& name : names) {
        const Tensor& g = ps.at(name).node_->ensure_grad();
        for (double v : g.data) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (const std::string& name : names) {
            Tensor& g = ps.at(name).node_->ensure_grad();
            for (double& v : g.data) v *= s;
        }
    }
    return norm;
}

void save_checkpoint(const std::string& dir, const ParamStore& ps) {
    fs::create_directories(dir);
    json index = json::object();
    for (const auto& [name, var] : ps.all()) {
        write_tensor_file((fs::path(dir) / (name + ".tnsr")).string(), var.val());
        index[name] = var.val().shape;
    }
    write_text_atomic((fs::path(dir) / "index.json").string(), index.dump(2) + "\n");
}

void load_checkpoint(const std::string& dir, ParamStore& ps) {
    const fs::path index_path = fs::path(dir) / "index.json";
    if (!fs::exists(index_path)) throw WeightsError("no index.json in checkpoint " + dir);
    json index = json::parse(read_text(index_path.string()));
    for (auto it = index.begin(); it != index.end(); ++it) {
        const std::string& name = it.key();
        const fs::path file = fs::path(dir) / (name + ".tnsr");
        if (!fs::exists(file)) throw WeightsError("checkpoint " + dir + " missing " + name + ".tnsr");
        Tensor t = read_tensor_file(file.string());
        const std::vector<int64_t> want = it.value().get<std::vector<int64_t>>();
        if (t.shape != want) throw WeightsError("checkpoint tensor " + name + " shape mismatch");
        if (ps.has(name)) {
            Var& p = ps.at(name);
            if (p.val().shape != t.shape) throw WeightsError("loaded " + name + " conflicts with live shape");
            p.mutable_val() = std::move(t);
        } else {
            Tensor copy = t;
            ps.ensure(name, t.shape, [&] { return copy; });
        }
    }
}

std::string params_digest(const ParamStore& ps, const std::string& prefix) {
    Sha256 h;
    for (const std::string& name : ps.names(prefix)) {
        h.update(name);
        const Tensor& t = ps.at(name).val();
        for (int64_t d : t.shape) {
            uint32_t u = static_cast<uint32_t>(d);
            h.update(&u, 4);
        }
        for (double v : t.data) {
            // digest matches the on-disk f32 payload so it survives save/load
            float f = static_cast<float>(v);
            uint32_t u;
            std::memcpy(&u, &f, 4);
            unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                  static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
            h.update(b, 4);
        }
    }
    return h.hex();
}

}  // namespace mm
