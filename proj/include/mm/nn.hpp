#pragma once

#include <map>
#include <string>
#include <vector>

#include "mm/autodiff.hpp"

namespace mm {

// Named parameter registry. Names are dotted paths ("base.block0.attn.wq");
// prefixes select namespaces for freezing, optimization, and digests.
class ParamStore {
  public:
    // Returns the existing parameter or creates it via init(). Shape of an
    // existing parameter must match.
    Var& ensure(const std::string& name, const std::vector<int64_t>& shape, const std::function<Tensor()>& init);

    // Existing parameter or WeightsError.
    Var& at(const std::string& name);
    const Var& at(const std::string& name) const;

    bool has(const std::string& name) const { return params_.count(name) > 0; }
    size_t size() const { return params_.size(); }

    // Sorted names, optionally restricted to a dotted prefix.
    std::vector<std::string> names(const std::string& prefix = "") const;

    void set_requires_grad(const std::string& prefix, bool value);
    void zero_grads();

    std::map<std::string, Var>& all() { return params_; }
    const std::map<std::string, Var>& all() const { return params_; }

  private:
    std::map<std::string, Var> params_;
};

// Dense layer over the trailing axis: y = x W + b with W [in, out], b [out].
struct Linear {
    Var w;
    Var b;

    // Registers (or reattaches to) "<name>.w" / "<name>.b" in the store.
    // New weights draw from normal(0, 1/sqrt(in)); biases start at zero.
    // With rng == nullptr a missing parameter is a WeightsError (attach mode,
    // used after loading a checkpoint).
    static Linear create(ParamStore& ps, const std::string& name, int64_t in, int64_t out, Rng* rng);
    static Linear create_zero(ParamStore& ps, const std::string& name, int64_t in, int64_t out);

    // x: (..., in) -> (..., out)
    Var operator()(const Var& x) const;

    int64_t in_dim() const { return w.val().shape[0]; }
    int64_t out_dim() const { return w.val().shape[1]; }
};

// AdamW with decoupled weight decay over a fixed set of parameter names.
struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
  public:
    AdamW(ParamStore& ps, std::vector<std::string> param_names, AdamWConfig cfg);

    // Applies one update from the accumulated grads, then leaves grads intact
    // (caller zeroes them). Parameters with no grad yet are treated as zero-grad.
    void step();

    const std::vector<std::string>& param_names() const { return names_; }

  private:
    ParamStore& ps_;
    std::vector<std::string> names_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

// Scales grads of the named parameters so their global L2 norm is at most
// max_norm. Returns the pre-clip norm.
double clip_global_norm(ParamStore& ps, const std::vector<std::string>& names, double max_norm);

// Checkpoints: a directory with one raw tensor file per parameter
// ("<name>.tnsr") plus index.json mapping name -> shape.
void save_checkpoint(const std::string& dir, const ParamStore& ps);
// Loads every indexed parameter into the store (creating or overwriting).
void load_checkpoint(const std::string& dir, ParamStore& ps);

// Digest over the f32 serialization of all parameters under a prefix, in
// sorted name order. Stable across a save/load round trip.
std::string params_digest(const ParamStore& ps, const std::string& prefix = "");

}  // namespace mm
