#pragma once

#include <string>
#include <vector>

#include "fragvqa/autodiff.hpp"
#include "fragvqa/rng.hpp"

namespace fragvqa::nn {

struct Param {
    std::string name;
    ad::Var var;
    bool frozen = false;
};

// Registry of named trainable tensors. Initialization is salted by parameter
// name, so adding or reordering modules does not shift other modules' init.
class ParamSet {
public:
    explicit ParamSet(std::uint64_t seed) : seed_(seed) {}

    ad::Var add(const std::string& name, Tensor init, bool frozen = false);
    Rng init_rng(const std::string& name) const { return Rng(derive_seed(seed_, "init/" + name)); }

    std::vector<Param>& items() { return items_; }
    const std::vector<Param>& items() const { return items_; }
    const Param* find(const std::string& name) const;
    std::uint64_t seed() const { return seed_; }

    void zero_grads();
    std::int64_t count_trainable() const;

    std::vector<std::pair<std::string, Tensor>> state() const;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& state);

private:
    std::uint64_t seed_;
    std::vector<Param> items_;
};

Tensor init_normal(Rng& rng, std::vector<std::int64_t> shape, double stddev);
Tensor init_xavier(Rng& rng, std::int64_t fan_in, std::int64_t fan_out);

enum class Init { kXavier, kZero, kSmallNormal };

class Linear {
public:
    Linear() = default;
    Linear(ParamSet& ps, const std::string& name, std::int64_t in, std::int64_t out,
           Init init = Init::kXavier, bool frozen = false);
    ad::Var forward(const ad::Var& x) const;  // [S,in] -> [S,out]
    ad::Var w, b;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParamSet& ps, const std::string& name, std::int64_t width, bool frozen = false);
    ad::Var forward(const ad::Var& x) const;  // normalizes the last axis
    ad::Var gamma, beta;
    double eps = 1e-5;
};

// [S, h*dh] -> [h, S, dh] and back; permutations via flat gathers.
ad::Var split_heads(const ad::Var& x, int heads);
ad::Var merge_heads(const ad::Var& x);

// Full (unmasked) multi-head attention. Query width `dim`, key/value source
// width `kv_dim`; kv projections map into `dim`.
class Attention {
public:
    Attention() = default;
    Attention(ParamSet& ps, const std::string& name, int dim, int heads, int kv_dim,
              bool frozen = false);
    ad::Var forward(const ad::Var& q, const ad::Var& kv) const;  // [S,dim],[N,kv_dim] -> [S,dim]
    int dim = 0, heads = 0, kv_dim = 0;
    Linear wq, wk, wv, wo;
};

struct AdamWConfig {
    double lr = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// Decoupled weight decay: p -= lr*wd*p applied separately from the moment
// update. Frozen parameters are never touched.
class AdamW {
public:
    AdamW(ParamSet& params, AdamWConfig cfg);
    void step();
    void zero_grad() { params_.zero_grads(); }
    std::int64_t iterations() const { return t_; }

private:
    ParamSet& params_;
    AdamWConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace fragvqa::nn
