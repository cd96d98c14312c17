#ifndef D2G_CORE_NN_HPP
#define D2G_CORE_NN_HPP

#include <map>
#include <string>
#include <vector>

#include "d2g/core/graph.hpp"
#include "d2g/core/rng.hpp"

namespace d2g {

// Ordered registry of named parameters. Insertion order defines optimizer
// state layout and checkpoint manifest order, so module construction order
// must be stable (it is: modules are built in declaration order).
class ParamStore {
public:
    explicit ParamStore(uint64_t init_seed = 0) : rng_(init_seed) {}

    Var create(const std::string& name, Tensor init) {
        if (index_.count(name)) throw std::invalid_argument("duplicate param: " + name);
        Var v = leaf(std::move(init));
        index_[name] = items_.size();
        items_.push_back({name, v});
        return v;
    }

    Var create_gaussian(const std::string& name, int n, int c, int h, int w, double stddev) {
        Tensor t(n, c, h, w);
        rng_.fill_gaussian(t, stddev);
        return create(name, std::move(t));
    }

    const Var& find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("no such param: " + name);
        return items_[it->second].second;
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    size_t size() const { return items_.size(); }
    const std::pair<std::string, Var>& item(size_t i) const { return items_[i]; }
    std::vector<std::pair<std::string, Var>>& items() { return items_; }
    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }

    void zero_grad() {
        for (auto& [name, v] : items_) {
            if (!v->grad.empty()) v->grad.fill(0.0);
        }
    }

    size_t scalar_count() const {
        size_t s = 0;
        for (const auto& [name, v] : items_) s += v->val.size();
        return s;
    }

    // copy values for every name present in both stores; returns copied count
    size_t copy_matching_from(const ParamStore& src) {
        size_t copied = 0;
        for (auto& [name, v] : items_) {
            if (src.contains(name)) {
                const Tensor& s = src.find(name)->val;
                if (!s.same_shape(v->val)) {
                    throw std::invalid_argument("copy_matching_from: shape mismatch at " + name);
                }
                v->val = s;
                ++copied;
            }
        }
        return copied;
    }

    Rng& init_rng() { return rng_; }

private:
    std::vector<std::pair<std::string, Var>> items_;
    std::map<std::string, size_t> index_;
    Rng rng_;
};

// temporarily freeze a parameter set so backward skips its gradients
inline void set_params_requires_grad(ParamStore& ps, bool on) {
    for (auto& [name, v] : ps.items()) v->requires_grad = on;
}

/*--------------------------------- modules ----------------------------------*/

struct Conv2d {
    Var w, b;
    int stride = 1, pad = 1;

    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int c_in, int c_out, int k, int stride_ = 1,
           int pad_ = -1, bool zero_init = false)
        : stride(stride_), pad(pad_ < 0 ? k / 2 : pad_) {
        double std = zero_init ? 0.0 : std::sqrt(2.0 / (c_in * k * k));
        w = ps.create_gaussian(name + ".w", c_out, c_in, k, k, std);
        b = ps.create(name + ".b", Tensor(1, c_out, 1, 1));
    }
    Var fwd(const Var& x) const { return conv2d(x, w, b, stride, pad); }
};

struct Linear {
    Var w, b;

    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int f_in, int f_out, bool zero_init = false) {
        double std = zero_init ? 0.0 : std::sqrt(1.0 / f_in);
        w = ps.create_gaussian(name + ".w", f_out, f_in, 1, 1, std);
        b = ps.create(name + ".b", Tensor(1, f_out, 1, 1));
    }
    Var fwd(const Var& x) const { return linear(x, w, b); }
};

struct GroupNorm {
    Var g, b;
    int groups = 4;

    GroupNorm() = default;
    GroupNorm(ParamStore& ps, const std::string& name, int c, int groups_ = 4) : groups(groups_) {
        g = ps.create(name + ".g", Tensor::full(1, c, 1, 1, 1.0));
        b = ps.create(name + ".b", Tensor(1, c, 1, 1));
    }
    Var fwd(const Var& x) const { return group_norm(x, g, b, groups); }
};

struct Embedding {
    Var table;

    Embedding() = default;
    Embedding(ParamStore& ps, const std::string& name, int count, int dim) {
        table = ps.create_gaussian(name + ".table", count, dim, 1, 1, 0.02);
    }
    Var fwd(const std::vector<int>& idx) const { return embedding(table, idx); }
};

}  // namespace d2g

#endif
