#pragma once

#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "slpnet/autodiff.hpp"
#include "slpnet/tensor.hpp"

namespace slpnet {

template <typename T>
struct ParamEntry {
    std::string name;
    Var<T> var;
    bool decay = true; // excluded from weight decay when false (PReLU slopes)
};

/// Named, ordered collection of trainable tensors. Names are stable
/// hierarchical paths ("slp2.dw.branch3.k31"); iteration order is
/// registration order and is the checkpoint /optimizer order.
template <typename T>
class ParamStore {
public:
    Var<T> add(const std::string &name, Tensor4<T> value, bool decay = true) {
        if (index_.count(name)) throw ValueError("ParamStore: duplicate name " + name);
        Var<T> v(std::move(value), true);
        index_[name] = entries_.size();
        entries_.push_back({name, v, decay});
        return v;
    }

    const std::vector<ParamEntry<T>> &entries() const { return entries_; }
    std::vector<ParamEntry<T>> &entries() { return entries_; }

    const ParamEntry<T> *find(const std::string &name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &entries_[it->second];
    }

    int64_t total_params() const {
        int64_t total = 0;
        for (const auto &e : entries_) total += e.var.value().size();
        return total;
    }

    /// Parameter count of one named subtree, e.g. prefix "slp3".
    int64_t subtree_params(const std::string &prefix) const {
        int64_t total = 0;
        for (const auto &e : entries_)
            if (e.name.rfind(prefix + ".", 0) == 0 || e.name == prefix)
                total += e.var.value().size();
        return total;
    }

    void zero_grads() {
        for (auto &e : entries_) e.var.zero_grad();
    }

private:
    std::vector<ParamEntry<T>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

/// Deterministic parameter initializer: Kaiming-style fan-in scaled normals
/// for kernels, zeros for biases. One generator, draws in registration order.
template <typename T>
class ParamInit {
public:
    explicit ParamInit(uint64_t seed) : rng_(seed) {}

    /// fan_in_multiplier widens the effective fan-in: branches of a
    /// multi-branch neuron are summed, so each contributes 1/r of the
    /// output variance budget.
    Tensor4<T> kaiming(int oc, int ipg, int kh, int kw, double fan_in_multiplier = 1.0,
                       double gain = 1.0) {
        Tensor4<T> t(oc, ipg, kh, kw);
        const double fan_in = double(ipg) * kh * kw * fan_in_multiplier;
        std::normal_distribution<double> dist{0.0, gain * std::sqrt(2.0 / fan_in)};
        for (auto &v : t.data) v = static_cast<T>(dist(rng_));
        return t;
    }

    Tensor4<T> zero_bias(int channels) { return Tensor4<T>(1, channels, 1, 1); }

private:
    std::mt19937_64 rng_;
};

} // namespace slpnet
