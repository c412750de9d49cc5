#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pfa/tensor.hpp"

namespace pfa {

/// Ordered registry of named trainable leaves. Registration order is the
/// serialization identity: checkpoints and the optimizer both walk it.
template <typename T>
class ModelParams {
  public:
    Var<T> add(const std::string& name, Tensor<T> value) {
        if (index_.count(name)) {
            throw Error("duplicate parameter name: " + name);
        }
        Var<T> v = leaf(std::move(value), true, name);
        index_[name] = items_.size();
        items_.emplace_back(name, v);
        return v;
    }

    const Var<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw Error("unknown parameter name: " + name);
        }
        return items_[it->second].second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t size() const { return items_.size(); }
    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, v] : items_) n += v->value.numel();
        return n;
    }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    void zero_grad() {
        for (auto& [name, v] : items_) v->zero_grad();
    }

    /// Gradient snapshot after backward(); missing gradients are reported by
    /// the optimizer, not here.
    std::map<std::string, Tensor<T>> gradients() const {
        std::map<std::string, Tensor<T>> out;
        for (const auto& [name, v] : items_) {
            if (v->grad.numel() != 0) out[name] = v->grad;
        }
        return out;
    }

  private:
    std::vector<std::pair<std::string, Var<T>>> items_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace pfa
