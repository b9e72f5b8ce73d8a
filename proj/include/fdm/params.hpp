#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace fdm {

template <typename T>
struct ParamTensor {
    std::string name;
    std::vector<int> dims;
    std::vector<T> value;
};

/// Ordered collection of named parameter tensors. Order is construction order
/// and is what checkpoints and optimiser state follow.
template <typename T>
class ParamSet {
public:
    std::size_t add(std::string name, std::vector<int> dims, T fill = T(0)) {
        if (index_.count(name) != 0) throw std::invalid_argument("duplicate parameter '" + name + "'");
        std::size_t n = 1;
        for (int d : dims) n *= static_cast<std::size_t>(d);
        index_[name] = tensors_.size();
        tensors_.push_back({std::move(name), std::move(dims), std::vector<T>(n, fill)});
        return tensors_.size() - 1;
    }

    [[nodiscard]] std::size_t size() const { return tensors_.size(); }
    [[nodiscard]] bool contains(const std::string& name) const { return index_.count(name) != 0; }
    [[nodiscard]] std::size_t index_of(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
        return it->second;
    }
    ParamTensor<T>& operator[](std::size_t i) { return tensors_[i]; }
    const ParamTensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
    ParamTensor<T>& get(const std::string& name) { return tensors_[index_of(name)]; }
    const ParamTensor<T>& get(const std::string& name) const { return tensors_[index_of(name)]; }

    [[nodiscard]] std::size_t count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.value.size();
        return n;
    }

    [[nodiscard]] ParamSet zeros_like() const {
        ParamSet out;
        for (const auto& t : tensors_) out.add(t.name, t.dims);
        return out;
    }

    void set_zero() {
        for (auto& t : tensors_) std::fill(t.value.begin(), t.value.end(), T(0));
    }

    template <typename U>
    [[nodiscard]] ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& t : tensors_) {
            const std::size_t i = out.add(t.name, t.dims);
            for (std::size_t j = 0; j < t.value.size(); ++j) out[i].value[j] = static_cast<U>(t.value[j]);
        }
        return out;
    }

    [[nodiscard]] bool same_layout(const ParamSet& o) const {
        if (o.size() != size()) return false;
        for (std::size_t i = 0; i < size(); ++i) {
            if (tensors_[i].name != o.tensors_[i].name || tensors_[i].dims != o.tensors_[i].dims) return false;
        }
        return true;
    }

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

private:
    std::vector<ParamTensor<T>> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace fdm
