#ifndef RELIGHT_BACKBONE_TAPE_HPP
#define RELIGHT_BACKBONE_TAPE_HPP

#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "relight/tensor.hpp"

namespace relight {

/// A named trainable array together with its accumulated gradient.
template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape(), T(0))
    {
    }

    void zero_grad() { grad.fill(T(0)); }
};

/// Handle to a value recorded on a Tape.
struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

/// Records forward values and backward closures for the layer ops in ops.hpp.
///
/// Values are kept for the lifetime of the tape, so one tape is built per
/// training step (or per inference call) and discarded afterwards. A tape
/// constructed with `record = false` keeps values but never stores closures.
template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&)>;

    explicit Tape(bool record = true) : record_(record) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const noexcept { return record_; }

    /// Data that never receives a gradient.
    Var constant(Tensor<T> v) { return push(std::move(v), false, {}); }

    /// Leaf that receives a gradient (used by gradient checks).
    Var variable(Tensor<T> v) { return push(std::move(v), record_, {}); }

    /// Leaf bound to a parameter; its gradient is flushed into `p.grad` by backward().
    /// Repeated calls with the same parameter return the same Var.
    Var param(Parameter<T>& p)
    {
        if (auto it = param_vars_.find(&p); it != param_vars_.end())
            return it->second;
        Var v = push(p.value, record_, {});
        param_vars_.emplace(&p, v);
        param_order_.emplace_back(&p, v);
        return v;
    }

    const Tensor<T>& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
    const Shape& shape(Var v) const { return value(v).shape(); }
    bool requires_grad(Var v) const { return v.valid() && nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

    bool has_grad(Var v) const { return !nodes_.at(static_cast<std::size_t>(v.id)).grad.empty(); }

    /// Gradient buffer of `v`, zero-initialized on first access.
    Tensor<T>& grad(Var v)
    {
        Node& n = nodes_.at(static_cast<std::size_t>(v.id));
        if (n.grad.empty())
            n.grad = Tensor<T>(n.value.shape(), T(0));
        return n.grad;
    }

    /// Appends an op result. The closure is kept only if some input needs a gradient.
    Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward)
    {
        bool needs = false;
        for (Var in : inputs)
            needs = needs || requires_grad(in);
        needs = needs && record_;
        return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
    }

    /// Reverse sweep from a scalar root; parameter gradients are accumulated.
    void backward(Var root)
    {
        detail::require(record_, "backward() on a non-recording tape");
        detail::require(value(root).size() == 1, "backward() root must be a scalar");
        if (!requires_grad(root))
            return;
        grad(root)[0] += T(1);
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.backward && !n.grad.empty())
                n.backward(*this);
        }
        for (auto& [p, v] : param_order_) {
            if (!has_grad(v))
                continue;
            const Tensor<T>& g = grad(v);
            for (std::size_t k = 0; k < g.size(); ++k)
                p->grad[k] += g[k];
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        Backward backward;
    };

    Var push(Tensor<T> value, bool requires_grad, Backward backward)
    {
        nodes_.push_back(Node{std::move(value), Tensor<T>{}, requires_grad, std::move(backward)});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    bool record_;
    std::vector<Node> nodes_;
    std::unordered_map<const Parameter<T>*, Var> param_vars_;
    std::vector<std::pair<Parameter<T>*, Var>> param_order_;
};

} // namespace relight

#endif // RELIGHT_BACKBONE_TAPE_HPP
