#pragma once

// Dense tensor with an optional gradient buffer, plus the define-by-run tape
// that drives reverse-mode differentiation. The tape is rebuilt on every
// forward pass; backward walks the recorded nodes once, in reverse recording
// order (which is a reverse topological order by construction), and
// accumulates gradients additively into the inputs.
//
// Rank is 1 or 2 everywhere in this codebase. Graphs are single-threaded;
// tensors holding frozen parameters may be read from multiple threads.

#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "treegpt/errors.hpp"

namespace treegpt {

template <class S>
class TensorT;

template <class S>
using TensorPtr = std::shared_ptr<TensorT<S>>;

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

template <class S>
class TensorT {
  public:
    std::vector<S> data;
    std::vector<S> grad;  // empty until ensure_grad(); always data.size() after
    bool requires_grad = false;

    static TensorPtr<S> zeros(std::vector<int> shape, bool requires_grad = false) {
        auto t = std::make_shared<TensorT<S>>(std::move(shape));
        t->requires_grad = requires_grad;
        return t;
    }

    static TensorPtr<S> from_data(std::vector<int> shape, std::vector<S> values,
                                  bool requires_grad = false) {
        auto t = std::make_shared<TensorT<S>>(std::move(shape));
        if (values.size() != t->data.size()) {
            throw DimensionError("tensor: " + shape_str(t->shape_) + " needs " +
                                 std::to_string(t->data.size()) + " values, got " +
                                 std::to_string(values.size()));
        }
        t->data = std::move(values);
        t->requires_grad = requires_grad;
        return t;
    }

    static TensorPtr<S> scalar(S v) { return from_data({1}, {v}); }

    explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
        if (shape_.empty() || shape_.size() > 2) {
            throw DimensionError("tensor: rank must be 1 or 2, got shape " + shape_str(shape_));
        }
        long n = 1;
        for (int d : shape_) {
            if (d <= 0) {
                throw DimensionError("tensor: shape entries must be positive, got " +
                                     shape_str(shape_));
            }
            n *= d;
        }
        data.assign(static_cast<size_t>(n), S(0));
    }

    const std::vector<int>& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    long numel() const noexcept { return static_cast<long>(data.size()); }
    int rows() const noexcept { return shape_[0]; }
    int cols() const noexcept { return rank() == 2 ? shape_[1] : 1; }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }

    void zero_grad() {
        if (!grad.empty()) grad.assign(grad.size(), S(0));
    }

  private:
    std::vector<int> shape_;
};

template <class S>
class Graph {
  public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const noexcept { return recording_; }

    void record(std::function<void()> backward_fn) {
        if (recording_) nodes_.push_back(std::move(backward_fn));
    }

    size_t node_count() const noexcept { return nodes_.size(); }

    // Seeds d(root)/d(root) = 1 and replays the tape backwards. Each node is
    // visited exactly once; a tensor consumed by several ops receives the sum
    // of the per-use gradients because every node accumulates with +=.
    void backward(const TensorPtr<S>& root) {
        if (!recording_) throw ValueError("backward: graph was built in no-record mode");
        if (root->numel() != 1) {
            throw DimensionError("backward: root must be scalar, got " +
                                 shape_str(root->shape()));
        }
        if (!root->requires_grad) {
            throw ValueError("backward: root does not require grad");
        }
        root->ensure_grad();
        root->grad[0] += S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void clear() { nodes_.clear(); }

  private:
    bool recording_;
    std::vector<std::function<void()>> nodes_;
};

}  // namespace treegpt
