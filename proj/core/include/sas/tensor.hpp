#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sas/error.hpp"
#include "sas/rng.hpp"

namespace sas {

std::string shape_str(const std::vector<int>& shape);

inline std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

// Dense row-major tensor with an optional gradient buffer. Copying a Tensor
// copies the handle, not the storage; reshape/narrow0 return views onto the
// same buffer. Production code uses Tensor<float>; gradient checking
// instantiates the same graph at double.
template <typename T>
class Tensor {
public:
    struct Buffer {
        std::vector<T> value;
        std::vector<T> grad;  // allocated iff requires_grad
        bool requires_grad = false;
    };

    Tensor() = default;

    explicit Tensor(std::vector<int> shape, bool requires_grad = false)
        : buf_(std::make_shared<Buffer>()), shape_(std::move(shape)) {
        check_shape(shape_);
        numel_ = shape_numel(shape_);
        buf_->value.assign(static_cast<std::size_t>(numel_), T(0));
        if (requires_grad) set_requires_grad(true);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, T v) {
        Tensor t(std::move(shape));
        for (auto& x : t.buf_->value) x = v;
        return t;
    }

    static Tensor from_data(std::vector<int> shape, std::vector<T> data) {
        Tensor t;
        t.buf_ = std::make_shared<Buffer>();
        t.shape_ = std::move(shape);
        check_shape(t.shape_);
        t.numel_ = shape_numel(t.shape_);
        if (t.numel_ != static_cast<std::int64_t>(data.size()))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(t.shape_));
        t.buf_->value = std::move(data);
        return t;
    }

    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
        Tensor t(std::move(shape));
        for (auto& x : t.buf_->value) x = static_cast<T>(mean + stddev * rng.normal());
        return t;
    }

    bool defined() const { return static_cast<bool>(buf_); }
    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return numel_; }

    std::span<T> data() { return {buf_->value.data(), static_cast<std::size_t>(numel_)}; }
    std::span<const T> data() const { return {buf_->value.data(), static_cast<std::size_t>(numel_)}; }

    bool requires_grad() const { return buf_ && buf_->requires_grad; }

    void set_requires_grad(bool on) {
        buf_->requires_grad = on;
        if (on && buf_->grad.size() != buf_->value.size()) buf_->grad.assign(buf_->value.size(), T(0));
    }

    std::span<T> grad() {
        if (!requires_grad()) throw UsageError("grad() on tensor without requires_grad");
        return {buf_->grad.data(), static_cast<std::size_t>(numel_)};
    }
    std::span<const T> grad() const {
        if (!requires_grad()) throw UsageError("grad() on tensor without requires_grad");
        return {buf_->grad.data(), static_cast<std::size_t>(numel_)};
    }

    void zero_grad() {
        if (requires_grad())
            for (auto& g : buf_->grad) g = T(0);
    }

    T item() const {
        if (numel_ != 1) throw UsageError("item() requires a scalar tensor, got shape " + shape_str(shape_));
        return buf_->value[0];
    }

    // View with a new shape over the same storage; never copies.
    Tensor reshape(std::vector<int> new_shape) const {
        check_shape(new_shape);
        if (shape_numel(new_shape) != numel_)
            throw ShapeError("reshape from " + shape_str(shape_) + " to " + shape_str(new_shape) +
                             " changes element count");
        Tensor v;
        v.buf_ = buf_;
        v.shape_ = std::move(new_shape);
        v.numel_ = numel_;
        return v;
    }

    // Prefix view of the leading axis: rows [0, len) of axis 0. Shares storage.
    Tensor narrow0(int len) const {
        if (ndim() < 1 || len < 1 || len > shape_[0])
            throw ShapeError("narrow0(" + std::to_string(len) + ") on shape " + shape_str(shape_));
        Tensor v;
        v.buf_ = buf_;
        v.shape_ = shape_;
        v.shape_[0] = len;
        v.numel_ = shape_numel(v.shape_);
        return v;
    }

    bool same_buffer(const Tensor& o) const { return buf_ == o.buf_; }

    // Deep copy of values (fresh storage, no grad history).
    Tensor clone_values() const {
        Tensor t;
        t.buf_ = std::make_shared<Buffer>();
        t.shape_ = shape_;
        t.numel_ = numel_;
        t.buf_->value.assign(data().begin(), data().end());
        return t;
    }

private:
    static void check_shape(const std::vector<int>& shape) {
        for (int d : shape)
            if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    }

    std::shared_ptr<Buffer> buf_;
    std::vector<int> shape_;
    std::int64_t numel_ = 0;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Reverse-mode tape. Operations register their output and one backward step;
// backward() zeroes the recorded intermediates, seeds the scalar loss
// gradient with 1 and replays the steps in exact reverse recording order.
// Leaf gradients accumulate across repeated calls; recording and replay are
// single-threaded.
template <typename T>
class Tape {
public:
    void record(const Tensor<T>& output, std::function<void()> backward_step) {
        outputs_.push_back(output);
        steps_.push_back(std::move(backward_step));
    }

    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1) throw UsageError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
        if (!loss.requires_grad()) throw UsageError("backward() on a loss that requires no grad");
        for (auto& out : outputs_) out.zero_grad();
        loss.grad()[0] += T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    void clear() {
        steps_.clear();
        outputs_.clear();
    }
    std::size_t size() const { return steps_.size(); }

private:
    std::vector<std::function<void()>> steps_;
    std::vector<Tensor<T>> outputs_;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace sas
