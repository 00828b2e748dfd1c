#pragma once

#include <cstdint>
#include <type_traits>
#include <vector>

#include "sas/tensor.hpp"

// Differentiable primitives. Every op takes an optional tape; when the tape is
// null or no input requires grad, nothing is recorded (cheap inference mode).
// All kernels use a fixed summation order per output element, so results are
// bit-reproducible for a given build, and parallelism (over independent output
// elements) cannot change them.
namespace sas {

// a: [..., m, k] (leading dims folded), b: [k, n]. Returns [..., m, n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape);

// a: [..., m, k], b: [n, k]. Returns a · bᵀ = [..., m, n].
template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape);

// x: [N, C_in, L], w: [C_out, C_in, k] with k odd, bias: [C_out].
// Cross-correlation over the last axis, zero padding (k-1)/2, length preserved.
template <typename T>
Tensor<T> conv1d_heads(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::type_identity_t<Tape<T>*> tape);

template <typename T>
Tensor<T> relu(const Tensor<T>& x, std::type_identity_t<Tape<T>*> tape);

// Gaussian error linear unit, tanh form.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x, std::type_identity_t<Tape<T>*> tape);

// Elementwise sum. b may have a shape that is a suffix of a's shape, in which
// case it is broadcast over the leading axes (bias / positional-table add).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape);

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s, std::type_identity_t<Tape<T>*> tape);

// Mean over one axis (removed from the output shape). Sums in index order,
// then scales by 1/len.
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis, std::type_identity_t<Tape<T>*> tape);

// View with a new shape; no data movement, gradients flow through the shared
// buffer, nothing is recorded.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> new_shape);

// Swap axes i and j (copies).
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int i, int j, std::type_identity_t<Tape<T>*> tape);

// Numerically stable softmax over the last axis. Throws NumericError on
// non-finite input.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, std::type_identity_t<Tape<T>*> tape);

// Last-axis layer norm with learned scale, no bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, T eps, std::type_identity_t<Tape<T>*> tape);

// table: [V, C], ids: B*T entries in [0, V). Returns [B, T, C].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::int32_t>& ids, int batch, int time,
                    std::type_identity_t<Tape<T>*> tape);

// logits: [..., V] folded to [N, V], targets: N class indices.
// Mean token-level negative log-likelihood as a scalar tensor.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::int32_t>& targets, std::type_identity_t<Tape<T>*> tape);

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op);

}  // namespace sas
