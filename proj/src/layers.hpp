#pragma once

// Raw kernels behind FusionModel. All buffers are dense row-major; inputs to
// the convolutions are pre-padded with zeros ("same" padding, stride 1).

#include <cstddef>
#include <new>
#include <vector>

namespace lbnp::layers {

// Scratch storage on 64-byte boundaries. Vectorized reductions peel a
// different number of leading elements depending on the address, so
// unaligned buffers would make float results depend on where (and on which
// thread) they were allocated.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class S>
using Buffer = std::vector<S, AlignedAllocator<S>>;

// GEMM-backed convolutions (im2col + Eigen), instantiated for float and
// double. `cols` is scratch that the forward pass fills and the backward pass
// reuses.
template <class S>
void conv1d_forward_gemm(const S* in, std::size_t cin, std::size_t len, const S* w, const S* b, std::size_t cout,
                         std::size_t k, S* out, Buffer<S>& cols);
template <class S>
void conv1d_backward_gemm(const Buffer<S>& cols, std::size_t cin, std::size_t len, const S* w, std::size_t cout,
                          std::size_t k, const S* dout, S* dw, S* db, S* din);
template <class S>
void conv2d3_forward_gemm(const S* in, std::size_t cin, std::size_t h, std::size_t w, const S* wt, const S* b,
                          std::size_t cout, S* out, Buffer<S>& cols);
template <class S>
void conv2d3_backward_gemm(const Buffer<S>& cols, std::size_t cin, std::size_t h, std::size_t w, const S* wt,
                           std::size_t cout, const S* dout, S* dwt, S* db, S* din);

// Direct-loop reference kernels with the same contracts.

// in: cin x (len + k - 1), w: cout x cin x k, out: cout x len.
void conv1d_forward(const double* in, std::size_t cin, std::size_t len, const double* w, const double* b,
                    std::size_t cout, std::size_t k, double* out);
// Accumulates dw, db and (if non-null) din (padded layout, same as `in`).
void conv1d_backward(const double* in, std::size_t cin, std::size_t len, const double* w, std::size_t cout,
                     std::size_t k, const double* dout, double* dw, double* db, double* din);

// 3x3 kernels. in: cin x (h + 2) x (w + 2), wt: cout x cin x 3 x 3, out: cout x h x w.
void conv2d3_forward(const double* in, std::size_t cin, std::size_t h, std::size_t w, const double* wt,
                     const double* b, std::size_t cout, double* out);
void conv2d3_backward(const double* in, std::size_t cin, std::size_t h, std::size_t w, const double* wt,
                      std::size_t cout, const double* dout, double* dwt, double* db, double* din);

template <class S>
void relu_inplace(S* x, std::size_t n);

// 2x2 max pooling, floor semantics. `arg` receives the flat input index of
// each maximum (first maximum on ties).
template <class S>
void maxpool2_forward(const S* in, std::size_t c, std::size_t h, std::size_t w, S* out, std::size_t* arg);

// Copies a c x h x w tensor into a zeroed c x (h + 2p) x (w + 2p) buffer.
template <class S>
void pad2d(const S* in, std::size_t c, std::size_t h, std::size_t w, std::size_t p, S* out);
// 1-D version: c x len -> c x (len + 2p).
template <class S>
void pad1d(const S* in, std::size_t c, std::size_t len, std::size_t p, S* out);

}  // namespace lbnp::layers
