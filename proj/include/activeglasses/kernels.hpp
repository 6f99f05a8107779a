// Data-parallel inner loops behind the cloud pipeline and the policy network.
//
// Every kernel has a scalar reference implementation and an AVX2 variant
// selected at runtime. The map kernels (everything here) vectorize across
// points/pixels while keeping the per-element operation order identical to
// the scalar path, and both paths are compiled with FP contraction off, so
// the two backends produce bit-identical results. Reductions that would
// reassociate (weight-gradient accumulation, loss sums) stay scalar in the
// callers on purpose.
//
// Backend selection: auto-detect at first use; override with the
// ACTIVEGLASSES_KERNELS env var ("scalar", "avx2", "auto") or force_backend().

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace ag::kern {

enum class Backend { scalar, avx2 };

Backend active_backend();
bool backend_supported(Backend b);
// Returns false (and leaves dispatch unchanged) if the backend is unsupported.
bool force_backend(Backend b);
std::string backend_name();

// y_i = R * x_i + t over SoA arrays; R row-major 3x3.
void transform_points(const double r[9], const double t[3],
                      const double* xs, const double* ys, const double* zs,
                      double* ox, double* oy, double* oz, size_t n);

// Pinhole back-projection of one image row at pixel row v:
//   X[u] = (u - cx) * d / fx,  Y[u] = (v - cy) * d / fy,  Z[u] = d
// d is the float depth widened to double. Non-finite depths propagate.
void backproject_row(const float* depth, int width, double v,
                     double fx, double fy, double cx, double cy,
                     double* xs, double* ys, double* zs);

// Column-batched affine layer: out[j,p] = b[j] + sum_k w[j,k]*in[k,p],
// optionally followed by tanh. Layout: row-major [dim][n] activations.
void affine_forward(const double* w, const double* b, int out_dim, int in_dim,
                    const double* in, double* out, size_t n, bool tanh_act);

// Backward data pass of the same layer: dx[k,p] = sum_j w[j,k]*dy[j,p].
void affine_backward_data(const double* w, int out_dim, int in_dim,
                          const double* dy, double* dx, size_t n);

// da[i] = dy[i] * (1 - y[i]^2), elementwise over m values.
void tanh_backward(const double* y, const double* dy, double* da, size_t m);

// feat[j] = max over p of in[j,p]; arg[j] = first index attaining it.
// n must be >= 1.
void colwise_max(const double* in, int dim, size_t n, double* feat, uint32_t* arg);

namespace detail {
// raw tables, one entry per kernel, filled by each backend TU
struct Ops {
  void (*transform_points)(const double*, const double*, const double*, const double*,
                           const double*, double*, double*, double*, size_t);
  void (*backproject_row)(const float*, int, double, double, double, double, double,
                          double*, double*, double*);
  void (*affine_forward)(const double*, const double*, int, int, const double*, double*,
                         size_t, bool);
  void (*affine_backward_data)(const double*, int, int, const double*, double*, size_t);
  void (*tanh_backward)(const double*, const double*, double*, size_t);
  void (*colwise_max)(const double*, int, size_t, double*, uint32_t*);
};
const Ops& scalar_ops();
const Ops& avx2_ops();  // valid only if backend_supported(Backend::avx2)
}  // namespace detail

}  // namespace ag::kern
