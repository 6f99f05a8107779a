// Scalar reference kernels. The AVX2 variants must match these bit-for-bit;
// keep the per-element operation order in sync with kernels_avx2.cpp.

#include <cmath>

#include "activeglasses/kernels.hpp"

namespace ag::kern::detail {
namespace {

void transform_points_scalar(const double r[9], const double t[3],
                             const double* xs, const double* ys, const double* zs,
                             double* ox, double* oy, double* oz, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const double x = xs[i], y = ys[i], z = zs[i];
    ox[i] = ((r[0] * x + r[1] * y) + r[2] * z) + t[0];
    oy[i] = ((r[3] * x + r[4] * y) + r[5] * z) + t[1];
    oz[i] = ((r[6] * x + r[7] * y) + r[8] * z) + t[2];
  }
}

void backproject_row_scalar(const float* depth, int width, double v,
                            double fx, double fy, double cx, double cy,
                            double* xs, double* ys, double* zs) {
  const double vy = v - cy;
  for (int u = 0; u < width; ++u) {
    const double d = static_cast<double>(depth[u]);
    xs[u] = (static_cast<double>(u) - cx) * d / fx;
    ys[u] = vy * d / fy;
    zs[u] = d;
  }
}

void affine_forward_scalar(const double* w, const double* b, int out_dim, int in_dim,
                           const double* in, double* out, size_t n, bool tanh_act) {
  for (int j = 0; j < out_dim; ++j) {
    const double* wj = w + static_cast<size_t>(j) * in_dim;
    double* oj = out + static_cast<size_t>(j) * n;
    for (size_t p = 0; p < n; ++p) oj[p] = b[j];
    for (int k = 0; k < in_dim; ++k) {
      const double wjk = wj[k];
      const double* ik = in + static_cast<size_t>(k) * n;
      for (size_t p = 0; p < n; ++p) oj[p] = oj[p] + wjk * ik[p];
    }
    if (tanh_act) {
      for (size_t p = 0; p < n; ++p) oj[p] = std::tanh(oj[p]);
    }
  }
}

void affine_backward_data_scalar(const double* w, int out_dim, int in_dim,
                                 const double* dy, double* dx, size_t n) {
  for (int k = 0; k < in_dim; ++k) {
    double* xk = dx + static_cast<size_t>(k) * n;
    for (size_t p = 0; p < n; ++p) xk[p] = 0.0;
    for (int j = 0; j < out_dim; ++j) {
      const double wjk = w[static_cast<size_t>(j) * in_dim + k];
      const double* yj = dy + static_cast<size_t>(j) * n;
      for (size_t p = 0; p < n; ++p) xk[p] = xk[p] + wjk * yj[p];
    }
  }
}

void tanh_backward_scalar(const double* y, const double* dy, double* da, size_t m) {
  for (size_t i = 0; i < m; ++i) da[i] = dy[i] * (1.0 - y[i] * y[i]);
}

void colwise_max_scalar(const double* in, int dim, size_t n, double* feat, uint32_t* arg) {
  for (int j = 0; j < dim; ++j) {
    const double* row = in + static_cast<size_t>(j) * n;
    double best = row[0];
    uint32_t bi = 0;
    for (size_t p = 1; p < n; ++p) {
      if (row[p] > best) {
        best = row[p];
        bi = static_cast<uint32_t>(p);
      }
    }
    feat[j] = best;
    if (arg) arg[j] = bi;
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops{transform_points_scalar, backproject_row_scalar,
                       affine_forward_scalar,   affine_backward_data_scalar,
                       tanh_backward_scalar,    colwise_max_scalar};
  return ops;
}

}  // namespace ag::kern::detail
