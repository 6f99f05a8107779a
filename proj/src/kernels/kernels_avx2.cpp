// AVX2 kernel variants. Vectorization runs across the point/pixel axis with
// the same per-element operation order as the scalar reference (mul/add, no
// FMA), so results are bit-identical to kernels_scalar.cpp.

#include <immintrin.h>

#include <cmath>

#include "activeglasses/kernels.hpp"

namespace ag::kern::detail {
namespace {

void transform_points_avx2(const double r[9], const double t[3],
                           const double* xs, const double* ys, const double* zs,
                           double* ox, double* oy, double* oz, size_t n) {
  const __m256d r0 = _mm256_set1_pd(r[0]), r1 = _mm256_set1_pd(r[1]), r2 = _mm256_set1_pd(r[2]);
  const __m256d r3 = _mm256_set1_pd(r[3]), r4 = _mm256_set1_pd(r[4]), r5 = _mm256_set1_pd(r[5]);
  const __m256d r6 = _mm256_set1_pd(r[6]), r7 = _mm256_set1_pd(r[7]), r8 = _mm256_set1_pd(r[8]);
  const __m256d t0 = _mm256_set1_pd(t[0]), t1 = _mm256_set1_pd(t[1]), t2 = _mm256_set1_pd(t[2]);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_loadu_pd(xs + i);
    const __m256d y = _mm256_loadu_pd(ys + i);
    const __m256d z = _mm256_loadu_pd(zs + i);
    __m256d ax = _mm256_add_pd(_mm256_mul_pd(r0, x), _mm256_mul_pd(r1, y));
    ax = _mm256_add_pd(_mm256_add_pd(ax, _mm256_mul_pd(r2, z)), t0);
    __m256d ay = _mm256_add_pd(_mm256_mul_pd(r3, x), _mm256_mul_pd(r4, y));
    ay = _mm256_add_pd(_mm256_add_pd(ay, _mm256_mul_pd(r5, z)), t1);
    __m256d az = _mm256_add_pd(_mm256_mul_pd(r6, x), _mm256_mul_pd(r7, y));
    az = _mm256_add_pd(_mm256_add_pd(az, _mm256_mul_pd(r8, z)), t2);
    _mm256_storeu_pd(ox + i, ax);
    _mm256_storeu_pd(oy + i, ay);
    _mm256_storeu_pd(oz + i, az);
  }
  for (; i < n; ++i) {
    const double x = xs[i], y = ys[i], z = zs[i];
    ox[i] = ((r[0] * x + r[1] * y) + r[2] * z) + t[0];
    oy[i] = ((r[3] * x + r[4] * y) + r[5] * z) + t[1];
    oz[i] = ((r[6] * x + r[7] * y) + r[8] * z) + t[2];
  }
}

void backproject_row_avx2(const float* depth, int width, double v,
                          double fx, double fy, double cx, double cy,
                          double* xs, double* ys, double* zs) {
  const double vy = v - cy;
  const __m256d vfx = _mm256_set1_pd(fx), vfy = _mm256_set1_pd(fy);
  const __m256d vcx = _mm256_set1_pd(cx), vvy = _mm256_set1_pd(vy);
  const __m256d ramp = _mm256_set_pd(3.0, 2.0, 1.0, 0.0);
  int u = 0;
  for (; u + 4 <= width; u += 4) {
    const __m256d d = _mm256_cvtps_pd(_mm_loadu_ps(depth + u));
    const __m256d uu = _mm256_add_pd(_mm256_set1_pd(static_cast<double>(u)), ramp);
    _mm256_storeu_pd(xs + u, _mm256_div_pd(_mm256_mul_pd(_mm256_sub_pd(uu, vcx), d), vfx));
    _mm256_storeu_pd(ys + u, _mm256_div_pd(_mm256_mul_pd(vvy, d), vfy));
    _mm256_storeu_pd(zs + u, d);
  }
  for (; u < width; ++u) {
    const double d = static_cast<double>(depth[u]);
    xs[u] = (static_cast<double>(u) - cx) * d / fx;
    ys[u] = vy * d / fy;
    zs[u] = d;
  }
}

void affine_forward_avx2(const double* w, const double* b, int out_dim, int in_dim,
                         const double* in, double* out, size_t n, bool tanh_act) {
  for (int j = 0; j < out_dim; ++j) {
    const double* wj = w + static_cast<size_t>(j) * in_dim;
    double* oj = out + static_cast<size_t>(j) * n;
    const __m256d bj = _mm256_set1_pd(b[j]);
    size_t p = 0;
    for (; p + 4 <= n; p += 4) _mm256_storeu_pd(oj + p, bj);
    for (; p < n; ++p) oj[p] = b[j];
    for (int k = 0; k < in_dim; ++k) {
      const double wjk = wj[k];
      const __m256d vw = _mm256_set1_pd(wjk);
      const double* ik = in + static_cast<size_t>(k) * n;
      p = 0;
      for (; p + 4 <= n; p += 4) {
        const __m256d acc = _mm256_loadu_pd(oj + p);
        _mm256_storeu_pd(oj + p, _mm256_add_pd(acc, _mm256_mul_pd(vw, _mm256_loadu_pd(ik + p))));
      }
      for (; p < n; ++p) oj[p] = oj[p] + wjk * ik[p];
    }
    if (tanh_act) {
      for (p = 0; p < n; ++p) oj[p] = std::tanh(oj[p]);
    }
  }
}

void affine_backward_data_avx2(const double* w, int out_dim, int in_dim,
                               const double* dy, double* dx, size_t n) {
  for (int k = 0; k < in_dim; ++k) {
    double* xk = dx + static_cast<size_t>(k) * n;
    const __m256d zero = _mm256_setzero_pd();
    size_t p = 0;
    for (; p + 4 <= n; p += 4) _mm256_storeu_pd(xk + p, zero);
    for (; p < n; ++p) xk[p] = 0.0;
    for (int j = 0; j < out_dim; ++j) {
      const double wjk = w[static_cast<size_t>(j) * in_dim + k];
      const __m256d vw = _mm256_set1_pd(wjk);
      const double* yj = dy + static_cast<size_t>(j) * n;
      p = 0;
      for (; p + 4 <= n; p += 4) {
        const __m256d acc = _mm256_loadu_pd(xk + p);
        _mm256_storeu_pd(xk + p, _mm256_add_pd(acc, _mm256_mul_pd(vw, _mm256_loadu_pd(yj + p))));
      }
      for (; p < n; ++p) xk[p] = xk[p] + wjk * yj[p];
    }
  }
}

void tanh_backward_avx2(const double* y, const double* dy, double* da, size_t m) {
  const __m256d one = _mm256_set1_pd(1.0);
  size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const __m256d yv = _mm256_loadu_pd(y + i);
    const __m256d g = _mm256_sub_pd(one, _mm256_mul_pd(yv, yv));
    _mm256_storeu_pd(da + i, _mm256_mul_pd(_mm256_loadu_pd(dy + i), g));
  }
  for (; i < m; ++i) da[i] = dy[i] * (1.0 - y[i] * y[i]);
}

void colwise_max_avx2(const double* in, int dim, size_t n, double* feat, uint32_t* arg) {
  for (int j = 0; j < dim; ++j) {
    const double* row = in + static_cast<size_t>(j) * n;
    double best;
    if (n >= 4) {
      __m256d vb = _mm256_loadu_pd(row);
      size_t p = 4;
      for (; p + 4 <= n; p += 4) vb = _mm256_max_pd(vb, _mm256_loadu_pd(row + p));
      alignas(32) double lanes[4];
      _mm256_store_pd(lanes, vb);
      best = lanes[0];
      if (lanes[1] > best) best = lanes[1];
      if (lanes[2] > best) best = lanes[2];
      if (lanes[3] > best) best = lanes[3];
      for (; p < n; ++p)
        if (row[p] > best) best = row[p];
    } else {
      best = row[0];
      for (size_t p = 1; p < n; ++p)
        if (row[p] > best) best = row[p];
    }
    feat[j] = best;
    if (arg) {
      uint32_t bi = 0;
      for (size_t p = 0; p < n; ++p) {
        if (row[p] == best) {
          bi = static_cast<uint32_t>(p);
          break;
        }
      }
      arg[j] = bi;
    }
  }
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops ops{transform_points_avx2, backproject_row_avx2,
                       affine_forward_avx2,   affine_backward_data_avx2,
                       tanh_backward_avx2,    colwise_max_avx2};
  return ops;
}

}  // namespace ag::kern::detail
