#include "activeglasses/kernels.hpp"

#include <cstdlib>
#include <string>

namespace ag::kern {
namespace {

const detail::Ops* g_ops = nullptr;
Backend g_backend = Backend::scalar;

bool cpu_has_avx2() {
#if defined(AG_KERNELS_HAVE_AVX2)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

void select(Backend b) {
#if defined(AG_KERNELS_HAVE_AVX2)
  if (b == Backend::avx2) {
    g_ops = &detail::avx2_ops();
    g_backend = Backend::avx2;
    return;
  }
#endif
  g_ops = &detail::scalar_ops();
  g_backend = Backend::scalar;
}

void init_once() {
  if (g_ops) return;
  Backend want = cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
  if (const char* env = std::getenv("ACTIVEGLASSES_KERNELS")) {
    const std::string s(env);
    if (s == "scalar") want = Backend::scalar;
    else if (s == "avx2" && cpu_has_avx2()) want = Backend::avx2;
    // "auto" or anything else keeps the detected choice
  }
  select(want);
}

const detail::Ops& ops() {
  init_once();
  return *g_ops;
}

}  // namespace

Backend active_backend() {
  init_once();
  return g_backend;
}

bool backend_supported(Backend b) {
  return b == Backend::scalar || (b == Backend::avx2 && cpu_has_avx2());
}

bool force_backend(Backend b) {
  if (!backend_supported(b)) return false;
  select(b);
  return true;
}

std::string backend_name() {
  return active_backend() == Backend::avx2 ? "avx2" : "scalar";
}

void transform_points(const double r[9], const double t[3],
                      const double* xs, const double* ys, const double* zs,
                      double* ox, double* oy, double* oz, size_t n) {
  ops().transform_points(r, t, xs, ys, zs, ox, oy, oz, n);
}

void backproject_row(const float* depth, int width, double v,
                     double fx, double fy, double cx, double cy,
                     double* xs, double* ys, double* zs) {
  ops().backproject_row(depth, width, v, fx, fy, cx, cy, xs, ys, zs);
}

void affine_forward(const double* w, const double* b, int out_dim, int in_dim,
                    const double* in, double* out, size_t n, bool tanh_act) {
  ops().affine_forward(w, b, out_dim, in_dim, in, out, n, tanh_act);
}

void affine_backward_data(const double* w, int out_dim, int in_dim,
                          const double* dy, double* dx, size_t n) {
  ops().affine_backward_data(w, out_dim, in_dim, dy, dx, n);
}

void tanh_backward(const double* y, const double* dy, double* da, size_t m) {
  ops().tanh_backward(y, dy, da, m);
}

void colwise_max(const double* in, int dim, size_t n, double* feat, uint32_t* arg) {
  ops().colwise_max(in, dim, n, feat, arg);
}

}  // namespace ag::kern
