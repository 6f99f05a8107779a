#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "activeglasses/kernels.hpp"
#include "activeglasses/rng.hpp"

using namespace ag;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// run f under both backends on the same inputs, return bitwise equality
template <typename F>
bool backends_agree_bitwise(F&& f) {
  if (!kern::backend_supported(kern::Backend::avx2)) return true;  // nothing to compare
  kern::force_backend(kern::Backend::scalar);
  auto a = f();
  kern::force_backend(kern::Backend::avx2);
  auto b = f();
  kern::force_backend(kern::Backend::avx2);
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(a[i])) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("transform_points: scalar and avx2 agree bitwise on odd sizes") {
  Rng rng(31);
  for (size_t n : {size_t{0}, size_t{1}, size_t{3}, size_t{4}, size_t{7}, size_t{1023}}) {
    auto xs = random_vec(rng, n), ys = random_vec(rng, n), zs = random_vec(rng, n);
    auto r = random_vec(rng, 9);
    auto t = random_vec(rng, 3);
    const bool ok = backends_agree_bitwise([&] {
      std::vector<double> out(3 * n);
      kern::transform_points(r.data(), t.data(), xs.data(), ys.data(), zs.data(),
                             out.data(), out.data() + n, out.data() + 2 * n, n);
      return out;
    });
    CHECK(ok);
  }
}

TEST_CASE("transform_points: matches direct R*v+t") {
  Rng rng(32);
  const size_t n = 57;
  auto xs = random_vec(rng, n), ys = random_vec(rng, n), zs = random_vec(rng, n);
  auto r = random_vec(rng, 9);
  auto t = random_vec(rng, 3);
  std::vector<double> ox(n), oy(n), oz(n);
  kern::transform_points(r.data(), t.data(), xs.data(), ys.data(), zs.data(),
                         ox.data(), oy.data(), oz.data(), n);
  for (size_t i = 0; i < n; ++i) {
    CHECK(ox[i] == doctest::Approx(r[0] * xs[i] + r[1] * ys[i] + r[2] * zs[i] + t[0]).epsilon(1e-14));
    CHECK(oy[i] == doctest::Approx(r[3] * xs[i] + r[4] * ys[i] + r[5] * zs[i] + t[1]).epsilon(1e-14));
    CHECK(oz[i] == doctest::Approx(r[6] * xs[i] + r[7] * ys[i] + r[8] * zs[i] + t[2]).epsilon(1e-14));
  }
}

TEST_CASE("backproject_row: backends agree bitwise incl. non-finite depths") {
  Rng rng(33);
  for (int width : {1, 4, 5, 31, 640}) {
    std::vector<float> depth(width);
    for (int i = 0; i < width; ++i) {
      depth[i] = (i % 7 == 3) ? std::numeric_limits<float>::quiet_NaN()
                              : static_cast<float>(rng.uniform(0.1, 5.0));
    }
    const bool ok = backends_agree_bitwise([&] {
      std::vector<double> out(3 * width);
      kern::backproject_row(depth.data(), width, 17.0, 320.0, 321.5, 160.2, 120.7,
                            out.data(), out.data() + width, out.data() + 2 * width);
      return out;
    });
    CHECK(ok);
  }
}

TEST_CASE("affine_forward: backends agree bitwise, values match naive loop") {
  Rng rng(34);
  const int out_dim = 5, in_dim = 7;
  const size_t n = 13;
  auto w = random_vec(rng, out_dim * in_dim);
  auto b = random_vec(rng, out_dim);
  auto in = random_vec(rng, in_dim * n);

  for (bool tanh_act : {false, true}) {
    const bool ok = backends_agree_bitwise([&] {
      std::vector<double> out(out_dim * n);
      kern::affine_forward(w.data(), b.data(), out_dim, in_dim, in.data(), out.data(), n,
                           tanh_act);
      return out;
    });
    CHECK(ok);
  }

  std::vector<double> out(out_dim * n);
  kern::affine_forward(w.data(), b.data(), out_dim, in_dim, in.data(), out.data(), n, false);
  for (int j = 0; j < out_dim; ++j)
    for (size_t p = 0; p < n; ++p) {
      double s = b[j];
      for (int k = 0; k < in_dim; ++k) s += w[j * in_dim + k] * in[k * n + p];
      CHECK(out[j * n + p] == doctest::Approx(s).epsilon(1e-13));
    }
}

TEST_CASE("affine_backward_data and tanh_backward: backends agree bitwise") {
  Rng rng(35);
  const int out_dim = 6, in_dim = 9;
  const size_t n = 11;
  auto w = random_vec(rng, out_dim * in_dim);
  auto dy = random_vec(rng, out_dim * n);
  CHECK(backends_agree_bitwise([&] {
    std::vector<double> dx(in_dim * n);
    kern::affine_backward_data(w.data(), out_dim, in_dim, dy.data(), dx.data(), n);
    return dx;
  }));

  auto y = random_vec(rng, 37, -0.99, 0.99);
  auto g = random_vec(rng, 37);
  CHECK(backends_agree_bitwise([&] {
    std::vector<double> da(37);
    kern::tanh_backward(y.data(), g.data(), da.data(), 37);
    return da;
  }));
}

TEST_CASE("colwise_max: exact max and first-attaining argmax, both backends") {
  Rng rng(36);
  const int dim = 4;
  for (size_t n : {size_t{1}, size_t{2}, size_t{5}, size_t{129}}) {
    auto in = random_vec(rng, dim * n);
    // plant a duplicated max to exercise the first-index rule
    if (n >= 5) {
      in[0 * n + 2] = 7.5;
      in[0 * n + 4] = 7.5;
    }
    std::vector<double> feat_s(dim), feat_v(dim);
    std::vector<uint32_t> arg_s(dim), arg_v(dim);
    kern::force_backend(kern::Backend::scalar);
    kern::colwise_max(in.data(), dim, n, feat_s.data(), arg_s.data());
    if (kern::backend_supported(kern::Backend::avx2)) {
      kern::force_backend(kern::Backend::avx2);
      kern::colwise_max(in.data(), dim, n, feat_v.data(), arg_v.data());
      for (int j = 0; j < dim; ++j) {
        CHECK(feat_s[j] == feat_v[j]);
        CHECK(arg_s[j] == arg_v[j]);
      }
    }
    kern::force_backend(kern::Backend::avx2);
    // reference argmax
    for (int j = 0; j < dim; ++j) {
      double best = in[j * n];
      uint32_t bi = 0;
      for (size_t p = 1; p < n; ++p)
        if (in[j * n + p] > best) {
          best = in[j * n + p];
          bi = static_cast<uint32_t>(p);
        }
      CHECK(feat_s[j] == best);
      CHECK(arg_s[j] == bi);
    }
  }
}

TEST_CASE("runtime dispatch reports a backend") {
  CHECK((kern::backend_name() == "avx2" || kern::backend_name() == "scalar"));
  CHECK(kern::backend_supported(kern::Backend::scalar));
}
