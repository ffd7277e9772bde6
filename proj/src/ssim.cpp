#include "inkwell/ssim.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace inkwell {

namespace {

struct PlaneGeometry {
  std::size_t planes = 0, per_image = 0, h = 0, w = 0;
};

PlaneGeometry plane_geometry(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "ssim");
  const Shape& s = a.shape();
  switch (s.size()) {
    case 2: return {1, 1, s[0], s[1]};
    case 3: return {s[0], s[0], s[1], s[2]};
    case 4: return {s[0] * s[1], s[1], s[2], s[3]};
    default: throw ShapeError("ssim: expected an image of rank 2, 3 or 4, got " + to_string(s));
  }
}

// Valid separable correlation of an h x w plane with taps g.
void filter_valid(const double* in, std::size_t h, std::size_t w, const std::vector<double>& g, double* out,
                  std::vector<double>& tmp) {
  const std::size_t k = g.size(), ho = h - k + 1, wo = w - k + 1;
  tmp.assign(h * wo, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < wo; ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < k; ++d) s += g[d] * in[i * w + j + d];
      tmp[i * wo + j] = s;
    }
  for (std::size_t i = 0; i < ho; ++i)
    for (std::size_t j = 0; j < wo; ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < k; ++d) s += g[d] * tmp[(i + d) * wo + j];
      out[i * wo + j] = s;
    }
}

// Adjoint of filter_valid: (ho x wo) -> (h x w).
void filter_adjoint(const double* in, std::size_t h, std::size_t w, const std::vector<double>& g, double* out,
                    std::vector<double>& tmp) {
  const std::size_t k = g.size(), ho = h - k + 1, wo = w - k + 1;
  tmp.assign(h * wo, 0.0);
  for (std::size_t i = 0; i < ho; ++i)
    for (std::size_t j = 0; j < wo; ++j)
      for (std::size_t d = 0; d < k; ++d) tmp[(i + d) * wo + j] += g[d] * in[i * wo + j];
  std::fill(out, out + h * w, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < wo; ++j)
      for (std::size_t d = 0; d < k; ++d) out[i * w + j + d] += g[d] * tmp[i * wo + j];
}

// Local statistics of one plane pair plus the SSIM map.
struct PlaneStats {
  std::vector<double> mx, my, exx, eyy, exy, s;
  double mean = 0.0;
};

PlaneStats plane_stats(const float* a, const float* b, std::size_t h, std::size_t w, const std::vector<double>& g,
                       const SsimParams& p) {
  const std::size_t k = g.size(), n = (h - k + 1) * (w - k + 1);
  std::vector<double> x(a, a + h * w), y(b, b + h * w), xx(h * w), yy(h * w), xy(h * w), tmp;
  for (std::size_t i = 0; i < h * w; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  PlaneStats st;
  for (auto* v : {&st.mx, &st.my, &st.exx, &st.eyy, &st.exy, &st.s}) v->resize(n);
  filter_valid(x.data(), h, w, g, st.mx.data(), tmp);
  filter_valid(y.data(), h, w, g, st.my.data(), tmp);
  filter_valid(xx.data(), h, w, g, st.exx.data(), tmp);
  filter_valid(yy.data(), h, w, g, st.eyy.data(), tmp);
  filter_valid(xy.data(), h, w, g, st.exy.data(), tmp);
  const double c1 = p.c1(), c2 = p.c2();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mx = st.mx[i], my = st.my[i];
    const double sxx = st.exx[i] - mx * mx, syy = st.eyy[i] - my * my, sxy = st.exy[i] - mx * my;
    st.s[i] = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    total += st.s[i];
  }
  st.mean = total / static_cast<double>(n);
  return st;
}

}  // namespace

std::size_t SsimParams::effective_window(std::size_t h, std::size_t w) const {
  if (window == 0) throw std::invalid_argument("ssim window must be positive");
  return std::min({window, h, w});
}

std::vector<double> gaussian_taps(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

std::vector<double> ssim_per_image(const Tensor& a, const Tensor& b, const SsimParams& p) {
  const PlaneGeometry pg = plane_geometry(a, b);
  const auto g = gaussian_taps(p.effective_window(pg.h, pg.w), p.sigma);
  const std::size_t images = pg.planes / pg.per_image;
  std::vector<double> out(images, 0.0);
  for (std::size_t q = 0; q < pg.planes; ++q) {
    const std::size_t off = q * pg.h * pg.w;
    out[q / pg.per_image] += plane_stats(a.data() + off, b.data() + off, pg.h, pg.w, g, p).mean;
  }
  for (auto& v : out) v /= static_cast<double>(pg.per_image);
  return out;
}

double ssim(const Tensor& a, const Tensor& b, const SsimParams& p) {
  const auto per = ssim_per_image(a, b, p);
  double s = 0.0;
  for (double v : per) s += v;
  return s / static_cast<double>(per.size());
}

namespace ops {

Var ssim(Tape& t, Var a, Var b, const SsimParams& p) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  const PlaneGeometry pg = plane_geometry(A, B);
  const auto g = gaussian_taps(p.effective_window(pg.h, pg.w), p.sigma);
  auto stats = std::make_shared<std::vector<PlaneStats>>();
  stats->reserve(pg.planes);
  double total = 0.0;
  for (std::size_t q = 0; q < pg.planes; ++q) {
    const std::size_t off = q * pg.h * pg.w;
    stats->push_back(plane_stats(A.data() + off, B.data() + off, pg.h, pg.w, g, p));
    total += stats->back().mean;
  }
  const float value = static_cast<float>(total / static_cast<double>(pg.planes));
  return t.record("ssim", Tensor::scalar(value), {a, b}, [pg, g, p, stats](const BackwardContext& c) {
    Tensor* ga = c.in_grad[0];
    Tensor* gb = c.in_grad[1];
    const std::size_t h = pg.h, w = pg.w, n = (h - g.size() + 1) * (w - g.size() + 1);
    const double scale = c.grad_out[0] / static_cast<double>(pg.planes * n);
    const double c1 = p.c1(), c2 = p.c2();
    std::vector<double> dmx(n), dmy(n), dxx(n), dyy(n), dxy(n), tmp;
    std::vector<double> amx(h * w), amy(h * w), axx(h * w), ayy(h * w), axy(h * w);
    for (std::size_t q = 0; q < pg.planes; ++q) {
      const PlaneStats& st = (*stats)[q];
      for (std::size_t i = 0; i < n; ++i) {
        const double mx = st.mx[i], my = st.my[i];
        const double sxx = st.exx[i] - mx * mx, syy = st.eyy[i] - my * my, sxy = st.exy[i] - mx * my;
        const double a1 = 2 * mx * my + c1, a2 = 2 * sxy + c2, b1 = mx * mx + my * my + c1, b2 = sxx + syy + c2;
        const double s = st.s[i] * scale;
        dmx[i] = s * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2);
        dmy[i] = s * (2 * mx / a1 - 2 * mx / a2 - 2 * my / b1 + 2 * my / b2);
        dxx[i] = -s / b2;
        dyy[i] = -s / b2;
        dxy[i] = 2 * s / a2;
      }
      filter_adjoint(dxy.data(), h, w, g, axy.data(), tmp);
      const std::size_t off = q * h * w;
      const float* x = c.in[0]->data() + off;
      const float* y = c.in[1]->data() + off;
      if (ga) {
        filter_adjoint(dmx.data(), h, w, g, amx.data(), tmp);
        filter_adjoint(dxx.data(), h, w, g, axx.data(), tmp);
        float* gx = ga->data() + off;
        for (std::size_t i = 0; i < h * w; ++i) gx[i] += static_cast<float>(amx[i] + 2.0 * x[i] * axx[i] + y[i] * axy[i]);
      }
      if (gb) {
        filter_adjoint(dmy.data(), h, w, g, amy.data(), tmp);
        filter_adjoint(dyy.data(), h, w, g, ayy.data(), tmp);
        float* gy = gb->data() + off;
        for (std::size_t i = 0; i < h * w; ++i) gy[i] += static_cast<float>(amy[i] + 2.0 * y[i] * ayy[i] + x[i] * axy[i]);
      }
    }
  });
}

}  // namespace ops

}  // namespace inkwell
