#pragma once

// Independent brute-force references used by the unit and acceptance
// suites. These deliberately avoid the library's implementation paths:
// straight nested loops, no im2col, no incremental tricks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracles {

// Direct 6-nested-loop convolution, NCHW x OIKhKw.
template <typename T>
std::vector<T> conv2d_naive(const std::vector<T>& x, int n, int c, int h, int w,
                            const std::vector<T>& wgt, int oc, int kh, int kw,
                            const std::vector<T>& bias, int stride, int pad,
                            int& out_h, int& out_w) {
  out_h = (h + 2 * pad - kh) / stride + 1;
  out_w = (w + 2 * pad - kw) / stride + 1;
  std::vector<T> y(static_cast<size_t>(n) * oc * out_h * out_w, T(0));
  for (int in = 0; in < n; ++in)
    for (int o = 0; o < oc; ++o)
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          T acc = bias.empty() ? T(0) : bias[o];
          for (int ic = 0; ic < c; ++ic)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                int iy = oy * stride - pad + ky;
                int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x[((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix] *
                       wgt[((static_cast<size_t>(o) * c + ic) * kh + ky) * kw + kx];
              }
          y[((static_cast<size_t>(in) * oc + o) * out_h + oy) * out_w + ox] = acc;
        }
  return y;
}

struct SimpleBox {
  double x1, y1, x2, y2;
};

inline double iou_naive(const SimpleBox& a, const SimpleBox& b) {
  double aw = a.x2 - a.x1, ah = a.y2 - a.y1;
  double bw = b.x2 - b.x1, bh = b.y2 - b.y1;
  if (aw <= 0 || ah <= 0 || bw <= 0 || bh <= 0) return 0.0;
  double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  double inter = ix * iy;
  double uni = aw * ah + bw * bh - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

// Greedy NMS by repeated full scans.
inline std::vector<int> nms_naive(const std::vector<SimpleBox>& boxes,
                                  const std::vector<double>& scores,
                                  double threshold, int max_keep) {
  std::vector<int> kept;
  std::vector<bool> dead(boxes.size(), false);
  while (static_cast<int>(kept.size()) < max_keep) {
    int best = -1;
    for (size_t i = 0; i < boxes.size(); ++i) {
      if (dead[i]) continue;
      if (best < 0 || scores[i] > scores[best]) best = static_cast<int>(i);
    }
    if (best < 0) break;
    kept.push_back(best);
    dead[best] = true;
    for (size_t i = 0; i < boxes.size(); ++i)
      if (!dead[i] && iou_naive(boxes[best], boxes[i]) > threshold) dead[i] = true;
  }
  return kept;
}

// Per-bin max over floor/ceil quantized box edges, one channel plane.
template <typename T>
std::vector<T> roi_pool_naive(const std::vector<T>& plane, int h, int w,
                              double fx1, double fy1, double fx2, double fy2,
                              int out) {
  int x1 = std::clamp(static_cast<int>(std::floor(fx1)), 0, w - 1);
  int y1 = std::clamp(static_cast<int>(std::floor(fy1)), 0, h - 1);
  int x2 = std::clamp(static_cast<int>(std::ceil(fx2)), x1 + 1, w);
  int y2 = std::clamp(static_cast<int>(std::ceil(fy2)), y1 + 1, h);
  int rh = y2 - y1, rw = x2 - x1;
  std::vector<T> res(static_cast<size_t>(out) * out);
  for (int by = 0; by < out; ++by)
    for (int bx = 0; bx < out; ++bx) {
      int cy1 = y1 + rh * by / out;
      int cy2 = std::min(y2, y1 + std::max(rh * (by + 1) / out, rh * by / out + 1));
      int cx1 = x1 + rw * bx / out;
      int cx2 = std::min(x2, x1 + std::max(rw * (bx + 1) / out, rw * bx / out + 1));
      T best = plane[static_cast<size_t>(cy1) * w + cx1];
      for (int yy = cy1; yy < cy2; ++yy)
        for (int xx = cx1; xx < cx2; ++xx)
          best = std::max(best, plane[static_cast<size_t>(yy) * w + xx]);
      res[static_cast<size_t>(by) * out + bx] = best;
    }
  return res;
}

inline int roi_level_naive(double w, double h, int k0) {
  int k = static_cast<int>(std::floor(k0 + std::log2(std::sqrt(w * h) / 224.0)));
  return std::clamp(k, 2, 5);
}

}  // namespace oracles
