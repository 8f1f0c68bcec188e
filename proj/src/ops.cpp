#include "fpn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <utility>

namespace fpn {

namespace {

template <typename Dtype>
using RowMat = Eigen::Matrix<Dtype, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Dtype>
using MatMap = Eigen::Map<RowMat<Dtype>>;
template <typename Dtype>
using ConstMatMap = Eigen::Map<const RowMat<Dtype>>;

template <typename Dtype>
void im2col(const Dtype* img, int channels, int height, int width, int kh,
            int kw, int stride, int padding, int out_h, int out_w, Dtype* col) {
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        Dtype* row = col + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) *
                               out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, Dtype(0));
            row += out_w;
            continue;
          }
          const Dtype* src = img + (static_cast<int64_t>(c) * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            int ix = ox * stride - padding + kx;
            *row++ = (ix >= 0 && ix < width) ? src[ix] : Dtype(0);
          }
        }
      }
    }
  }
}

template <typename Dtype>
void col2im_accumulate(const Dtype* col, int channels, int height, int width,
                       int kh, int kw, int stride, int padding, int out_h,
                       int out_w, Dtype* img) {
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const Dtype* row = col + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) *
                                     out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy, row += out_w) {
          int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= height) continue;
          Dtype* dst = img + (static_cast<int64_t>(c) * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            int ix = ox * stride - padding + kx;
            if (ix >= 0 && ix < width) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Dtype>
Tensor<Dtype> conv2d(const Tensor<Dtype>& input, const Tensor<Dtype>& weight,
                     const Tensor<Dtype>& bias, int stride, int padding) {
  FPN_CHECK(input.shape().size() == 4, "conv2d input must be NCHW, got ",
            shape_str(input.shape()));
  FPN_CHECK(weight.shape().size() == 4, "conv2d weight must be OIKhKw, got ",
            shape_str(weight.shape()));
  FPN_CHECK(stride >= 1 && padding >= 0, "bad stride/padding ", stride, "/", padding);
  const int n = input.shape()[0], in_c = input.shape()[1];
  const int h = input.shape()[2], w = input.shape()[3];
  const int out_c = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
  FPN_CHECK(weight.shape()[1] == in_c, "conv2d channel mismatch: input ",
            shape_str(input.shape()), " vs weight ", shape_str(weight.shape()));
  if (bias.defined())
    FPN_CHECK(bias.shape() == Shape{out_c}, "conv2d bias shape ",
              shape_str(bias.shape()), " does not match ", out_c, " outputs");
  const int out_h = (h + 2 * padding - kh) / stride + 1;
  const int out_w = (w + 2 * padding - kw) / stride + 1;
  FPN_CHECK(h + 2 * padding >= kh && w + 2 * padding >= kw,
            "kernel ", kh, "x", kw, " does not fit padded input ",
            shape_str(input.shape()), " with padding ", padding);

  const int64_t col_rows = static_cast<int64_t>(in_c) * kh * kw;
  const int64_t col_cols = static_cast<int64_t>(out_h) * out_w;

  std::vector<std::shared_ptr<TensorNode<Dtype>>> parents{input.node(),
                                                          weight.node()};
  if (bias.defined()) parents.push_back(bias.node());

  auto x_node = input.node();
  auto w_node = weight.node();
  auto b_node = bias.defined() ? bias.node() : nullptr;

  auto backward = [=](TensorNode<Dtype>& out) {
    std::vector<Dtype> col(col_rows * col_cols);
    std::vector<Dtype> gcol(col_rows * col_cols);
    ConstMatMap<Dtype> wm(w_node->data.data(), out_c, col_rows);
    for (int i = 0; i < n; ++i) {
      const Dtype* x = x_node->data.data() + static_cast<int64_t>(i) * in_c * h * w;
      const Dtype* go = out.grad.data() + static_cast<int64_t>(i) * out_c * col_cols;
      ConstMatMap<Dtype> gom(go, out_c, col_cols);
      im2col(x, in_c, h, w, kh, kw, stride, padding, out_h, out_w, col.data());
      ConstMatMap<Dtype> colm(col.data(), col_rows, col_cols);
      if (!w_node->grad.empty()) {
        MatMap<Dtype> gwm(w_node->grad.data(), out_c, col_rows);
        gwm.noalias() += gom * colm.transpose();
      }
      if (!x_node->grad.empty()) {
        MatMap<Dtype> gcolm(gcol.data(), col_rows, col_cols);
        gcolm.noalias() = wm.transpose() * gom;
        col2im_accumulate(gcol.data(), in_c, h, w, kh, kw, stride, padding,
                          out_h, out_w,
                          x_node->grad.data() + static_cast<int64_t>(i) * in_c * h * w);
      }
      if (b_node && !b_node->grad.empty()) {
        for (int oc = 0; oc < out_c; ++oc)
          b_node->grad[oc] += gom.row(oc).sum();
      }
    }
  };

  auto out = make_op_result<Dtype>({n, out_c, out_h, out_w}, std::move(parents),
                                   backward);
  std::vector<Dtype> col(col_rows * col_cols);
  ConstMatMap<Dtype> wm(weight.data().data(), out_c, col_rows);
  for (int i = 0; i < n; ++i) {
    const Dtype* x = input.data().data() + static_cast<int64_t>(i) * in_c * h * w;
    im2col(x, in_c, h, w, kh, kw, stride, padding, out_h, out_w, col.data());
    ConstMatMap<Dtype> colm(col.data(), col_rows, col_cols);
    MatMap<Dtype> om(out.data().data() + static_cast<int64_t>(i) * out_c * col_cols,
                     out_c, col_cols);
    om.noalias() = wm * colm;
    if (bias.defined()) {
      for (int oc = 0; oc < out_c; ++oc)
        om.row(oc).array() += bias.data()[oc];
    }
  }
  return out;
}

template <typename Dtype>
Tensor<Dtype> nearest_upsample2x(const Tensor<Dtype>& input) {
  FPN_CHECK(input.shape().size() == 4, "nearest_upsample2x expects NCHW");
  const int n = input.shape()[0], c = input.shape()[1];
  const int h = input.shape()[2], w = input.shape()[3];
  auto x_node = input.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
      const Dtype* go = out.grad.data() + p * 4 * h * w;
      Dtype* gx = x_node->grad.data() + p * h * w;
      for (int y = 0; y < 2 * h; ++y)
        for (int x = 0; x < 2 * w; ++x)
          gx[(y / 2) * w + x / 2] += go[y * 2 * w + x];
    }
  };
  auto out = make_op_result<Dtype>({n, c, 2 * h, 2 * w}, {x_node}, backward);
  for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
    const Dtype* src = input.data().data() + p * h * w;
    Dtype* dst = out.data().data() + p * 4 * h * w;
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x)
        dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
  }
  return out;
}

template <typename Dtype>
Tensor<Dtype> max_subsample2x(const Tensor<Dtype>& input) {
  FPN_CHECK(input.shape().size() == 4, "max_subsample2x expects NCHW");
  const int n = input.shape()[0], c = input.shape()[1];
  const int h = input.shape()[2], w = input.shape()[3];
  FPN_CHECK(h % 2 == 0 && w % 2 == 0, "max_subsample2x needs even extents, got ",
            shape_str(input.shape()));
  const int oh = h / 2, ow = w / 2;
  auto argmax = std::make_shared<std::vector<int>>(
      static_cast<size_t>(n) * c * oh * ow);
  auto x_node = input.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
      const Dtype* go = out.grad.data() + p * oh * ow;
      const int* am = argmax->data() + p * oh * ow;
      Dtype* gx = x_node->grad.data() + p * h * w;
      for (int i = 0; i < oh * ow; ++i) gx[am[i]] += go[i];
    }
  };
  auto out = make_op_result<Dtype>({n, c, oh, ow}, {x_node}, backward);
  for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
    const Dtype* src = input.data().data() + p * h * w;
    Dtype* dst = out.data().data() + p * oh * ow;
    int* am = argmax->data() + p * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        int best = (2 * oy) * w + 2 * ox;
        const int cand[4] = {best, best + 1, best + w, best + w + 1};
        for (int k = 1; k < 4; ++k)
          if (src[cand[k]] > src[best]) best = cand[k];
        dst[oy * ow + ox] = src[best];
        am[oy * ow + ox] = best;
      }
    }
  }
  return out;
}

template <typename Dtype>
Tensor<Dtype> add(const Tensor<Dtype>& a, const Tensor<Dtype>& b) {
  FPN_CHECK(a.shape() == b.shape(), "add shape mismatch: ", shape_str(a.shape()),
            " vs ", shape_str(b.shape()));
  auto an = a.node();
  auto bn = b.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    for (size_t i = 0; i < out.grad.size(); ++i) {
      if (!an->grad.empty()) an->grad[i] += out.grad[i];
      if (!bn->grad.empty()) bn->grad[i] += out.grad[i];
    }
  };
  auto out = make_op_result<Dtype>(a.shape(), {an, bn}, backward);
  for (int64_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

template <typename Dtype>
Tensor<Dtype> mul(const Tensor<Dtype>& a, const Tensor<Dtype>& b) {
  FPN_CHECK(a.shape() == b.shape(), "mul shape mismatch: ", shape_str(a.shape()),
            " vs ", shape_str(b.shape()));
  auto an = a.node();
  auto bn = b.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    for (size_t i = 0; i < out.grad.size(); ++i) {
      if (!an->grad.empty()) an->grad[i] += out.grad[i] * bn->data[i];
      if (!bn->grad.empty()) bn->grad[i] += out.grad[i] * an->data[i];
    }
  };
  auto out = make_op_result<Dtype>(a.shape(), {an, bn}, backward);
  for (int64_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

template <typename Dtype>
Tensor<Dtype> scale(const Tensor<Dtype>& x, Dtype factor) {
  auto xn = x.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    for (size_t i = 0; i < out.grad.size(); ++i)
      xn->grad[i] += factor * out.grad[i];
  };
  auto out = make_op_result<Dtype>(x.shape(), {xn}, backward);
  for (int64_t i = 0; i < x.numel(); ++i) out.data()[i] = factor * x.data()[i];
  return out;
}

template <typename Dtype>
Tensor<Dtype> relu(const Tensor<Dtype>& x) {
  auto xn = x.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    for (size_t i = 0; i < out.grad.size(); ++i)
      if (xn->data[i] > Dtype(0)) xn->grad[i] += out.grad[i];
  };
  auto out = make_op_result<Dtype>(x.shape(), {xn}, backward);
  for (int64_t i = 0; i < x.numel(); ++i)
    out.data()[i] = std::max(x.data()[i], Dtype(0));
  return out;
}

template <typename Dtype>
Tensor<Dtype> sigmoid(const Tensor<Dtype>& x) {
  auto xn = x.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    for (size_t i = 0; i < out.grad.size(); ++i) {
      Dtype s = out.data[i];
      xn->grad[i] += out.grad[i] * s * (Dtype(1) - s);
    }
  };
  auto out = make_op_result<Dtype>(x.shape(), {xn}, backward);
  for (int64_t i = 0; i < x.numel(); ++i)
    out.data()[i] = Dtype(1) / (Dtype(1) + std::exp(-x.data()[i]));
  return out;
}

template <typename Dtype>
Tensor<Dtype> fully_connected(const Tensor<Dtype>& x, const Tensor<Dtype>& weight,
                              const Tensor<Dtype>& bias) {
  FPN_CHECK(weight.shape().size() == 2, "fc weight must be OxF");
  const int out_f = weight.shape()[0], in_f = weight.shape()[1];
  const int64_t total = x.numel();
  FPN_CHECK(total % in_f == 0, "fc input ", shape_str(x.shape()),
            " not divisible into rows of ", in_f);
  const int rows = static_cast<int>(total / in_f);
  FPN_CHECK(x.shape().size() <= 2 || x.shape()[0] == rows,
            "fc input rows inconsistent with ", shape_str(x.shape()));
  if (bias.defined())
    FPN_CHECK(bias.shape() == Shape{out_f}, "fc bias shape mismatch");

  std::vector<std::shared_ptr<TensorNode<Dtype>>> parents{x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;

  auto backward = [=](TensorNode<Dtype>& out) {
    ConstMatMap<Dtype> gom(out.grad.data(), rows, out_f);
    ConstMatMap<Dtype> xm(xn->data.data(), rows, in_f);
    ConstMatMap<Dtype> wm(wn->data.data(), out_f, in_f);
    if (!xn->grad.empty()) {
      MatMap<Dtype> gxm(xn->grad.data(), rows, in_f);
      gxm.noalias() += gom * wm;
    }
    if (!wn->grad.empty()) {
      MatMap<Dtype> gwm(wn->grad.data(), out_f, in_f);
      gwm.noalias() += gom.transpose() * xm;
    }
    if (bn && !bn->grad.empty()) {
      for (int o = 0; o < out_f; ++o) bn->grad[o] += gom.col(o).sum();
    }
  };
  auto out = make_op_result<Dtype>({rows, out_f}, std::move(parents), backward);
  ConstMatMap<Dtype> xm(x.data().data(), rows, in_f);
  ConstMatMap<Dtype> wm(weight.data().data(), out_f, in_f);
  MatMap<Dtype> om(out.data().data(), rows, out_f);
  om.noalias() = xm * wm.transpose();
  if (bias.defined())
    for (int o = 0; o < out_f; ++o) om.col(o).array() += bias.data()[o];
  return out;
}

template <typename Dtype>
Tensor<Dtype> reshape(const Tensor<Dtype>& x, Shape new_shape) {
  FPN_CHECK(shape_numel(new_shape) == x.numel(), "reshape ",
            shape_str(x.shape()), " to ", shape_str(new_shape),
            " changes element count");
  auto xn = x.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    for (size_t i = 0; i < out.grad.size(); ++i) xn->grad[i] += out.grad[i];
  };
  auto out = make_op_result<Dtype>(std::move(new_shape), {xn}, backward);
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  return out;
}

template <typename Dtype>
Tensor<Dtype> sum(const Tensor<Dtype>& x) {
  auto xn = x.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += out.grad[0];
  };
  auto out = make_op_result<Dtype>({1}, {xn}, backward);
  Dtype acc = 0;
  for (Dtype v : x.data()) acc += v;
  out.data()[0] = acc;
  return out;
}

template <typename Dtype>
Tensor<Dtype> gather(const Tensor<Dtype>& x, std::vector<int64_t> indices) {
  for (int64_t idx : indices)
    FPN_CHECK(idx >= 0 && idx < x.numel(), "gather index ", idx,
              " out of range for ", x.numel(), " elements");
  auto idx = std::make_shared<std::vector<int64_t>>(std::move(indices));
  auto xn = x.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    for (size_t i = 0; i < idx->size(); ++i)
      xn->grad[(*idx)[i]] += out.grad[i];
  };
  auto out = make_op_result<Dtype>({static_cast<int>(idx->size())}, {xn}, backward);
  for (size_t i = 0; i < idx->size(); ++i) out.data()[i] = x.data()[(*idx)[i]];
  return out;
}

template <typename Dtype>
Tensor<Dtype> concat_rows(const std::vector<Tensor<Dtype>>& parts) {
  FPN_CHECK(!parts.empty(), "concat_rows on empty list");
  const int64_t f = parts[0].numel();
  std::vector<std::shared_ptr<TensorNode<Dtype>>> parents;
  for (const auto& p : parts) {
    FPN_CHECK(p.numel() == f, "concat_rows parts differ in size: ", f, " vs ",
              p.numel());
    parents.push_back(p.node());
  }
  auto nodes = std::make_shared<std::vector<std::shared_ptr<TensorNode<Dtype>>>>(
      parents);
  auto backward = [=](TensorNode<Dtype>& out) {
    for (size_t r = 0; r < nodes->size(); ++r) {
      auto& pn = *(*nodes)[r];
      if (pn.grad.empty()) continue;
      const Dtype* go = out.grad.data() + static_cast<int64_t>(r) * f;
      for (int64_t i = 0; i < f; ++i) pn.grad[i] += go[i];
    }
  };
  auto out = make_op_result<Dtype>(
      {static_cast<int>(parts.size()), static_cast<int>(f)}, std::move(parents),
      backward);
  for (size_t r = 0; r < parts.size(); ++r)
    std::copy(parts[r].data().begin(), parts[r].data().end(),
              out.data().begin() + static_cast<int64_t>(r) * f);
  return out;
}

template <typename Dtype>
Tensor<Dtype> concat_flat(const std::vector<Tensor<Dtype>>& parts) {
  FPN_CHECK(!parts.empty(), "concat_flat on empty list");
  int64_t total = 0;
  std::vector<std::shared_ptr<TensorNode<Dtype>>> parents;
  for (const auto& p : parts) {
    total += p.numel();
    parents.push_back(p.node());
  }
  auto nodes = std::make_shared<std::vector<std::shared_ptr<TensorNode<Dtype>>>>(
      parents);
  auto backward = [=](TensorNode<Dtype>& out) {
    int64_t off = 0;
    for (auto& pn : *nodes) {
      const int64_t sz = static_cast<int64_t>(pn->data.size());
      if (!pn->grad.empty())
        for (int64_t i = 0; i < sz; ++i) pn->grad[i] += out.grad[off + i];
      off += sz;
    }
  };
  auto out = make_op_result<Dtype>({static_cast<int>(total)}, std::move(parents),
                                   backward);
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
    off += p.numel();
  }
  return out;
}

template <typename Dtype>
Tensor<Dtype> softmax_cross_entropy(const Tensor<Dtype>& logits,
                                    std::vector<int> labels) {
  FPN_CHECK(logits.shape().size() == 2, "softmax_cross_entropy wants NxK logits");
  const int n = logits.shape()[0], k = logits.shape()[1];
  FPN_CHECK(static_cast<int>(labels.size()) == n, "labels count ", labels.size(),
            " vs ", n, " rows");
  for (int l : labels)
    FPN_CHECK(l >= 0 && l < k, "label ", l, " out of range for ", k, " classes");
  auto lab = std::make_shared<std::vector<int>>(std::move(labels));
  auto probs = std::make_shared<std::vector<Dtype>>(logits.numel());
  auto xn = logits.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    const Dtype g = out.grad[0] / Dtype(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) {
        Dtype p = (*probs)[static_cast<int64_t>(i) * k + j];
        xn->grad[static_cast<int64_t>(i) * k + j] +=
            g * (p - (j == (*lab)[i] ? Dtype(1) : Dtype(0)));
      }
    }
  };
  auto out = make_op_result<Dtype>({1}, {xn}, backward);
  Dtype loss = 0;
  for (int i = 0; i < n; ++i) {
    const Dtype* row = logits.data().data() + static_cast<int64_t>(i) * k;
    Dtype mx = *std::max_element(row, row + k);
    Dtype denom = 0;
    for (int j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    for (int j = 0; j < k; ++j)
      (*probs)[static_cast<int64_t>(i) * k + j] = std::exp(row[j] - mx) / denom;
    loss += -(row[(*lab)[i]] - mx - std::log(denom));
  }
  out.data()[0] = loss / Dtype(n);
  return out;
}

template <typename Dtype>
Tensor<Dtype> binary_cross_entropy(const Tensor<Dtype>& p, const Tensor<Dtype>& y) {
  FPN_CHECK(p.shape() == y.shape(), "binary_cross_entropy shape mismatch");
  const int64_t n = p.numel();
  const Dtype eps = Dtype(1e-12);
  auto pn = p.node();
  auto yn = y.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    const Dtype g = out.grad[0] / Dtype(n);
    for (int64_t i = 0; i < n; ++i) {
      Dtype pv = std::clamp(pn->data[i], eps, Dtype(1) - eps);
      Dtype yv = yn->data[i];
      if (!pn->grad.empty())
        pn->grad[i] += g * ((Dtype(1) - yv) / (Dtype(1) - pv) - yv / pv);
    }
  };
  auto out = make_op_result<Dtype>({1}, {pn, yn}, backward);
  Dtype loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    Dtype pv = std::clamp(p.data()[i], eps, Dtype(1) - eps);
    Dtype yv = y.data()[i];
    loss += -(yv * std::log(pv) + (Dtype(1) - yv) * std::log(Dtype(1) - pv));
  }
  out.data()[0] = loss / Dtype(n);
  return out;
}

template <typename Dtype>
Tensor<Dtype> bce_with_logits(const Tensor<Dtype>& logits,
                              std::vector<Dtype> targets) {
  const int64_t n = logits.numel();
  FPN_CHECK(static_cast<int64_t>(targets.size()) == n, "bce_with_logits targets ",
            targets.size(), " vs ", n, " logits");
  auto tgt = std::make_shared<std::vector<Dtype>>(std::move(targets));
  auto xn = logits.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    const Dtype g = out.grad[0] / Dtype(n);
    for (int64_t i = 0; i < n; ++i) {
      Dtype s = Dtype(1) / (Dtype(1) + std::exp(-xn->data[i]));
      xn->grad[i] += g * (s - (*tgt)[i]);
    }
  };
  auto out = make_op_result<Dtype>({1}, {xn}, backward);
  Dtype loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    Dtype z = logits.data()[i], t = (*tgt)[i];
    loss += std::max(z, Dtype(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  out.data()[0] = loss / Dtype(n);
  return out;
}

template <typename Dtype>
Tensor<Dtype> smooth_l1(const Tensor<Dtype>& pred, const Tensor<Dtype>& target) {
  FPN_CHECK(pred.shape() == target.shape(), "smooth_l1 shape mismatch: ",
            shape_str(pred.shape()), " vs ", shape_str(target.shape()));
  auto pn = pred.node();
  auto tn = target.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    for (size_t i = 0; i < out.grad.size(); ++i) {
      Dtype d = pn->data[i] - tn->data[i];
      Dtype dd = std::abs(d) < Dtype(1) ? d : (d > 0 ? Dtype(1) : Dtype(-1));
      if (!pn->grad.empty()) pn->grad[i] += out.grad[i] * dd;
      if (!tn->grad.empty()) tn->grad[i] -= out.grad[i] * dd;
    }
  };
  auto out = make_op_result<Dtype>(pred.shape(), {pn, tn}, backward);
  for (int64_t i = 0; i < pred.numel(); ++i) {
    Dtype d = pred.data()[i] - target.data()[i];
    out.data()[i] = std::abs(d) < Dtype(1) ? Dtype(0.5) * d * d
                                           : std::abs(d) - Dtype(0.5);
  }
  return out;
}

template <typename Dtype>
Tensor<Dtype> roi_max_pool(const Tensor<Dtype>& features, int batch_index,
                           double fx1, double fy1, double fx2, double fy2,
                           int out_size) {
  FPN_CHECK(features.shape().size() == 4, "roi_max_pool expects NCHW features");
  const int n = features.shape()[0], c = features.shape()[1];
  const int h = features.shape()[2], w = features.shape()[3];
  FPN_CHECK(batch_index >= 0 && batch_index < n, "batch index ", batch_index,
            " out of range");
  // Quantize the box edges onto the feature grid, min one cell each way.
  int x1 = static_cast<int>(std::floor(fx1));
  int y1 = static_cast<int>(std::floor(fy1));
  int x2 = static_cast<int>(std::ceil(fx2));
  int y2 = static_cast<int>(std::ceil(fy2));
  x1 = std::clamp(x1, 0, w - 1);
  y1 = std::clamp(y1, 0, h - 1);
  x2 = std::clamp(x2, x1 + 1, w);
  y2 = std::clamp(y2, y1 + 1, h);
  FPN_CHECK(fx2 > 0 && fy2 > 0 && fx1 < w && fy1 < h,
            "box entirely outside feature map ", shape_str(features.shape()));
  const int rh = y2 - y1, rw = x2 - x1;

  auto argmax = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(c) * out_size * out_size);
  auto xn = features.node();
  auto backward = [=](TensorNode<Dtype>& out) {
    for (size_t i = 0; i < argmax->size(); ++i)
      xn->grad[(*argmax)[i]] += out.grad[i];
  };
  auto out = make_op_result<Dtype>({c, out_size, out_size}, {xn}, backward);
  for (int ch = 0; ch < c; ++ch) {
    const int64_t base = (static_cast<int64_t>(batch_index) * c + ch) * h * w;
    for (int by = 0; by < out_size; ++by) {
      int cy1 = y1 + rh * by / out_size;
      int cy2 = y1 + std::max(rh * (by + 1) / out_size, rh * by / out_size + 1);
      cy2 = std::min(cy2, y2);
      for (int bx = 0; bx < out_size; ++bx) {
        int cx1 = x1 + rw * bx / out_size;
        int cx2 = x1 + std::max(rw * (bx + 1) / out_size, rw * bx / out_size + 1);
        cx2 = std::min(cx2, x2);
        int64_t best = base + static_cast<int64_t>(cy1) * w + cx1;
        for (int yy = cy1; yy < cy2; ++yy)
          for (int xx = cx1; xx < cx2; ++xx) {
            int64_t idx = base + static_cast<int64_t>(yy) * w + xx;
            if (features.data()[idx] > features.data()[best]) best = idx;
          }
        out.data()[(static_cast<int64_t>(ch) * out_size + by) * out_size + bx] =
            features.data()[best];
        (*argmax)[(static_cast<int64_t>(ch) * out_size + by) * out_size + bx] = best;
      }
    }
  }
  return out;
}

#define FPN_INSTANTIATE_OPS(T)                                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                            int, int);                                          \
  template Tensor<T> nearest_upsample2x(const Tensor<T>&);                      \
  template Tensor<T> max_subsample2x(const Tensor<T>&);                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                \
  template Tensor<T> relu(const Tensor<T>&);                                    \
  template Tensor<T> sigmoid(const Tensor<T>&);                                 \
  template Tensor<T> fully_connected(const Tensor<T>&, const Tensor<T>&,        \
                                     const Tensor<T>&);                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                          \
  template Tensor<T> sum(const Tensor<T>&);                                     \
  template Tensor<T> gather(const Tensor<T>&, std::vector<int64_t>);            \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                \
  template Tensor<T> concat_flat(const std::vector<Tensor<T>>&);                \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::vector<int>); \
  template Tensor<T> binary_cross_entropy(const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::vector<T>);         \
  template Tensor<T> smooth_l1(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> roi_max_pool(const Tensor<T>&, int, double, double, double, \
                                  double, int);

FPN_INSTANTIATE_OPS(float)
FPN_INSTANTIATE_OPS(double)

}  // namespace fpn
