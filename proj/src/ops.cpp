#include "ace/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "ace/errors.hpp"

namespace ace {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_mat(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MatMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstMatMap as_mat(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMatMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw UsageError("operands live on different tapes");
}

void require_same_shape(const char* op, Var a, Var b) {
  require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void accumulate(GradSink& sink, Var v, std::span<const double> g, double factor = 1.0) {
  if (!sink.wants(v)) return;
  auto dst = sink(v);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
}

struct ImageDims {
  std::size_t batch, channels, height, width;
  bool batched;
};

ImageDims image_dims(const char* op, const Shape& s) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw DimensionError(std::string(op) + ": expected [C x H x W] or [B x C x H x W], got " + shape_string(s));
}

Shape image_shape(const ImageDims& d, std::size_t channels) {
  if (d.batched) return {d.batch, channels, d.height, d.width};
  return {channels, d.height, d.width};
}

// Column buffer [C*9 x H*W] for a single image.
void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, double* cols) {
  const std::size_t hw = h * w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = cols + ((ch * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y + ky) - 1;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x + kx) - 1;
            const bool inside = sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w);
            row[y * w + x] = inside ? img[(ch * h + sy) * w + sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t c, std::size_t h, std::size_t w, double* img) {
  const std::size_t hw = h * w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* row = cols + ((ch * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x + kx) - 1;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            img[(ch * h + sy) * w + sx] += row[y * w + x];
          }
        }
      }
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record("add", std::move(out), {a, b}, [a, b](const Tensor& g, GradSink& sink) {
    accumulate(sink, a, g.data());
    accumulate(sink, b, g.data());
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record("sub", std::move(out), {a, b}, [a, b](const Tensor& g, GradSink& sink) {
    accumulate(sink, a, g.data());
    accumulate(sink, b, g.data(), -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record("mul", std::move(out), {a, b}, [a, b](const Tensor& g, GradSink& sink) {
    const auto av = a.value().data();
    const auto bv = b.value().data();
    if (sink.wants(a)) {
      auto ga = sink(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (sink.wants(b)) {
      auto gb = sink(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.tape->record("scale", std::move(out), {a}, [a, factor](const Tensor& g, GradSink& sink) {
    accumulate(sink, a, g.data(), factor);
  });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(sa) + " and " + shape_string(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor out(Shape{m, n});
  as_mat(out.data(), m, n).noalias() = as_mat(a.value().data(), m, k) * as_mat(b.value().data(), k, n);
  return a.tape->record("matmul", std::move(out), {a, b}, [a, b, m, k, n](const Tensor& g, GradSink& sink) {
    const auto gm = as_mat(g.data(), m, n);
    if (sink.wants(a)) {
      as_mat(sink(a), m, k).noalias() += gm * as_mat(b.value().data(), k, n).transpose();
    }
    if (sink.wants(b)) {
      as_mat(sink(b), k, n).noalias() += as_mat(a.value().data(), m, k).transpose() * gm;
    }
  });
}

Var linear(Var x, Var weight, const Var* bias) {
  require_same_tape(x, weight);
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sw.size() != 2 || sx.empty() || sx.size() > 2 || sx.back() != sw[1]) {
    throw DimensionError("linear: input " + shape_string(sx) + " incompatible with weight " + shape_string(sw));
  }
  const std::size_t rows = sx.size() == 2 ? sx[0] : 1;
  const std::size_t in = sw[1], out_dim = sw[0];
  Shape out_shape = sx.size() == 2 ? Shape{rows, out_dim} : Shape{out_dim};
  Tensor out(out_shape);
  auto om = as_mat(out.data(), rows, out_dim);
  om.noalias() = as_mat(x.value().data(), rows, in) * as_mat(weight.value().data(), out_dim, in).transpose();
  Var b;
  if (bias) {
    b = *bias;
    require_same_tape(x, b);
    if (b.shape() != Shape{out_dim}) {
      throw DimensionError("linear: bias " + shape_string(b.shape()) + " expected [" + std::to_string(out_dim) + "]");
    }
    const auto bv = b.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < out_dim; ++j) om(r, j) += bv[j];
    }
  }
  auto backward = [x, weight, b, rows, in, out_dim](const Tensor& g, GradSink& sink) {
    const auto gm = as_mat(g.data(), rows, out_dim);
    if (sink.wants(x)) {
      as_mat(sink(x), rows, in).noalias() += gm * as_mat(weight.value().data(), out_dim, in);
    }
    if (sink.wants(weight)) {
      as_mat(sink(weight), out_dim, in).noalias() += gm.transpose() * as_mat(x.value().data(), rows, in);
    }
    if (b.valid() && sink.wants(b)) {
      auto gb = sink(b);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < out_dim; ++j) gb[j] += gm(r, j);
      }
    }
  };
  if (b.valid()) return x.tape->record("linear", std::move(out), {x, weight, b}, backward);
  return x.tape->record("linear", std::move(out), {x, weight}, backward);
}

Var batched_matvec(Var a, Var x) {
  require_same_tape(a, x);
  const Shape& sa = a.shape();
  const Shape& sx = x.shape();
  if (sa.size() != 3 || sx.size() != 2 || sa[0] != sx[0] || sa[1] != sa[2] || sa[2] != sx[1]) {
    throw DimensionError("batched_matvec: incompatible shapes " + shape_string(sa) + " and " + shape_string(sx));
  }
  const std::size_t batch = sa[0], d = sa[1];
  Tensor out(Shape{batch, d});
  const auto av = a.value().data();
  const auto xv = x.value().data();
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += av[(s * d + i) * d + j] * xv[s * d + j];
      out[s * d + i] = acc;
    }
  }
  return a.tape->record("batched_matvec", std::move(out), {a, x}, [a, x, batch, d](const Tensor& g, GradSink& sink) {
    const auto av = a.value().data();
    const auto xv = x.value().data();
    if (sink.wants(a)) {
      auto ga = sink(a);
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t i = 0; i < d; ++i) {
          for (std::size_t j = 0; j < d; ++j) ga[(s * d + i) * d + j] += g[s * d + i] * xv[s * d + j];
        }
      }
    }
    if (sink.wants(x)) {
      auto gx = sink(x);
      for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t i = 0; i < d; ++i) {
          for (std::size_t j = 0; j < d; ++j) gx[s * d + j] += g[s * d + i] * av[(s * d + i) * d + j];
        }
      }
    }
  });
}

Var softmax_rows(Var x) {
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("softmax_rows: scalar input");
  const std::size_t n = s.back();
  const std::size_t rows = x.size() / n;
  const auto xv = x.value().data();
  for (double v : xv) {
    if (std::isnan(v)) throw NumericError("softmax_rows: NaN input");
  }
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data().data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  auto saved = std::make_shared<std::vector<double>>(out.values());
  return x.tape->record("softmax_rows", std::move(out), {x}, [x, saved, rows, n](const Tensor& g, GradSink& sink) {
    if (!sink.wants(x)) return;
    const auto& yv = *saved;
    auto gx = sink(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * yv[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yv[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

Var pointwise(Pointwise kind, Var x) {
  Tensor out = x.value();
  switch (kind) {
    case Pointwise::sigmoid:
      for (auto& v : out.data()) v = stable_sigmoid(v);
      break;
    case Pointwise::tanh:
      for (auto& v : out.data()) v = std::tanh(v);
      break;
    case Pointwise::relu:
      for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
      break;
  }
  const char* name = kind == Pointwise::sigmoid ? "sigmoid" : kind == Pointwise::tanh ? "tanh" : "relu";
  // Keep the activation's output next to the closure; derivatives are written in terms of it.
  auto saved = std::make_shared<std::vector<double>>(out.values());
  return x.tape->record(name, std::move(out), {x}, [x, kind, saved](const Tensor& g, GradSink& sink) {
    if (!sink.wants(x)) return;
    auto gx = sink(x);
    const auto& y = *saved;
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (kind) {
        case Pointwise::sigmoid: gx[i] += g[i] * y[i] * (1.0 - y[i]); break;
        case Pointwise::tanh: gx[i] += g[i] * (1.0 - y[i] * y[i]); break;
        case Pointwise::relu: gx[i] += y[i] > 0.0 ? g[i] : 0.0; break;
      }
    }
  });
}

Var conv2d(Var x, Var weight) {
  require_same_tape(x, weight);
  const ImageDims d = image_dims("conv2d", x.shape());
  const Shape& sw = weight.shape();
  if (sw.size() != 4 || sw[2] != 3 || sw[3] != 3) {
    throw DimensionError("conv2d: weight must be [O x C x 3 x 3], got " + shape_string(sw));
  }
  if (sw[1] != d.channels) {
    throw DimensionError("conv2d: input " + shape_string(x.shape()) + " has " + std::to_string(d.channels) +
                         " channels but weight " + shape_string(sw) + " expects " + std::to_string(sw[1]));
  }
  const std::size_t out_c = sw[0], ck = d.channels * 9, hw = d.height * d.width;
  Tensor out(image_shape(d, out_c));
  std::vector<double> cols(ck * hw);
  const auto wm = as_mat(weight.value().data(), out_c, ck);
  const auto xv = x.value().data();
  for (std::size_t b = 0; b < d.batch; ++b) {
    im2col(xv.data() + b * d.channels * hw, d.channels, d.height, d.width, cols.data());
    as_mat(out.data().subspan(b * out_c * hw, out_c * hw), out_c, hw).noalias() =
        wm * as_mat(std::span<const double>(cols), ck, hw);
  }
  return x.tape->record("conv2d", std::move(out), {x, weight}, [x, weight, d, out_c, ck, hw](const Tensor& g, GradSink& sink) {
    const bool want_x = sink.wants(x), want_w = sink.wants(weight);
    std::vector<double> cols(ck * hw);
    std::vector<double> gcols(want_x ? ck * hw : 0);
    const auto wm = as_mat(weight.value().data(), out_c, ck);
    const auto xv = x.value().data();
    std::span<double> gx = want_x ? sink(x) : std::span<double>();
    std::span<double> gw = want_w ? sink(weight) : std::span<double>();
    for (std::size_t b = 0; b < d.batch; ++b) {
      const auto gm = as_mat(g.data().subspan(b * out_c * hw, out_c * hw), out_c, hw);
      if (want_w) {
        im2col(xv.data() + b * d.channels * hw, d.channels, d.height, d.width, cols.data());
        as_mat(gw, out_c, ck).noalias() += gm * as_mat(std::span<const double>(cols), ck, hw).transpose();
      }
      if (want_x) {
        as_mat(std::span<double>(gcols), ck, hw).noalias() = wm.transpose() * gm;
        col2im_add(gcols.data(), d.channels, d.height, d.width, gx.data() + b * d.channels * hw);
      }
    }
  });
}

Var group_norm(Var x, Var gamma, Var beta, std::size_t groups, double eps) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const Shape& s = x.shape();
  std::size_t batch, channels, spatial;
  if (s.size() == 3) {
    batch = 1, channels = s[0], spatial = s[1] * s[2];
  } else if (s.size() == 4) {
    batch = s[0], channels = s[1], spatial = s[2] * s[3];
  } else if (s.size() == 2) {
    batch = s[0], channels = s[1], spatial = 1;
  } else {
    throw DimensionError("group_norm: unsupported shape " + shape_string(s));
  }
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(channels) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw DimensionError("group_norm: affine parameters must be [" + std::to_string(channels) + "]");
  }
  const std::size_t per_group = channels / groups;
  const std::size_t group_len = per_group * spatial;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(batch * groups);
  const auto xv = x.value().data();
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  Tensor out(s);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t grp = 0; grp < groups; ++grp) {
      const std::size_t base = (b * channels + grp * per_group) * spatial;
      double mu = 0.0;
      for (std::size_t i = 0; i < group_len; ++i) mu += xv[base + i];
      mu /= static_cast<double>(group_len);
      double var = 0.0;
      for (std::size_t i = 0; i < group_len; ++i) {
        const double c = xv[base + i] - mu;
        var += c * c;
      }
      var /= static_cast<double>(group_len);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[b * groups + grp] = is;
      for (std::size_t i = 0; i < group_len; ++i) {
        const std::size_t ch = grp * per_group + i / spatial;
        const double xh = (xv[base + i] - mu) * is;
        (*xhat)[base + i] = xh;
        out[base + i] = gv[ch] * xh + bv[ch];
      }
    }
  }
  return x.tape->record("group_norm", std::move(out), {x, gamma, beta},
                        [x, gamma, beta, xhat, inv_std, batch, channels, spatial, groups, per_group,
                         group_len](const Tensor& g, GradSink& sink) {
    const auto gv = gamma.value().data();
    const bool want_x = sink.wants(x);
    std::span<double> gx = want_x ? sink(x) : std::span<double>();
    std::span<double> gg = sink.wants(gamma) ? sink(gamma) : std::span<double>();
    std::span<double> gb = sink.wants(beta) ? sink(beta) : std::span<double>();
    const auto& xh = *xhat;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t grp = 0; grp < groups; ++grp) {
        const std::size_t base = (b * channels + grp * per_group) * spatial;
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t i = 0; i < group_len; ++i) {
          const std::size_t ch = grp * per_group + i / spatial;
          const double dxh = g[base + i] * gv[ch];
          mean_d += dxh;
          mean_dx += dxh * xh[base + i];
          if (!gg.empty()) gg[ch] += g[base + i] * xh[base + i];
          if (!gb.empty()) gb[ch] += g[base + i];
        }
        if (!want_x) continue;
        mean_d /= static_cast<double>(group_len);
        mean_dx /= static_cast<double>(group_len);
        const double is = (*inv_std)[b * groups + grp];
        for (std::size_t i = 0; i < group_len; ++i) {
          const std::size_t ch = grp * per_group + i / spatial;
          const double dxh = g[base + i] * gv[ch];
          gx[base + i] += is * (dxh - mean_d - xh[base + i] * mean_dx);
        }
      }
    }
  });
}

Var avg_pool2(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] % 2 || s[3] % 2) {
    throw DimensionError("avg_pool2: expected [B x C x H x W] with even H, W; got " + shape_string(s));
  }
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  Tensor out(Shape{s[0], s[1], oh, ow});
  const auto xv = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t c = 0; c < ow; ++c) {
        const double* r0 = xv.data() + (p * h + 2 * y) * w + 2 * c;
        out[(p * oh + y) * ow + c] = 0.25 * (r0[0] + r0[1] + r0[w] + r0[w + 1]);
      }
    }
  }
  return x.tape->record("avg_pool2", std::move(out), {x}, [x, planes, h, w, oh, ow](const Tensor& g, GradSink& sink) {
    if (!sink.wants(x)) return;
    auto gx = sink(x);
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t c = 0; c < ow; ++c) {
          const double v = 0.25 * g[(p * oh + y) * ow + c];
          double* r0 = gx.data() + (p * h + 2 * y) * w + 2 * c;
          r0[0] += v, r0[1] += v, r0[w] += v, r0[w + 1] += v;
        }
      }
    }
  });
}

Var append_time_channel(Var x, double t) {
  const ImageDims d = image_dims("append_time_channel", x.shape());
  const std::size_t hw = d.height * d.width, block = d.channels * hw;
  Tensor out(image_shape(d, d.channels + 1), t);
  const auto xv = x.value().data();
  for (std::size_t b = 0; b < d.batch; ++b) {
    std::copy_n(xv.data() + b * block, block, out.data().data() + b * (block + hw));
  }
  return x.tape->record("append_time_channel", std::move(out), {x}, [x, d, hw, block](const Tensor& g, GradSink& sink) {
    if (!sink.wants(x)) return;
    auto gx = sink(x);
    for (std::size_t b = 0; b < d.batch; ++b) {
      for (std::size_t i = 0; i < block; ++i) gx[b * block + i] += g[b * (block + hw) + i];
    }
  });
}

Var append_time_column(Var x, double t) {
  const Shape& s = x.shape();
  if (s.empty() || s.size() > 2) throw DimensionError("append_time_column: expected [d] or [B x d], got " + shape_string(s));
  const std::size_t rows = s.size() == 2 ? s[0] : 1, d = s.back();
  Shape out_shape = s.size() == 2 ? Shape{rows, d + 1} : Shape{d + 1};
  Tensor out(out_shape, t);
  const auto xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * d, d, out.data().data() + r * (d + 1));
  return x.tape->record("append_time_column", std::move(out), {x}, [x, rows, d](const Tensor& g, GradSink& sink) {
    if (!sink.wants(x)) return;
    auto gx = sink(x);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[r * (d + 1) + j];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape->record("reshape", std::move(out), {x}, [x](const Tensor& g, GradSink& sink) {
    accumulate(sink, x, g.data());
  });
}

Var slice(Var x, std::size_t offset, Shape shape) {
  const std::size_t n = shape_size(shape);
  if (offset + n > x.size()) {
    throw DimensionError("slice [" + std::to_string(offset) + ", " + std::to_string(offset + n) +
                         ") out of range for " + shape_string(x.shape()));
  }
  const auto xv = x.value().data();
  Tensor out(std::move(shape), std::vector<double>(xv.begin() + offset, xv.begin() + offset + n));
  return x.tape->record("slice", std::move(out), {x}, [x, offset](const Tensor& g, GradSink& sink) {
    if (!sink.wants(x)) return;
    auto gx = sink(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat of zero tensors");
  Tape* tape = parts.front().tape;
  std::vector<double> data;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  const std::size_t n = data.size();
  Tensor out(Shape{n}, std::move(data));
  std::vector<Var> inputs(parts.begin(), parts.end());
  auto backward = [inputs](const Tensor& g, GradSink& sink) {
    std::size_t off = 0;
    for (const Var& p : inputs) {
      const std::size_t len = p.size();
      if (sink.wants(p)) {
        auto gp = sink(p);
        for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
      }
      off += len;
    }
  };
  return tape->record("concat", std::move(out), parts, backward);
}

Var take_columns(Var x, std::size_t start, std::size_t count) {
  const Shape& s = x.shape();
  if (s.size() != 2 || start + count > s[1] || count == 0) {
    throw DimensionError("take_columns [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") invalid for " + shape_string(s));
  }
  const std::size_t rows = s[0], cols = s[1];
  Tensor out(Shape{rows, count});
  const auto xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < count; ++j) out[r * count + j] = xv[r * cols + start + j];
  }
  return x.tape->record("take_columns", std::move(out), {x}, [x, rows, cols, start, count](const Tensor& g, GradSink& sink) {
    if (!sink.wants(x)) return;
    auto gx = sink(x);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < count; ++j) gx[r * cols + start + j] += g[r * count + j];
    }
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape->record("sum", Tensor::scalar(total), {x}, [x](const Tensor& g, GradSink& sink) {
    if (!sink.wants(x)) return;
    for (auto& v : sink(x)) v += g[0];
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var abs_sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += std::abs(v);
  return x.tape->record("abs_sum", Tensor::scalar(total), {x}, [x](const Tensor& g, GradSink& sink) {
    if (!sink.wants(x)) return;
    const auto xv = x.value().data();
    auto gx = sink(x);
    // Subgradient 0 at 0.
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * (xv[i] > 0.0 ? 1.0 : xv[i] < 0.0 ? -1.0 : 0.0);
  });
}

Var square_sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v * v;
  return x.tape->record("square_sum", Tensor::scalar(total), {x}, [x](const Tensor& g, GradSink& sink) {
    if (!sink.wants(x)) return;
    const auto xv = x.value().data();
    auto gx = sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * g[0] * xv[i];
  });
}

Var mse_loss(Var prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse_loss: prediction " + shape_string(prediction.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  const auto pv = prediction.value().data();
  const double n = static_cast<double>(pv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double e = pv[i] - target[i];
    total += e * e;
  }
  auto saved = std::make_shared<Tensor>(target);
  return prediction.tape->record("mse_loss", Tensor::scalar(total / n), {prediction},
                                 [prediction, saved, n](const Tensor& g, GradSink& sink) {
    if (!sink.wants(prediction)) return;
    const auto pv = prediction.value().data();
    auto gp = sink(prediction);
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[0] * 2.0 * (pv[i] - (*saved)[i]) / n;
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_string(s) + " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = s[0], k = s[1];
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw DataError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto zv = logits.value().data();
  auto probs = std::make_shared<std::vector<double>>(zv.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = zv.data() + r * k;
    const double mx = *std::max_element(z, z + k);
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += std::exp(z[j] - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(z[j] - lse);
    total += lse - z[labels[r]];
  }
  std::vector<int> saved_labels(labels.begin(), labels.end());
  return logits.tape->record("cross_entropy", Tensor::scalar(total / static_cast<double>(rows)), {logits},
                             [logits, probs, saved_labels, rows, k](const Tensor& g, GradSink& sink) {
    if (!sink.wants(logits)) return;
    auto gz = sink(logits);
    const double f = g[0] / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        const double onehot = static_cast<int>(j) == saved_labels[r] ? 1.0 : 0.0;
        gz[r * k + j] += f * ((*probs)[r * k + j] - onehot);
      }
    }
  });
}

}  // namespace ace
