#include "darqn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace darqn::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

MapC as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return MapC(t.data().data(), static_cast<Eigen::Index>(rows),
              static_cast<Eigen::Index>(cols));
}

MapM as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapM(t.data().data(), static_cast<Eigen::Index>(rows),
              static_cast<Eigen::Index>(cols));
}

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw ContractError("op on an unbound Var");
  return *v.tape();
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

// Pointwise unary op; `deriv(x, y)` returns dy/dx given input x, output y.
template <typename F, typename D>
Var pointwise(const Var& a, F f, D deriv) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const Var in = a;
  auto out_id = std::make_shared<std::size_t>(0);
  Var out = tape.record(std::move(y), {a},
                        [in, out_id, deriv](Tape& t, const Tensor& g) {
                          Tensor* ga = t.grad_buffer(in);
                          if (!ga) return;
                          const Tensor& xv = t.value(in.id());
                          const Tensor& yv = t.value(*out_id);
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            (*ga)[i] += g[i] * deriv(xv[i], yv[i]);
                          }
                        });
  *out_id = out.id();
  return out;
}

}  // namespace

Var elementwise(Elementwise op, std::span<const Var> inputs, double factor) {
  const bool binary =
      op == Elementwise::Add || op == Elementwise::Sub || op == Elementwise::Mul;
  const std::size_t want = binary ? 2 : 1;
  if (inputs.size() != want) {
    throw ContractError("elementwise: expected " + std::to_string(want) +
                        " operand(s), got " + std::to_string(inputs.size()));
  }
  switch (op) {
    case Elementwise::Add: return add(inputs[0], inputs[1]);
    case Elementwise::Sub: return sub(inputs[0], inputs[1]);
    case Elementwise::Mul: return mul(inputs[0], inputs[1]);
    case Elementwise::Tanh: return tanh(inputs[0]);
    case Elementwise::Relu: return relu(inputs[0]);
    case Elementwise::Sigmoid: return sigmoid(inputs[0]);
    case Elementwise::Log: return log(inputs[0]);
    case Elementwise::Neg: return neg(inputs[0]);
    case Elementwise::Scale: return scale(inputs[0], factor);
  }
  throw ContractError("elementwise: unknown op");
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tape& tape = tape_of(a);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape.record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tape& tape = tape_of(a);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return tape.record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tape& tape = tape_of(a);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return tape.record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a.id());
    const Tensor& bv2 = t.value(b.id());
    if (Tensor* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv2[i];
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double factor) {
  return pointwise(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double value) {
  return pointwise(
      a, [value](double x) { return x + value; },
      [](double, double) { return 1.0; });
}

Var tanh(const Var& a) {
  return pointwise(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  return pointwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return pointwise(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var log(const Var& a) {
  for (double x : a.value().data()) {
    if (!(x > 0.0)) {
      throw DomainError("log of non-positive value " + std::to_string(x));
    }
  }
  return pointwise(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var abs(const Var& a) {
  return pointwise(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var clamp(const Var& a, double lo, double hi) {
  return pointwise(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " +
                         shape_to_string(av.shape()) + " and " +
                         shape_to_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor y({m, n});
  as_mat(y, m, n).noalias() = as_mat(av, m, k) * as_mat(bv, k, n);
  return tape_of(a).record(
      std::move(y), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
        const auto gm = as_mat(g, m, n);
        if (Tensor* ga = t.grad_buffer(a)) {
          as_mat(*ga, m, k).noalias() +=
              gm * as_mat(t.value(b.id()), k, n).transpose();
        }
        if (Tensor* gb = t.grad_buffer(b)) {
          as_mat(*gb, k, n).noalias() +=
              as_mat(t.value(a.id()), m, k).transpose() * gm;
        }
      });
}

Var linear(const Var& x, const Var& weight) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const std::size_t in = wv.rank() == 2 ? wv.dim(1) : 0;
  const std::size_t rows = xv.rank() == 2 ? xv.dim(0) : 1;
  const std::size_t xcols = xv.rank() == 2 ? xv.dim(1) : xv.dim(0);
  if (wv.rank() != 2 || xv.rank() > 2 || xcols != in) {
    throw DimensionError("linear: input " + shape_to_string(xv.shape()) +
                         " does not match weight " +
                         shape_to_string(wv.shape()));
  }
  const std::size_t out = wv.dim(0);
  Tensor y(xv.rank() == 2 ? Shape{rows, out} : Shape{out});
  as_mat(y, rows, out).noalias() =
      as_mat(xv, rows, in) * as_mat(wv, out, in).transpose();
  return tape_of(x).record(
      std::move(y), {x, weight},
      [x, weight, rows, in, out](Tape& t, const Tensor& g) {
        const auto gm = as_mat(g, rows, out);
        if (Tensor* gx = t.grad_buffer(x)) {
          as_mat(*gx, rows, in).noalias() +=
              gm * as_mat(t.value(weight.id()), out, in);
        }
        if (Tensor* gw = t.grad_buffer(weight)) {
          as_mat(*gw, out, in).noalias() +=
              gm.transpose() * as_mat(t.value(x.id()), rows, in);
        }
      });
}

Var add_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t d = xv.shape().back();
  if (bv.rank() != 1 || bv.dim(0) != d || xv.rank() > 2) {
    throw DimensionError("add_bias: input " + shape_to_string(xv.shape()) +
                         " does not match bias " +
                         shape_to_string(bv.shape()));
  }
  const std::size_t rows = xv.size() / d;
  Tensor y = xv;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] += bv[j];
  }
  return tape_of(x).record(std::move(y), {x, bias},
                           [x, bias, rows, d](Tape& t, const Tensor& g) {
                             if (Tensor* gx = t.grad_buffer(x)) {
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 (*gx)[i] += g[i];
                               }
                             }
                             if (Tensor* gb = t.grad_buffer(bias)) {
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t j = 0; j < d; ++j) {
                                   (*gb)[j] += g[r * d + j];
                                 }
                               }
                             }
                           });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if ((xv.rank() != 3 && xv.rank() != 4) || bv.rank() != 1) {
    throw DimensionError("add_channel_bias: bad shapes " +
                         shape_to_string(xv.shape()) + ", " +
                         shape_to_string(bv.shape()));
  }
  const std::size_t batch = xv.rank() == 4 ? xv.dim(0) : 1;
  const std::size_t channels = xv.dim(xv.rank() - 3);
  const std::size_t plane = xv.dim(xv.rank() - 2) * xv.dim(xv.rank() - 1);
  if (bv.dim(0) != channels) {
    throw DimensionError("add_channel_bias: " + std::to_string(channels) +
                         " channels vs bias " + shape_to_string(bv.shape()));
  }
  Tensor y = xv;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* p = y.data().data() + (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bv[c];
    }
  }
  return tape_of(x).record(
      std::move(y), {x, bias},
      [x, bias, batch, channels, plane](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_buffer(x)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
        }
        if (Tensor* gb = t.grad_buffer(bias)) {
          for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t c = 0; c < channels; ++c) {
              const double* p = g.data().data() + (n * channels + c) * plane;
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += p[i];
              (*gb)[c] += acc;
            }
          }
        }
      });
}

Var softmax(const Var& logits) {
  const Tensor& xv = logits.value();
  if (xv.rank() > 2) {
    throw DimensionError("softmax: expects [L] or [n x L], got " +
                         shape_to_string(xv.shape()));
  }
  if (!xv.all_finite()) throw NumericError("softmax: non-finite logit");
  const std::size_t len = xv.shape().back();
  const std::size_t rows = xv.size() / len;
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = xv.data().data() + r * len;
    double* o = y.data().data() + r * len;
    const double mx = *std::max_element(x, x + len);
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      o[j] = std::exp(x[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < len; ++j) o[j] /= total;
  }
  auto out_id = std::make_shared<std::size_t>(0);
  Var out = tape_of(logits).record(
      std::move(y), {logits},
      [logits, out_id, rows, len](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(logits);
        if (!gx) return;
        const Tensor& yv = t.value(*out_id);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t off = r * len;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) dot += g[off + j] * yv[off + j];
          for (std::size_t j = 0; j < len; ++j) {
            (*gx)[off + j] += yv[off + j] * (g[off + j] - dot);
          }
        }
      });
  *out_id = out.id();
  return out;
}

Var conv2d(const Var& input, const Var& kernels, std::size_t stride) {
  const Tensor& xv = input.value();
  const Tensor& kv = kernels.value();
  if ((xv.rank() != 3 && xv.rank() != 4) || kv.rank() != 4 || stride == 0) {
    throw DimensionError("conv2d: input " + shape_to_string(xv.shape()) +
                         ", kernels " + shape_to_string(kv.shape()) +
                         ", stride " + std::to_string(stride));
  }
  const bool batched = xv.rank() == 4;
  const std::size_t n_batch = batched ? xv.dim(0) : 1;
  const std::size_t c_in = xv.dim(xv.rank() - 3);
  const std::size_t h = xv.dim(xv.rank() - 2);
  const std::size_t w = xv.dim(xv.rank() - 1);
  const std::size_t filters = kv.dim(0);
  const std::size_t kh = kv.dim(2), kw = kv.dim(3);
  if (kv.dim(1) != c_in || kh > h || kw > w) {
    throw DimensionError("conv2d: kernels " + shape_to_string(kv.shape()) +
                         " do not fit input " + shape_to_string(xv.shape()));
  }
  const std::size_t ho = (h - kh) / stride + 1;
  const std::size_t wo = (w - kw) / stride + 1;
  const std::size_t patch = c_in * kh * kw;
  const std::size_t plane = ho * wo;
  const std::size_t ncols = n_batch * plane;

  // im2col: cols[patch x (N*plane)]
  auto cols = std::make_shared<std::vector<double>>(patch * ncols);
  const double* x = xv.data().data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < c_in; ++c) {
      const double* xc = x + (n * c_in + c) * h * w;
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          double* row =
              cols->data() + ((c * kh + i) * kw + j) * ncols + n * plane;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const double* src = xc + (oh * stride + i) * w + j;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              row[oh * wo + ow] = src[ow * stride];
            }
          }
        }
      }
    }
  }
  RowMat out_mat = as_mat(kv, filters, patch) *
                   MapC(cols->data(), static_cast<Eigen::Index>(patch),
                        static_cast<Eigen::Index>(ncols));
  Shape out_shape = batched ? Shape{n_batch, filters, ho, wo}
                            : Shape{filters, ho, wo};
  Tensor y(out_shape);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t f = 0; f < filters; ++f) {
      const double* src = out_mat.data() + f * ncols + n * plane;
      std::copy(src, src + plane,
                y.data().data() + (n * filters + f) * plane);
    }
  }
  return tape_of(input).record(
      std::move(y), {input, kernels},
      [=](Tape& t, const Tensor& g) {
        RowMat gm(filters, ncols);
        for (std::size_t n = 0; n < n_batch; ++n) {
          for (std::size_t f = 0; f < filters; ++f) {
            const double* src = g.data().data() + (n * filters + f) * plane;
            std::copy(src, src + plane, gm.data() + f * ncols + n * plane);
          }
        }
        const MapC cm(cols->data(), static_cast<Eigen::Index>(patch),
                      static_cast<Eigen::Index>(ncols));
        if (Tensor* gk = t.grad_buffer(kernels)) {
          as_mat(*gk, filters, patch).noalias() += gm * cm.transpose();
        }
        if (Tensor* gx = t.grad_buffer(input)) {
          RowMat dcols =
              as_mat(t.value(kernels.id()), filters, patch).transpose() * gm;
          double* dx = gx->data().data();
          for (std::size_t n = 0; n < n_batch; ++n) {
            for (std::size_t c = 0; c < c_in; ++c) {
              double* dxc = dx + (n * c_in + c) * h * w;
              for (std::size_t i = 0; i < kh; ++i) {
                for (std::size_t j = 0; j < kw; ++j) {
                  const double* row =
                      dcols.data() + ((c * kh + i) * kw + j) * ncols +
                      n * plane;
                  for (std::size_t oh = 0; oh < ho; ++oh) {
                    double* dst = dxc + (oh * stride + i) * w + j;
                    for (std::size_t ow = 0; ow < wo; ++ow) {
                      dst[ow * stride] += row[oh * wo + ow];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Var pad2d(const Var& input, std::size_t pad) {
  const Tensor& xv = input.value();
  if (xv.rank() < 2) {
    throw DimensionError("pad2d: needs rank >= 2, got " +
                         shape_to_string(xv.shape()));
  }
  const std::size_t h = xv.dim(xv.rank() - 2), w = xv.dim(xv.rank() - 1);
  const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
  const std::size_t planes = xv.size() / (h * w);
  Shape shape = xv.shape();
  shape[shape.size() - 2] = hp;
  shape[shape.size() - 1] = wp;
  Tensor y(shape);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < h; ++i) {
      const double* src = xv.data().data() + (p * h + i) * w;
      std::copy(src, src + w,
                y.data().data() + (p * hp + i + pad) * wp + pad);
    }
  }
  return tape_of(input).record(
      std::move(y), {input}, [=](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(input);
        if (!gx) return;
        for (std::size_t p = 0; p < planes; ++p) {
          for (std::size_t i = 0; i < h; ++i) {
            const double* src = g.data().data() + (p * hp + i + pad) * wp + pad;
            double* dst = gx->data().data() + (p * h + i) * w;
            for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
      });
}

Var upsample2x(const Var& input) {
  const Tensor& xv = input.value();
  if (xv.rank() < 2) {
    throw DimensionError("upsample2x: needs rank >= 2, got " +
                         shape_to_string(xv.shape()));
  }
  const std::size_t h = xv.dim(xv.rank() - 2), w = xv.dim(xv.rank() - 1);
  const std::size_t planes = xv.size() / (h * w);
  Shape shape = xv.shape();
  shape[shape.size() - 2] = 2 * h;
  shape[shape.size() - 1] = 2 * w;
  Tensor y(shape);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) {
        y[(p * 2 * h + i) * 2 * w + j] = xv[(p * h + i / 2) * w + j / 2];
      }
    }
  }
  return tape_of(input).record(
      std::move(y), {input}, [=](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(input);
        if (!gx) return;
        for (std::size_t p = 0; p < planes; ++p) {
          for (std::size_t i = 0; i < 2 * h; ++i) {
            for (std::size_t j = 0; j < 2 * w; ++j) {
              (*gx)[(p * h + i / 2) * w + j / 2] +=
                  g[(p * 2 * h + i) * 2 * w + j];
            }
          }
        }
      });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) +
                         " out of range for " + shape_to_string(first));
  }
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: shape " + shape_to_string(s) +
                           " incompatible with " + shape_to_string(first));
    }
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Shape shape = first;
  shape[axis] = total;
  Tensor y(shape);
  std::vector<std::size_t> widths;
  widths.reserve(parts.size());
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.shape()[axis] * inner;
    const Tensor& pv = p.value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(pv.data().begin() + o * chunk,
                pv.data().begin() + (o + 1) * chunk,
                y.data().begin() + o * total * inner + offset);
    }
    widths.push_back(chunk);
    offset += chunk;
  }
  return tape_of(parts.front())
      .record(std::move(y), parts, [=](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
          const std::size_t chunk = widths[k];
          if (Tensor* gp = t.grad_buffer(parts[k])) {
            for (std::size_t o = 0; o < outer; ++o) {
              const double* src = g.data().data() + o * total * inner + off;
              double* dst = gp->data().data() + o * chunk;
              for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
          }
          off += chunk;
        }
      });
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw DimensionError("slice: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " of " + shape_to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t full = s[axis] * inner;
  const std::size_t part = (end - begin) * inner;
  const std::size_t off = begin * inner;
  Shape shape = s;
  shape[axis] = end - begin;
  Tensor y(shape);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(xv.data().begin() + o * full + off,
              xv.data().begin() + o * full + off + part,
              y.data().begin() + o * part);
  }
  return tape_of(x).record(std::move(y), {x}, [=](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < part; ++i) {
        (*gx)[o * full + off + i] += g[o * part + i];
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return tape_of(x).record(std::move(y), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return tape_of(x).record(Tensor::scalar(acc), {x},
                           [x](Tape& t, const Tensor& g) {
                             if (Tensor* gx = t.grad_buffer(x)) {
                               for (auto& v : gx->data()) v += g[0];
                             }
                           });
}

Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var repeat_rows(const Var& x, std::size_t times) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || times == 0) {
    throw DimensionError("repeat_rows: needs a matrix, got " +
                         shape_to_string(xv.shape()));
  }
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor y({n * times, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < times; ++k) {
      std::copy(xv.data().begin() + i * d, xv.data().begin() + (i + 1) * d,
                y.data().begin() + (i * times + k) * d);
    }
  }
  return tape_of(x).record(std::move(y), {x}, [=](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < times; ++k) {
        for (std::size_t j = 0; j < d; ++j) {
          (*gx)[i * d + j] += g[(i * times + k) * d + j];
        }
      }
    }
  });
}

Var row_scale(const Var& x, const Var& s) {
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  if (xv.rank() != 2 || sv.size() != xv.dim(0)) {
    throw DimensionError("row_scale: rows " + shape_to_string(xv.shape()) +
                         " vs scales " + shape_to_string(sv.shape()));
  }
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor y = xv;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] *= sv[i];
  }
  return tape_of(x).record(std::move(y), {x, s}, [=](Tape& t, const Tensor& g) {
    const Tensor& xv2 = t.value(x.id());
    const Tensor& sv2 = t.value(s.id());
    if (Tensor* gx = t.grad_buffer(x)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          (*gx)[i * d + j] += g[i * d + j] * sv2[i];
        }
      }
    }
    if (Tensor* gs = t.grad_buffer(s)) {
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += g[i * d + j] * xv2[i * d + j];
        (*gs)[i] += acc;
      }
    }
  });
}

Var group_sum_rows(const Var& x, std::size_t group) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || group == 0 || xv.dim(0) % group != 0) {
    throw DimensionError("group_sum_rows: " + shape_to_string(xv.shape()) +
                         " not divisible into groups of " +
                         std::to_string(group));
  }
  const std::size_t n = xv.dim(0) / group, d = xv.dim(1);
  Tensor y({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < group; ++k) {
      for (std::size_t j = 0; j < d; ++j) {
        y[i * d + j] += xv[(i * group + k) * d + j];
      }
    }
  }
  return tape_of(x).record(std::move(y), {x}, [=](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < group; ++k) {
        for (std::size_t j = 0; j < d; ++j) {
          (*gx)[(i * group + k) * d + j] += g[i * d + j];
        }
      }
    }
  });
}

Var pick(const Var& x, std::span<const std::size_t> index) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || index.size() != xv.dim(0)) {
    throw DimensionError("pick: " + std::to_string(index.size()) +
                         " indices for " + shape_to_string(xv.shape()));
  }
  const std::size_t n = xv.dim(0), k = xv.dim(1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor y({n});
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= k) {
      throw DimensionError("pick: index " + std::to_string(idx[i]) +
                           " out of range " + std::to_string(k));
    }
    y[i] = xv[i * k + idx[i]];
  }
  return tape_of(x).record(std::move(y), {x}, [=](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x)) {
      for (std::size_t i = 0; i < n; ++i) (*gx)[i * k + idx[i]] += g[i];
    }
  });
}

}  // namespace darqn::ops
