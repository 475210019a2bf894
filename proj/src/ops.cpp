#include "elsnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace elsnet {

std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

namespace ops {
namespace {

template <typename T>
using Node = detail::Node<T>;
template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

#ifdef ELSNET_CHECK_FINITE
template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
  for (T x : v)
    if (!std::isfinite(x)) throw ContractError(std::string("non-finite value produced by ") + op);
}
#endif

// Wraps a forward result; the backward rule is attached only when some input
// participates in differentiation.
template <typename T>
BasicTensor<T> make_result(Dims dims, std::vector<T> value, const char* op, std::vector<NodePtr<T>> inputs,
                           std::function<void(Node<T>&)> backward) {
#ifdef ELSNET_CHECK_FINITE
  check_finite(value, op);
#endif
  auto node = std::make_shared<Node<T>>();
  node->dims = std::move(dims);
  node->value = std::move(value);
  node->op = op;
  const bool any = detail::grad_recording &&
                   std::any_of(inputs.begin(), inputs.end(), [](const NodePtr<T>& n) { return n->requires_grad; });
  if (any) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return BasicTensor<T>(std::move(node));
}

void require_same_dims(const Dims& a, const Dims& b, const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": operand dims " + dims_to_string(a) + " and " + dims_to_string(b) +
                         " differ");
}

void require_rank(const Dims& d, std::size_t rank, const char* op, const char* what) {
  if (d.size() != rank)
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         dims_to_string(d));
}

template <typename T>
BasicTensor<T> unary(const BasicTensor<T>& x, const char* op, T (*f)(T), T (*df)(T x, T y)) {
  std::vector<T> y(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return make_result<T>(x.dims(), std::move(y), op, {x.node()}, [df](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(in.value[i], self.value[i]);
  });
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_dims(a.dims(), b.dims(), "add");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  return make_result<T>(a.dims(), std::move(y), "add", {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_dims(a.dims(), b.dims(), "sub");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  return make_result<T>(a.dims(), std::move(y), "sub", {a.node(), b.node()}, [](Node<T>& self) {
    const T sign[2] = {T(1), T(-1)};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_dims(a.dims(), b.dims(), "mul");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  return make_result<T>(a.dims(), std::move(y), "mul", {a.node(), b.node()}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_dims(a.dims(), b.dims(), "div");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] / b[i];
  return make_result<T>(a.dims(), std::move(y), "div", {a.node(), b.node()}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / B.value[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * s;
  return make_result<T>(a.dims(), std::move(y), "scale", {a.node()}, [s](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s) {
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + s;
  return make_result<T>(a.dims(), std::move(y), "add_scalar", {a.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return unary<T>(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  return unary<T>(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  for (T v : x.data())
    if (!(v > T(0))) throw ContractError("log: input must be strictly positive");
  return unary<T>(
      x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return make_result<T>({1}, {acc}, "sum", {x.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  const T n = static_cast<T>(x.numel());
  return make_result<T>({1}, {acc / n}, "mean", {x.node()}, [n](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0] / n;
  });
}

template <typename T>
BasicTensor<T> sum_spatial(const BasicTensor<T>& x) {
  require_rank(x.dims(), 3, "sum_spatial", "input");
  const std::size_t C = x.dim(0), P = x.dim(1) * x.dim(2);
  std::vector<T> y(C, T(0));
  const auto xv = x.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < P; ++p) y[c] += xv[c * P + p];
  return make_result<T>({C}, std::move(y), "sum_spatial", {x.node()}, [C, P](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) g[c * P + p] += self.grad[c];
  });
}

template <typename T>
BasicTensor<T> dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.numel() != b.numel())
    throw DimensionError("dot: lengths " + std::to_string(a.numel()) + " and " + std::to_string(b.numel()) +
                         " differ");
  T acc = T(0);
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return make_result<T>({1}, {acc}, "dot", {a.node(), b.node()}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    const T g0 = self.grad[0];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * A.value[i];
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t cin, h, w, k, ho, wo;
  int stride, pad;
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t P = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = cols + ((c * g.k + ki) * g.k + kj) * P;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long si = static_cast<long>(oi) * g.stride - g.pad + static_cast<long>(ki);
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long sj = static_cast<long>(oj) * g.stride - g.pad + static_cast<long>(kj);
            const bool inside = si >= 0 && sj >= 0 && si < static_cast<long>(g.h) && sj < static_cast<long>(g.w);
            row[oi * g.wo + oj] = inside ? x[(c * g.h + si) * g.w + sj] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t P = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = cols + ((c * g.k + ki) * g.k + kj) * P;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long si = static_cast<long>(oi) * g.stride - g.pad + static_cast<long>(ki);
          if (si < 0 || si >= static_cast<long>(g.h)) continue;
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long sj = static_cast<long>(oj) * g.stride - g.pad + static_cast<long>(kj);
            if (sj < 0 || sj >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + si) * g.w + sj] += row[oi * g.wo + oj];
          }
        }
      }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias, int stride,
                      int pad) {
  require_rank(x.dims(), 3, "conv2d", "input");
  require_rank(w.dims(), 4, "conv2d", "weight");
  require_rank(bias.dims(), 1, "conv2d", "bias");
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != x.dim(0))
    throw DimensionError("conv2d: weight axis 1 (input channels) is " + std::to_string(w.dim(1)) +
                         " but input axis 0 is " + std::to_string(x.dim(0)));
  if (w.dim(3) != k) throw DimensionError("conv2d: weight axes 2 and 3 (kernel) must be equal");
  if (k % 2 == 0) throw DimensionError("conv2d: kernel size along axis 2 must be odd, got " + std::to_string(k));
  if (bias.dim(0) != cout)
    throw DimensionError("conv2d: bias axis 0 is " + std::to_string(bias.dim(0)) + " but weight axis 0 is " +
                         std::to_string(cout));
  if (stride < 1 || pad < 0) throw DimensionError("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), k, 0, 0, stride, pad};
  const long span_h = static_cast<long>(g.h) + 2 * pad - static_cast<long>(k);
  const long span_w = static_cast<long>(g.w) + 2 * pad - static_cast<long>(k);
  if (span_h < 0 || span_h % stride != 0)
    throw DimensionError("conv2d: output extent along axis 1 (height) is not integral");
  if (span_w < 0 || span_w % stride != 0)
    throw DimensionError("conv2d: output extent along axis 2 (width) is not integral");
  g.ho = static_cast<std::size_t>(span_h / stride) + 1;
  g.wo = static_cast<std::size_t>(span_w / stride) + 1;
  const std::size_t P = g.ho * g.wo, R = g.cin * k * k;

  std::vector<T> cols(R * P);
  im2col(x.data().data(), g, cols.data());
  std::vector<T> y(cout * P);
  MatMap<T> Y(y.data(), cout, P);
  Y.noalias() = ConstMatMap<T>(w.data().data(), cout, R) * ConstMatMap<T>(cols.data(), R, P);
  for (std::size_t o = 0; o < cout; ++o) Y.row(o).array() += bias[o];

  return make_result<T>({cout, g.ho, g.wo}, std::move(y), "conv2d", {x.node(), w.node(), bias.node()},
                        [g, cout, P, R](Node<T>& self) {
                          auto& X = *self.inputs[0];
                          auto& W = *self.inputs[1];
                          auto& B = *self.inputs[2];
                          ConstMatMap<T> dY(self.grad.data(), cout, P);
                          if (W.requires_grad) {
                            std::vector<T> cols(R * P);
                            im2col(X.value.data(), g, cols.data());
                            MatMap<T> dW(W.ensure_grad().data(), cout, R);
                            dW.noalias() += dY * ConstMatMap<T>(cols.data(), R, P).transpose();
                          }
                          if (B.requires_grad) {
                            auto& gb = B.ensure_grad();
                            for (std::size_t o = 0; o < cout; ++o) gb[o] += dY.row(o).sum();
                          }
                          if (X.requires_grad) {
                            std::vector<T> dcols(R * P);
                            MatMap<T>(dcols.data(), R, P).noalias() =
                                ConstMatMap<T>(W.value.data(), cout, R).transpose() * dY;
                            col2im_add(dcols.data(), g, X.ensure_grad().data());
                          }
                        });
}

template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x) {
  require_rank(x.dims(), 3, "max_pool2d", "input");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), ho = H / 2, wo = W / 2;
  if (ho == 0 || wo == 0) throw DimensionError("max_pool2d: spatial extents must be >= 2");
  std::vector<T> y(C * ho * wo);
  std::vector<std::size_t> argmax(y.size());
  const auto xv = x.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = (c * H + 2 * i) * W + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (c * H + 2 * i + di) * W + 2 * j + dj;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (c * ho + i) * wo + j;
        y[o] = xv[best];
        argmax[o] = best;
      }
  return make_result<T>({C, ho, wo}, std::move(y), "max_pool2d", {x.node()},
                        [argmax = std::move(argmax)](Node<T>& self) {
                          auto& g = self.inputs[0]->ensure_grad();
                          for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
                        });
}

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x) {
  require_rank(x.dims(), 3, "upsample_nearest2x", "input");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<T> y(C * 4 * H * W);
  const auto xv = x.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < 2 * H; ++i)
      for (std::size_t j = 0; j < 2 * W; ++j) y[(c * 2 * H + i) * 2 * W + j] = xv[(c * H + i / 2) * W + j / 2];
  return make_result<T>({C, 2 * H, 2 * W}, std::move(y), "upsample_nearest2x", {x.node()},
                        [C, H, W](Node<T>& self) {
                          auto& g = self.inputs[0]->ensure_grad();
                          for (std::size_t c = 0; c < C; ++c)
                            for (std::size_t i = 0; i < 2 * H; ++i)
                              for (std::size_t j = 0; j < 2 * W; ++j)
                                g[(c * H + i / 2) * W + j / 2] += self.grad[(c * 2 * H + i) * 2 * W + j];
                        });
}

namespace {

struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;  // weight of `hi`
};

Taps bilinear_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    t.lo[o] = i0;
    t.hi[o] = std::min(i0 + 1, in - 1);
    t.frac[o] = src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x.dims(), 3, "bilinear_resize", "input");
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize: output extents must be >= 1");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Taps ty = bilinear_taps(H, out_h), tx = bilinear_taps(W, out_w);
  std::vector<T> y(C * out_h * out_w);
  const auto xv = x.data();
  for (std::size_t c = 0; c < C; ++c) {
    const T* src = xv.data() + c * H * W;
    for (std::size_t i = 0; i < out_h; ++i) {
      const T fy = static_cast<T>(ty.frac[i]);
      const T* r0 = src + ty.lo[i] * W;
      const T* r1 = src + ty.hi[i] * W;
      for (std::size_t j = 0; j < out_w; ++j) {
        const T fx = static_cast<T>(tx.frac[j]);
        const T top = r0[tx.lo[j]] * (T(1) - fx) + r0[tx.hi[j]] * fx;
        const T bot = r1[tx.lo[j]] * (T(1) - fx) + r1[tx.hi[j]] * fx;
        y[(c * out_h + i) * out_w + j] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return make_result<T>({C, out_h, out_w}, std::move(y), "bilinear_resize", {x.node()},
                        [C, H, W, out_h, out_w, ty = std::move(ty), tx = std::move(tx)](Node<T>& self) {
                          auto& g = self.inputs[0]->ensure_grad();
                          for (std::size_t c = 0; c < C; ++c) {
                            T* dst = g.data() + c * H * W;
                            for (std::size_t i = 0; i < out_h; ++i) {
                              const T fy = static_cast<T>(ty.frac[i]);
                              for (std::size_t j = 0; j < out_w; ++j) {
                                const T fx = static_cast<T>(tx.frac[j]);
                                const T d = self.grad[(c * out_h + i) * out_w + j];
                                dst[ty.lo[i] * W + tx.lo[j]] += d * (T(1) - fy) * (T(1) - fx);
                                dst[ty.lo[i] * W + tx.hi[j]] += d * (T(1) - fy) * fx;
                                dst[ty.hi[i] * W + tx.lo[j]] += d * fy * (T(1) - fx);
                                dst[ty.hi[i] * W + tx.hi[j]] += d * fy * fx;
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> instance_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                             T eps) {
  require_rank(x.dims(), 3, "instance_norm", "input");
  const std::size_t C = x.dim(0), P = x.dim(1) * x.dim(2);
  if (gamma.numel() != C || beta.numel() != C)
    throw DimensionError("instance_norm: scale/offset length must equal input axis 0 (" + std::to_string(C) + ")");
  std::vector<T> y(C * P), xhat(C * P), inv_std(C);
  const auto xv = x.data();
  for (std::size_t c = 0; c < C; ++c) {
    const T* src = xv.data() + c * P;
    T mu = T(0);
    for (std::size_t p = 0; p < P; ++p) mu += src[p];
    mu /= static_cast<T>(P);
    T var = T(0);
    for (std::size_t p = 0; p < P; ++p) var += (src[p] - mu) * (src[p] - mu);
    var /= static_cast<T>(P);
    inv_std[c] = T(1) / std::sqrt(var + eps);
    for (std::size_t p = 0; p < P; ++p) {
      xhat[c * P + p] = (src[p] - mu) * inv_std[c];
      y[c * P + p] = gamma[c] * xhat[c * P + p] + beta[c];
    }
  }
  return make_result<T>(x.dims(), std::move(y), "instance_norm", {x.node(), gamma.node(), beta.node()},
                        [C, P, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                          auto& X = *self.inputs[0];
                          auto& G = *self.inputs[1];
                          auto& B = *self.inputs[2];
                          for (std::size_t c = 0; c < C; ++c) {
                            const T* dy = self.grad.data() + c * P;
                            const T* xh = xhat.data() + c * P;
                            T sum_dy = T(0), sum_dy_xh = T(0);
                            for (std::size_t p = 0; p < P; ++p) {
                              sum_dy += dy[p];
                              sum_dy_xh += dy[p] * xh[p];
                            }
                            if (G.requires_grad) G.ensure_grad()[c] += sum_dy_xh;
                            if (B.requires_grad) B.ensure_grad()[c] += sum_dy;
                            if (X.requires_grad) {
                              T* dx = X.ensure_grad().data() + c * P;
                              const T gm = G.value[c];
                              const T n = static_cast<T>(P);
                              // d xhat = gm * dy; fold the mean and projection terms.
                              for (std::size_t p = 0; p < P; ++p)
                                dx[p] += gm * inv_std[c] / n * (n * dy[p] - sum_dy - xh[p] * sum_dy_xh);
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> softmax_channel(const BasicTensor<T>& x) {
  require_rank(x.dims(), 3, "softmax_channel", "input");
  const std::size_t K = x.dim(0), P = x.dim(1) * x.dim(2);
  std::vector<T> y(K * P);
  const auto xv = x.data();
  for (std::size_t p = 0; p < P; ++p) {
    T m = xv[p];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, xv[k * P + p]);
    T z = T(0);
    for (std::size_t k = 0; k < K; ++k) {
      y[k * P + p] = std::exp(xv[k * P + p] - m);
      z += y[k * P + p];
    }
    for (std::size_t k = 0; k < K; ++k) y[k * P + p] /= z;
  }
  return make_result<T>(x.dims(), std::move(y), "softmax_channel", {x.node()}, [K, P](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t p = 0; p < P; ++p) {
      T s = T(0);
      for (std::size_t k = 0; k < K; ++k) s += self.grad[k * P + p] * self.value[k * P + p];
      for (std::size_t k = 0; k < K; ++k) g[k * P + p] += self.value[k * P + p] * (self.grad[k * P + p] - s);
    }
  });
}

template <typename T>
BasicTensor<T> log_softmax_channel(const BasicTensor<T>& x) {
  require_rank(x.dims(), 3, "log_softmax_channel", "input");
  const std::size_t K = x.dim(0), P = x.dim(1) * x.dim(2);
  std::vector<T> y(K * P);
  const auto xv = x.data();
  for (std::size_t p = 0; p < P; ++p) {
    T m = xv[p];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, xv[k * P + p]);
    T z = T(0);
    for (std::size_t k = 0; k < K; ++k) z += std::exp(xv[k * P + p] - m);
    const T lse = m + std::log(z);
    for (std::size_t k = 0; k < K; ++k) y[k * P + p] = xv[k * P + p] - lse;
  }
  return make_result<T>(x.dims(), std::move(y), "log_softmax_channel", {x.node()}, [K, P](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t p = 0; p < P; ++p) {
      T s = T(0);
      for (std::size_t k = 0; k < K; ++k) s += self.grad[k * P + p];
      for (std::size_t k = 0; k < K; ++k)
        g[k * P + p] += self.grad[k * P + p] - std::exp(self.value[k * P + p]) * s;
    }
  });
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const std::size_t H = parts[0].dim(1), W = parts[0].dim(2);
  std::size_t C = 0;
  std::vector<NodePtr<T>> inputs;
  for (const auto& p : parts) {
    require_rank(p.dims(), 3, "concat_channels", "input");
    if (p.dim(1) != H) throw DimensionError("concat_channels: axis 1 (height) mismatch");
    if (p.dim(2) != W) throw DimensionError("concat_channels: axis 2 (width) mismatch");
    C += p.dim(0);
    inputs.push_back(p.node());
  }
  std::vector<T> y;
  y.reserve(C * H * W);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  return make_result<T>({C, H, W}, std::move(y), "concat_channels", std::move(inputs), [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t n = in->value.size();
      if (in->requires_grad) {
        auto& g = in->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
BasicTensor<T> masked_mean(const BasicTensor<T>& x, std::span<const std::uint8_t> indicator) {
  require_rank(x.dims(), 3, "masked_mean", "input");
  const std::size_t C = x.dim(0), P = x.dim(1) * x.dim(2);
  if (indicator.size() != P)
    throw DimensionError("masked_mean: indicator length " + std::to_string(indicator.size()) +
                         " does not match spatial size " + std::to_string(P));
  std::vector<std::uint32_t> idx;
  for (std::size_t p = 0; p < P; ++p)
    if (indicator[p]) idx.push_back(static_cast<std::uint32_t>(p));
  if (idx.empty()) throw ContractError("masked_mean: indicator selects no positions");
  const T n = static_cast<T>(idx.size());
  std::vector<T> y(C, T(0));
  const auto xv = x.data();
  for (std::size_t c = 0; c < C; ++c) {
    T acc = T(0);
    for (auto p : idx) acc += xv[c * P + p];
    y[c] = acc / n;
  }
  return make_result<T>({C}, std::move(y), "masked_mean", {x.node()},
                        [C, P, n, idx = std::move(idx)](Node<T>& self) {
                          auto& g = self.inputs[0]->ensure_grad();
                          for (std::size_t c = 0; c < C; ++c) {
                            const T d = self.grad[c] / n;
                            for (auto p : idx) g[c * P + p] += d;
                          }
                        });
}

template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& v, T eps) {
  T sq = T(0);
  for (T a : v.data()) sq += a * a;
  const T norm = std::max(std::sqrt(sq), eps);
  std::vector<T> y(v.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = v[i] / norm;
  const bool clamped = std::sqrt(sq) < eps;
  return make_result<T>(v.dims(), std::move(y), "l2_normalize", {v.node()}, [norm, clamped](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    T proj = T(0);
    if (!clamped)
      for (std::size_t i = 0; i < g.size(); ++i) proj += self.grad[i] * self.value[i];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (self.grad[i] - self.value[i] * proj) / norm;
  });
}

template <typename T>
BasicTensor<T> stack(const std::vector<BasicTensor<T>>& scalars) {
  if (scalars.empty()) throw DimensionError("stack: no inputs");
  std::vector<T> y;
  std::vector<NodePtr<T>> inputs;
  for (const auto& s : scalars) {
    if (!s.is_scalar()) throw DimensionError("stack: inputs must be scalars, got " + dims_to_string(s.dims()));
    y.push_back(s.item());
    inputs.push_back(s.node());
  }
  const std::size_t n = y.size();
  return make_result<T>({n}, std::move(y), "stack", std::move(inputs), [](Node<T>& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (self.inputs[i]->requires_grad) self.inputs[i]->ensure_grad()[0] += self.grad[i];
  });
}

template <typename T>
BasicTensor<T> logsumexp(const BasicTensor<T>& v) {
  const auto xv = v.data();
  T m = xv[0];
  for (T a : xv) m = std::max(m, a);
  T z = T(0);
  for (T a : xv) z += std::exp(a - m);
  const T out = m + std::log(z);
  return make_result<T>({1}, {out}, "logsumexp", {v.node()}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * std::exp(in.value[i] - self.value[0]);
  });
}

template <typename T>
BasicTensor<T> select(const BasicTensor<T>& v, std::size_t index) {
  if (index >= v.numel())
    throw DimensionError("select: index " + std::to_string(index) + " out of range for length " +
                         std::to_string(v.numel()));
  return make_result<T>({1}, {v[index]}, "select", {v.node()}, [index](Node<T>& self) {
    self.inputs[0]->ensure_grad()[index] += self.grad[0];
  });
}

#define ELSNET_INSTANTIATE_OPS(T)                                                                              \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                     \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                                \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> log(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> sum_spatial(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> dot(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int, int); \
  template BasicTensor<T> max_pool2d(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);                                           \
  template BasicTensor<T> bilinear_resize(const BasicTensor<T>&, std::size_t, std::size_t);                    \
  template BasicTensor<T> instance_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T); \
  template BasicTensor<T> softmax_channel(const BasicTensor<T>&);                                              \
  template BasicTensor<T> log_softmax_channel(const BasicTensor<T>&);                                          \
  template BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>&);                                 \
  template BasicTensor<T> masked_mean(const BasicTensor<T>&, std::span<const std::uint8_t>);                   \
  template BasicTensor<T> l2_normalize(const BasicTensor<T>&, T);                                              \
  template BasicTensor<T> stack(const std::vector<BasicTensor<T>>&);                                           \
  template BasicTensor<T> logsumexp(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> select(const BasicTensor<T>&, std::size_t);

ELSNET_INSTANTIATE_OPS(float)
ELSNET_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace elsnet
