#include "dapr/nn/ops.h"

#include <algorithm>
#include <cmath>
#include <string>

namespace dapr::nn {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double log_sigmoid(double x) { return -softplus(-x); }

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

void check_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || b.rank() != 1 || b.dim(0) != w.dim(0) || x.rank() < 1 ||
      x.rank() > 2 || x.cols() != w.dim(1)) {
    throw ShapeError("affine: incompatible shapes x" + shape_string(x.shape()) + " W" +
                     shape_string(w.shape()) + " b" + shape_string(b.shape()));
  }
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename F, typename D>
Var unary(Var a, const char* name, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t in = a.id();
  Tape& tape = a.tape();
  const std::size_t out = tape.size();
  return tape.record(std::move(y), {a},
                     [in, out, dfdx](Tape& t, std::span<const double> g) {
                       const Tensor& xv = t.value(in);
                       const Tensor& yv = t.value(out);
                       auto& gx = t.grad_buffer(in);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         gx[i] += g[i] * dfdx(xv[i], yv[i]);
                       }
                     },
                     name);
}

}  // namespace

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_affine(x, w, b);
  const std::size_t n_out = w.dim(0), n_in = w.dim(1), batch = x.rows();
  Shape shape = x.rank() == 1 ? Shape{n_out} : Shape{batch, n_out};
  Tensor y(shape);
  const double* wp = w.data().data();
  const double* xp = x.data().data();
  // Row-axpy over the transposed weights keeps the inner loop free of reductions.
  std::vector<double> wt(n_in * n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    for (std::size_t i = 0; i < n_in; ++i) wt[i * n_out + o] = wp[o * n_in + i];
  }
  double* yp = y.data().data();
  for (std::size_t r = 0; r < batch; ++r) {
    double* yr = yp + r * n_out;
    for (std::size_t o = 0; o < n_out; ++o) yr[o] = b[o];
    const double* xr = xp + r * n_in;
    for (std::size_t i = 0; i < n_in; ++i) {
      const double xi = xr[i];
      const double* wr = wt.data() + i * n_out;
      for (std::size_t o = 0; o < n_out; ++o) yr[o] += xi * wr[o];
    }
  }
  return y;
}

Tensor softmax(const Tensor& v) {
  if (v.size() == 0) throw ShapeError("softmax of empty tensor");
  Tensor y(v.shape());
  const std::size_t c = v.cols();
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double m = v[r * c];
    for (std::size_t i = 1; i < c; ++i) m = std::max(m, v[r * c + i]);
    double s = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      y[r * c + i] = std::exp(v[r * c + i] - m);
      s += y[r * c + i];
    }
    for (std::size_t i = 0; i < c; ++i) y[r * c + i] /= s;
  }
  return y;
}

double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  if (a.size() == 0) throw ShapeError("mse of empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double kl_gauss(const Tensor& mu, const Tensor& sigma) {
  require_same_shape(mu, sigma, "kl_gauss");
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double sg = sigma[i];
    if (!(sg > 0.0)) throw std::invalid_argument("kl_gauss: sigma must be positive");
    s += mu[i] * mu[i] + sg * sg - std::log(sg * sg) - 1.0;
  }
  return 0.5 * s;
}

Var affine(Var x, Var w, Var b) {
  Tensor y = affine(x.value(), w.value(), b.value());
  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  return x.tape().record(
      std::move(y), {x, w, b},
      [xi, wi, bi](Tape& t, std::span<const double> g) {
        const Tensor& xv = t.value(xi);
        const Tensor& wv = t.value(wi);
        const std::size_t n_out = wv.dim(0), n_in = wv.dim(1), batch = xv.rows();
        if (t.needs_grad(xi)) {
          auto& gx = t.grad_buffer(xi);
          for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t o = 0; o < n_out; ++o) {
              const double go = g[r * n_out + o];
              if (go == 0.0) continue;
              const double* wr = wv.data().data() + o * n_in;
              double* gxr = gx.data() + r * n_in;
              for (std::size_t i = 0; i < n_in; ++i) gxr[i] += go * wr[i];
            }
          }
        }
        if (t.needs_grad(wi)) {
          auto& gw = t.grad_buffer(wi);
          for (std::size_t r = 0; r < batch; ++r) {
            const double* xr = xv.data().data() + r * n_in;
            for (std::size_t o = 0; o < n_out; ++o) {
              const double go = g[r * n_out + o];
              if (go == 0.0) continue;
              double* gwr = gw.data() + o * n_in;
              for (std::size_t i = 0; i < n_in; ++i) gwr[i] += go * xr[i];
            }
          }
        }
        if (t.needs_grad(bi)) {
          auto& gb = t.grad_buffer(bi);
          for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t o = 0; o < n_out; ++o) gb[o] += g[r * n_out + o];
          }
        }
      },
      "affine");
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {a, b},
                         [ai, bi](Tape& t, std::span<const double> g) {
                           for (auto id : {ai, bi}) {
                             if (!t.needs_grad(id)) continue;
                             auto& gb = t.grad_buffer(id);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                           }
                         },
                         "add");
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {a, b},
                         [ai, bi](Tape& t, std::span<const double> g) {
                           if (t.needs_grad(ai)) {
                             auto& ga = t.grad_buffer(ai);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           }
                           if (t.needs_grad(bi)) {
                             auto& gb = t.grad_buffer(bi);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                           }
                         },
                         "sub");
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {a, b},
                         [ai, bi](Tape& t, std::span<const double> g) {
                           if (t.needs_grad(ai)) {
                             const Tensor& bv = t.value(bi);
                             auto& ga = t.grad_buffer(ai);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                           }
                           if (t.needs_grad(bi)) {
                             const Tensor& av = t.value(ai);
                             auto& gb = t.grad_buffer(bi);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                           }
                         },
                         "mul");
}

Var scale(Var a, double c) {
  return unary(a, "scale", [c](double x) { return c * x; },
               [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, "add_scalar", [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Var one_minus(Var a) {
  return unary(a, "one_minus", [](double x) { return 1.0 - x; },
               [](double, double) { return -1.0; });
}

Var minimum(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "minimum");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(y[i], b.value()[i]);
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {a, b},
                         [ai, bi](Tape& t, std::span<const double> g) {
                           const Tensor& av = t.value(ai);
                           const Tensor& bv = t.value(bi);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             const std::size_t id = av[i] <= bv[i] ? ai : bi;
                             if (t.needs_grad(id)) t.grad_buffer(id)[i] += g[i];
                           }
                         },
                         "minimum");
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", [](double x) { return sigmoid(x); },
               [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Var a) {
  return unary(a, "softplus", [](double x) { return softplus(x); },
               [](double x, double) { return sigmoid(x); });
}

Var log_sigmoid(Var a) {
  return unary(a, "log_sigmoid", [](double x) { return log_sigmoid(x); },
               [](double x, double) { return sigmoid(-x); });
}

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, "square", [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var softmax(Var a) {
  Tensor y = softmax(a.value());
  const std::size_t ai = a.id();
  const std::size_t out = a.tape().size();
  return a.tape().record(std::move(y), {a},
                         [ai, out](Tape& t, std::span<const double> g) {
                           const Tensor& yv = t.value(out);
                           auto& ga = t.grad_buffer(ai);
                           const std::size_t c = yv.cols();
                           for (std::size_t r = 0; r < yv.rows(); ++r) {
                             double dot = 0.0;
                             for (std::size_t i = 0; i < c; ++i) dot += g[r * c + i] * yv[r * c + i];
                             for (std::size_t i = 0; i < c; ++i) {
                               ga[r * c + i] += yv[r * c + i] * (g[r * c + i] - dot);
                             }
                           }
                         },
                         "softmax");
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const Tensor& first = parts.front().value();
  const std::size_t rows = first.rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != rows || p.value().rank() != first.rank()) {
      throw ShapeError("concat: leading dimensions disagree");
    }
    total += p.value().cols();
  }
  Shape shape = first.shape();
  shape.back() = total;
  Tensor y(shape);
  std::vector<std::size_t> ids, widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    const std::size_t c = v.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data().data() + r * c, c, y.data().data() + r * total + off);
    }
    off += c;
    ids.push_back(p.id());
    widths.push_back(c);
  }
  return parts.front().tape().record(
      std::move(y), parts,
      [ids, widths, rows, total](Tape& t, std::span<const double> g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t c = widths[k];
          if (t.needs_grad(ids[k])) {
            auto& gp = t.grad_buffer(ids[k]);
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t i = 0; i < c; ++i) gp[r * c + i] += g[r * total + off + i];
            }
          }
          off += c;
        }
      },
      "concat");
}

Var slice(Var a, std::size_t begin, std::size_t length) {
  const Tensor& v = a.value();
  const std::size_t c = v.cols(), rows = v.rows();
  if (begin + length > c || length == 0) throw ShapeError("slice out of range");
  Shape shape = v.shape();
  shape.back() = length;
  Tensor y(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(v.data().data() + r * c + begin, length, y.data().data() + r * length);
  }
  const std::size_t ai = a.id();
  return a.tape().record(std::move(y), {a},
                         [ai, begin, length, c, rows](Tape& t, std::span<const double> g) {
                           auto& ga = t.grad_buffer(ai);
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t i = 0; i < length; ++i) {
                               ga[r * c + begin + i] += g[r * length + i];
                             }
                           }
                         },
                         "slice");
}

Var row(Var table, std::size_t index) {
  const Tensor& v = table.value();
  if (v.rank() != 2) throw ShapeError("row: table must be rank 2");
  if (index >= v.dim(0)) {
    throw std::out_of_range("embedding index " + std::to_string(index) +
                            " outside table of " + std::to_string(v.dim(0)) + " rows");
  }
  const std::size_t c = v.dim(1);
  Tensor y(Shape{c});
  std::copy_n(v.data().data() + index * c, c, y.data().data());
  const std::size_t ti = table.id();
  return table.tape().record(std::move(y), {table},
                             [ti, index, c](Tape& t, std::span<const double> g) {
                               auto& gt = t.grad_buffer(ti);
                               for (std::size_t i = 0; i < c; ++i) gt[index * c + i] += g[i];
                             },
                             "row");
}

Var gather_rows(Var table, const std::vector<std::size_t>& indices) {
  const Tensor& v = table.value();
  if (v.rank() != 2) throw ShapeError("gather_rows: table must be rank 2");
  const std::size_t c = v.dim(1);
  Tensor y(Shape{indices.size(), c});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= v.dim(0)) {
      throw std::out_of_range("embedding index " + std::to_string(indices[r]) +
                              " outside table of " + std::to_string(v.dim(0)) + " rows");
    }
    std::copy_n(v.data().data() + indices[r] * c, c, y.data().data() + r * c);
  }
  const std::size_t ti = table.id();
  return table.tape().record(std::move(y), {table},
                             [ti, indices, c](Tape& t, std::span<const double> g) {
                               auto& gt = t.grad_buffer(ti);
                               for (std::size_t r = 0; r < indices.size(); ++r) {
                                 for (std::size_t i = 0; i < c; ++i) {
                                   gt[indices[r] * c + i] += g[r * c + i];
                                 }
                               }
                             },
                             "gather_rows");
}

Var flatten(Var a) {
  Tensor y(Shape{a.value().size()}, a.value().values());
  const std::size_t ai = a.id();
  return a.tape().record(std::move(y), {a},
                         [ai](Tape& t, std::span<const double> g) {
                           auto& ga = t.grad_buffer(ai);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         },
                         "flatten");
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  const std::size_t ai = a.id();
  return a.tape().record(Tensor::scalar(s), {a},
                         [ai](Tape& t, std::span<const double> g) {
                           auto& ga = t.grad_buffer(ai);
                           for (auto& x : ga) x += g[0];
                         },
                         "sum");
}

Var mean(Var a) {
  if (a.value().size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var sum_last(Var a) {
  const Tensor& v = a.value();
  const std::size_t c = v.cols(), rows = v.rows();
  Tensor y(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < c; ++i) s += v[r * c + i];
    y[r] = s;
  }
  const std::size_t ai = a.id();
  return a.tape().record(std::move(y), {a},
                         [ai, c, rows](Tape& t, std::span<const double> g) {
                           auto& ga = t.grad_buffer(ai);
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t i = 0; i < c; ++i) ga[r * c + i] += g[r];
                           }
                         },
                         "sum_last");
}

Var mse(Var a, Var b) {
  const double value = mse(a.value(), b.value());
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(
      Tensor::scalar(value), {a, b},
      [ai, bi](Tape& t, std::span<const double> g) {
        const Tensor& av = t.value(ai);
        const Tensor& bv = t.value(bi);
        const double k = 2.0 * g[0] / static_cast<double>(av.size());
        if (t.needs_grad(ai)) {
          auto& ga = t.grad_buffer(ai);
          for (std::size_t i = 0; i < av.size(); ++i) ga[i] += k * (av[i] - bv[i]);
        }
        if (t.needs_grad(bi)) {
          auto& gb = t.grad_buffer(bi);
          for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= k * (av[i] - bv[i]);
        }
      },
      "mse");
}

Var kl_gauss(Var mu, Var sigma) {
  const double value = kl_gauss(mu.value(), sigma.value());
  const std::size_t mi = mu.id(), si = sigma.id();
  return mu.tape().record(
      Tensor::scalar(value), {mu, sigma},
      [mi, si](Tape& t, std::span<const double> g) {
        if (t.needs_grad(mi)) {
          const Tensor& mv = t.value(mi);
          auto& gm = t.grad_buffer(mi);
          for (std::size_t i = 0; i < mv.size(); ++i) gm[i] += g[0] * mv[i];
        }
        if (t.needs_grad(si)) {
          const Tensor& sv = t.value(si);
          auto& gs = t.grad_buffer(si);
          for (std::size_t i = 0; i < sv.size(); ++i) gs[i] += g[0] * (sv[i] - 1.0 / sv[i]);
        }
      },
      "kl_gauss");
}

}  // namespace dapr::nn
