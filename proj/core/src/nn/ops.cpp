#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "deskbot/error.hpp"
#include "deskbot/nn/graph.hpp"

namespace deskbot::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap as_matrix(const Tensor& t, int rows, int cols) { return {t.ptr(), rows, cols}; }
MatMap as_matrix(Tensor& t, int rows, int cols) { return {t.ptr(), rows, cols}; }

void require(bool ok, const char* op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw ContractViolation(fmt::format("{}: incompatible shapes {} and {}", op, a.shape_str(),
                                        b.shape_str()));
  }
}

void require_rank(const char* op, const Tensor& t, int rank) {
  if (t.rank() != rank) {
    throw ContractViolation(fmt::format("{}: expected rank {}, got shape {}", op, rank, t.shape_str()));
  }
}

template <typename D>
Graph::BackwardFn unary_backward(Var a, Var out, D deriv) {
  return [a, out, deriv](Graph& g) {
    const Tensor& x = g.value(a);
    const Tensor& y = g.value(out);
    const Tensor& gy = g.grad(out);
    Tensor& gx = g.grad(a);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * deriv(x[i], y[i]);
  };
}

// Records an elementwise op; `deriv(x, y)` is dy/dx at input x and output y.
template <typename F, typename D>
Var elementwise(Graph& g, Var a, F f, D deriv) {
  const Tensor& x = g.value(a);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const Var out{static_cast<int>(g.node_count())};
  return g.record(std::move(y), {a}, unary_backward(a, out, deriv));
}

Var next_var(const Graph& g) { return Var{static_cast<int>(g.node_count())}; }

}  // namespace

Var add(Graph& g, Var a, Var b) {
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  require(x.shape() == y.shape(), "add", x, y);
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  const Var out = next_var(g);
  return g.record(std::move(z), {a, b}, [a, b, out](Graph& g) {
    const Tensor& gz = g.grad(out);
    for (Var p : {a, b}) {
      if (!g.requires_grad(p)) continue;
      Tensor& gp = g.grad(p);
      for (std::size_t i = 0; i < gz.size(); ++i) gp[i] += gz[i];
    }
  });
}

Var sub(Graph& g, Var a, Var b) {
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  require(x.shape() == y.shape(), "sub", x, y);
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
  const Var out = next_var(g);
  return g.record(std::move(z), {a, b}, [a, b, out](Graph& g) {
    const Tensor& gz = g.grad(out);
    if (g.requires_grad(a)) {
      Tensor& ga = g.grad(a);
      for (std::size_t i = 0; i < gz.size(); ++i) ga[i] += gz[i];
    }
    if (g.requires_grad(b)) {
      Tensor& gb = g.grad(b);
      for (std::size_t i = 0; i < gz.size(); ++i) gb[i] -= gz[i];
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  require(x.shape() == y.shape(), "mul", x, y);
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  const Var out = next_var(g);
  return g.record(std::move(z), {a, b}, [a, b, out](Graph& g) {
    const Tensor& gz = g.grad(out);
    const Tensor& x = g.value(a);
    const Tensor& y = g.value(b);
    if (g.requires_grad(a)) {
      Tensor& ga = g.grad(a);
      for (std::size_t i = 0; i < gz.size(); ++i) ga[i] += gz[i] * y[i];
    }
    if (g.requires_grad(b)) {
      Tensor& gb = g.grad(b);
      for (std::size_t i = 0; i < gz.size(); ++i) gb[i] += gz[i] * x[i];
    }
  });
}

Var minimum(Graph& g, Var a, Var b) {
  const Tensor& x = g.value(a);
  const Tensor& y = g.value(b);
  require(x.shape() == y.shape(), "minimum", x, y);
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::min(x[i], y[i]);
  const Var out = next_var(g);
  return g.record(std::move(z), {a, b}, [a, b, out](Graph& g) {
    const Tensor& gz = g.grad(out);
    const Tensor& x = g.value(a);
    const Tensor& y = g.value(b);
    // Ties route the gradient to the first argument.
    if (g.requires_grad(a)) {
      Tensor& ga = g.grad(a);
      for (std::size_t i = 0; i < gz.size(); ++i) {
        if (x[i] <= y[i]) ga[i] += gz[i];
      }
    }
    if (g.requires_grad(b)) {
      Tensor& gb = g.grad(b);
      for (std::size_t i = 0; i < gz.size(); ++i) {
        if (y[i] < x[i]) gb[i] += gz[i];
      }
    }
  });
}

Var scale(Graph& g, Var a, double c) {
  return elementwise(g, a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Graph& g, Var a, double c) {
  return elementwise(g, a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var tanh(Graph& g, Var a) {
  // tanh(x) = sign(x) (1 - e) / (1 + e) with e = exp(-2|x|); Eigen vectorizes exp
  // but not tanh for doubles. Absolute error stays within a few ulps of 1.
  const Tensor& x = g.value(a);
  Tensor y(x.shape());
  const Eigen::Map<const Eigen::ArrayXd> xa(x.ptr(), static_cast<Eigen::Index>(x.size()));
  Eigen::Map<Eigen::ArrayXd> ya(y.ptr(), static_cast<Eigen::Index>(y.size()));
  ya = (-2.0 * xa.abs()).exp();
  ya = xa.sign() * (1.0 - ya) / (1.0 + ya);
  const Var out = next_var(g);
  if (g.tanh_fault()) {
    return g.record(std::move(y), {a}, unary_backward(a, out, [](double, double v) { return 1.0 - v; }));
  }
  return g.record(std::move(y), {a}, unary_backward(a, out, [](double, double v) { return 1.0 - v * v; }));
}

Var exp(Graph& g, Var a) {
  return elementwise(g, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(Graph& g, Var a) {
  return elementwise(g, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(Graph& g, Var a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractViolation("clamp: lo must not exceed hi");
  return elementwise(
      g, a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return x >= lo && x <= hi ? 1.0 : 0.0; });
}

Var sum(Graph& g, Var a) {
  const Tensor& x = g.value(a);
  double s = 0.0;
  for (double v : x.data()) s += v;
  const Var out = next_var(g);
  return g.record(Tensor::scalar(s), {a}, [a, out](Graph& g) {
    const double gz = g.grad(out)[0];
    for (double& v : g.grad(a).data()) v += gz;
  });
}

Var mean(Graph& g, Var a) {
  const std::size_t n = g.value(a).size();
  if (n == 0) throw ContractViolation("mean of an empty tensor");
  return scale(g, sum(g, a), 1.0 / static_cast<double>(n));
}

Var reshape(Graph& g, Var a, std::vector<int> shape) {
  Tensor y = g.value(a).reshaped(std::move(shape));
  const Var out = next_var(g);
  return g.record(std::move(y), {a}, [a, out](Graph& g) {
    const Tensor& gz = g.grad(out);
    Tensor& ga = g.grad(a);
    for (std::size_t i = 0; i < gz.size(); ++i) ga[i] += gz[i];
  });
}

Var linear(Graph& g, Var x, Var w, Var b) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  require_rank("linear(x)", xv, 2);
  require_rank("linear(w)", wv, 2);
  require(xv.dim(1) == wv.dim(1), "linear", xv, wv);
  const int n = xv.dim(0), in = xv.dim(1), outd = wv.dim(0);
  if (b.valid()) {
    const Tensor& bv = g.value(b);
    require(bv.rank() == 1 && bv.dim(0) == outd, "linear(bias)", wv, bv);
  }
  Tensor y({n, outd});
  auto ym = as_matrix(y, n, outd);
  ym.noalias() = as_matrix(xv, n, in) * as_matrix(wv, outd, in).transpose();
  if (b.valid()) {
    ym.rowwise() += ConstVecMap(g.value(b).ptr(), outd).transpose();
  }
  const Var out = next_var(g);
  return g.record(std::move(y), b.valid() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w},
                  [x, w, b, out, n, in, outd](Graph& g) {
                    const auto gy = as_matrix(static_cast<const Tensor&>(g.grad(out)), n, outd);
                    if (g.requires_grad(x)) {
                      as_matrix(g.grad(x), n, in).noalias() += gy * as_matrix(g.value(w), outd, in);
                    }
                    if (g.requires_grad(w)) {
                      as_matrix(g.grad(w), outd, in).noalias() +=
                          gy.transpose() * as_matrix(g.value(x), n, in);
                    }
                    if (b.valid() && g.requires_grad(b)) {
                      VecMap(g.grad(b).ptr(), outd) += gy.colwise().sum().transpose();
                    }
                  });
}

namespace {

// 3x3 "same" convolution as nine shifted GEMMs over a zero-padded NHWC copy of the
// batch. With the padded image flattened to rows of C values, kernel tap (dy, dx) is
// a fixed row offset, so each tap is one [P, C] x [C, O] product over the whole chunk.
// Rows that fall on the padding ring are computed and then discarded.
struct PaddedChunk {
  int count, h, w, c;
  int hp() const { return h + 2; }
  int wp() const { return w + 2; }
  Eigen::Index rows() const { return static_cast<Eigen::Index>(count) * hp() * wp(); }
  // Extra zero rows so the largest tap offset stays in bounds.
  Eigen::Index tail() const { return 2 * wp() + 2; }
  Eigen::Index offset(int tap) const { return (tap / 3) * wp() + tap % 3; }
  std::size_t padded_index(int s, int y, int x) const {
    return (static_cast<std::size_t>(s) * hp() + y + 1) * wp() + x + 1;
  }
};

void pad_chunk(const Tensor& x, int first, const PaddedChunk& pc, RowMat& out) {
  out.setZero(pc.rows() + pc.tail(), pc.c);
  for (int s = 0; s < pc.count; ++s) {
    for (int y = 0; y < pc.h; ++y) {
      const double* src = x.ptr() + ((static_cast<std::size_t>(first + s) * pc.h + y) * pc.w) * pc.c;
      std::copy_n(src, static_cast<std::size_t>(pc.w) * pc.c, out.data() + pc.padded_index(s, y, 0) * pc.c);
    }
  }
}

// Output rows live at the top-left corner of each tap window, so output (y, x) sits
// at padded row (y, x) without the +1 shift.
std::size_t out_row(const PaddedChunk& pc, int s, int y, int x) {
  return (static_cast<std::size_t>(s) * pc.hp() + y) * pc.wp() + x;
}

int conv_chunk(int h, int w, int c, int o) {
  constexpr std::size_t kBudget = 1 << 21;  // doubles in the padded buffers
  const std::size_t per_sample = static_cast<std::size_t>(h + 2) * (w + 2) * (c + o);
  return static_cast<int>(std::max<std::size_t>(1, kBudget / per_sample));
}

}  // namespace

Var conv2d(Graph& g, Var x, Var w, Var b) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  const Tensor& bv = g.value(b);
  require_rank("conv2d(x)", xv, 4);
  require_rank("conv2d(w)", wv, 4);
  require(wv.dim(1) == 3 && wv.dim(2) == 3 && wv.dim(3) == xv.dim(3), "conv2d", xv, wv);
  require(bv.rank() == 1 && bv.dim(0) == wv.dim(0), "conv2d(bias)", wv, bv);
  const int n = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), c = xv.dim(3), o = wv.dim(0);
  const int chunk = conv_chunk(h, wd, c, o);
  Tensor y({n, h, wd, o});
  const auto wm = as_matrix(wv, o, 9 * c);
  const ConstVecMap bias(bv.ptr(), o);
  RowMat xp, yp;
  for (int first = 0; first < n; first += chunk) {
    const PaddedChunk pc{std::min(chunk, n - first), h, wd, c};
    pad_chunk(xv, first, pc, xp);
    yp.setZero(pc.rows(), o);
    for (int tap = 0; tap < 9; ++tap) {
      yp.noalias() += xp.middleRows(pc.offset(tap), pc.rows()) * wm.middleCols(tap * c, c).transpose();
    }
    for (int s = 0; s < pc.count; ++s) {
      for (int yy = 0; yy < h; ++yy) {
        MatMap dst(y.ptr() + ((static_cast<std::size_t>(first + s) * h + yy) * wd) * o, wd, o);
        dst = yp.middleRows(static_cast<Eigen::Index>(out_row(pc, s, yy, 0)), wd);
        dst.rowwise() += bias.transpose();
      }
    }
  }
  const Var out = next_var(g);
  return g.record(std::move(y), {x, w, b}, [x, w, b, out, n, h, wd, c, o, chunk](Graph& g) {
    const Tensor& gy = g.grad(out);
    const bool need_x = g.requires_grad(x);
    const bool need_w = g.requires_grad(w);
    if (g.requires_grad(b)) {
      VecMap(g.grad(b).ptr(), o) += as_matrix(gy, n * h * wd, o).colwise().sum().transpose();
    }
    if (!need_x && !need_w) return;
    const auto wm = as_matrix(g.value(w), o, 9 * c);
    RowMat xp, gyp, gxp;
    for (int first = 0; first < n; first += chunk) {
      const PaddedChunk pc{std::min(chunk, n - first), h, wd, c};
      gyp.setZero(pc.rows(), o);
      for (int s = 0; s < pc.count; ++s) {
        for (int yy = 0; yy < h; ++yy) {
          gyp.middleRows(static_cast<Eigen::Index>(out_row(pc, s, yy, 0)), wd) =
              as_matrix(gy, n * h * wd, o).middleRows((static_cast<Eigen::Index>(first + s) * h + yy) * wd, wd);
        }
      }
      if (need_w) {
        pad_chunk(g.value(x), first, pc, xp);
        auto gw = as_matrix(g.grad(w), o, 9 * c);
        for (int tap = 0; tap < 9; ++tap) {
          gw.middleCols(tap * c, c).noalias() += gyp.transpose() * xp.middleRows(pc.offset(tap), pc.rows());
        }
      }
      if (need_x) {
        gxp.setZero(pc.rows() + pc.tail(), c);
        for (int tap = 0; tap < 9; ++tap) {
          gxp.middleRows(pc.offset(tap), pc.rows()).noalias() += gyp * wm.middleCols(tap * c, c);
        }
        Tensor& gx = g.grad(x);
        for (int s = 0; s < pc.count; ++s) {
          for (int yy = 0; yy < h; ++yy) {
            MatMap dst(gx.ptr() + ((static_cast<std::size_t>(first + s) * h + yy) * wd) * c, wd, c);
            dst += gxp.middleRows(static_cast<Eigen::Index>(pc.padded_index(s, yy, 0)), wd);
          }
        }
      }
    }
  });
}

Var maxpool2x2(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  require_rank("maxpool2x2", xv, 4);
  const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ContractViolation(fmt::format("maxpool2x2: spatial size of {} is not even", xv.shape_str()));
  }
  const int ho = h / 2, wo = w / 2;
  Tensor y({n, ho, wo, c});
  auto argmax = std::make_shared<std::vector<std::size_t>>(y.size());
  std::size_t k = 0;
  for (int s = 0; s < n; ++s) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        for (int ch = 0; ch < c; ++ch, ++k) {
          std::size_t best = 0;
          double best_v = -std::numeric_limits<double>::infinity();
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx =
                  ((static_cast<std::size_t>(s) * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
              if (xv[idx] > best_v) {
                best_v = xv[idx];
                best = idx;
              }
            }
          }
          y[k] = best_v;
          (*argmax)[k] = best;
        }
      }
    }
  }
  const Var out = next_var(g);
  return g.record(std::move(y), {x}, [x, out, argmax](Graph& g) {
    const Tensor& gy = g.grad(out);
    Tensor& gx = g.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[(*argmax)[i]] += gy[i];
  });
}

Var softmax_rows(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  require_rank("softmax_rows", xv, 2);
  const int rows = xv.dim(0), cols = xv.dim(1);
  Tensor y(xv.shape());
  for (int r = 0; r < rows; ++r) {
    const double* in = xv.ptr() + static_cast<std::size_t>(r) * cols;
    double* o = y.ptr() + static_cast<std::size_t>(r) * cols;
    const double m = *std::max_element(in, in + cols);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) z += (o[j] = std::exp(in[j] - m));
    for (int j = 0; j < cols; ++j) o[j] /= z;
  }
  const Var out = next_var(g);
  return g.record(std::move(y), {x}, [x, out, rows, cols](Graph& g) {
    const Tensor& yv = g.value(out);
    const Tensor& gy = g.grad(out);
    Tensor& gx = g.grad(x);
    for (int r = 0; r < rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * cols;
      double dot = 0.0;
      for (int j = 0; j < cols; ++j) dot += gy[base + j] * yv[base + j];
      for (int j = 0; j < cols; ++j) gx[base + j] += yv[base + j] * (gy[base + j] - dot);
    }
  });
}

Var embedding(Graph& g, Var table, const std::vector<int>& ids) {
  const Tensor& t = g.value(table);
  require_rank("embedding", t, 2);
  const int vocab = t.dim(0), d = t.dim(1);
  Tensor y({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw ContractViolation(fmt::format("embedding: id {} outside vocabulary of {}", ids[i], vocab));
    }
    std::copy_n(t.ptr() + static_cast<std::size_t>(ids[i]) * d, d, y.ptr() + i * d);
  }
  const Var out = next_var(g);
  return g.record(std::move(y), {table}, [table, out, ids, d](Graph& g) {
    const Tensor& gy = g.grad(out);
    Tensor& gt = g.grad(table);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (int j = 0; j < d; ++j) gt[static_cast<std::size_t>(ids[i]) * d + j] += gy[i * d + j];
    }
  });
}

Var gather_rows(Graph& g, Var x, const std::vector<int>& idx) {
  const Tensor& xv = g.value(x);
  require_rank("gather_rows", xv, 2);
  const int rows = xv.dim(0), d = xv.dim(1);
  Tensor y({static_cast<int>(idx.size()), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= rows) {
      throw ContractViolation(fmt::format("gather_rows: row {} outside {}", idx[i], xv.shape_str()));
    }
    std::copy_n(xv.ptr() + static_cast<std::size_t>(idx[i]) * d, d, y.ptr() + i * d);
  }
  const Var out = next_var(g);
  return g.record(std::move(y), {x}, [x, out, idx, d](Graph& g) {
    const Tensor& gy = g.grad(out);
    Tensor& gx = g.grad(x);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (int j = 0; j < d; ++j) gx[static_cast<std::size_t>(idx[i]) * d + j] += gy[i * d + j];
    }
  });
}

Var concat_cols(Graph& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: nothing to concatenate");
  const Tensor& first = g.value(parts.front());
  require_rank("concat_cols", first, 2);
  const int rows = first.dim(0);
  std::vector<int> widths;
  int total = 0;
  for (Var p : parts) {
    const Tensor& t = g.value(p);
    require_rank("concat_cols", t, 2);
    require(t.dim(0) == rows, "concat_cols", first, t);
    widths.push_back(t.dim(1));
    total += t.dim(1);
  }
  Tensor y({rows, total});
  int offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    as_matrix(y, rows, total).middleCols(offset, widths[k]) = as_matrix(g.value(parts[k]), rows, widths[k]);
    offset += widths[k];
  }
  const Var out = next_var(g);
  return g.record(std::move(y), parts, [parts, widths, rows, total, out](Graph& g) {
    const auto gy = as_matrix(static_cast<const Tensor&>(g.grad(out)), rows, total);
    int offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (g.requires_grad(parts[k])) {
        as_matrix(g.grad(parts[k]), rows, widths[k]) += gy.middleCols(offset, widths[k]);
      }
      offset += widths[k];
    }
  });
}

Var layer_norm(Graph& g, Var x, Var gain, Var bias) {
  constexpr double kEps = 1e-5;
  const Tensor& xv = g.value(x);
  require_rank("layer_norm", xv, 2);
  const int rows = xv.dim(0), d = xv.dim(1);
  require(g.value(gain).size() == static_cast<std::size_t>(d), "layer_norm(gain)", xv, g.value(gain));
  require(g.value(bias).size() == static_cast<std::size_t>(d), "layer_norm(bias)", xv, g.value(bias));
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor y(xv.shape());
  const Tensor& gv = g.value(gain);
  const Tensor& bv = g.value(bias);
  for (int r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xv[base + j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xv[base + j] - mu) * (xv[base + j] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + kEps);
    (*inv_std)[r] = is;
    for (int j = 0; j < d; ++j) {
      const double nx = (xv[base + j] - mu) * is;
      (*xhat)[base + j] = nx;
      y[base + j] = nx * gv[j] + bv[j];
    }
  }
  const Var out = next_var(g);
  return g.record(std::move(y), {x, gain, bias}, [x, gain, bias, out, xhat, inv_std, rows, d](Graph& g) {
    const Tensor& gy = g.grad(out);
    const Tensor& gv = g.value(gain);
    if (g.requires_grad(gain)) {
      Tensor& gg = g.grad(gain);
      for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < d; ++j) gg[j] += gy[static_cast<std::size_t>(r) * d + j] * (*xhat)[static_cast<std::size_t>(r) * d + j];
      }
    }
    if (g.requires_grad(bias)) {
      Tensor& gb = g.grad(bias);
      for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < d; ++j) gb[j] += gy[static_cast<std::size_t>(r) * d + j];
      }
    }
    if (g.requires_grad(x)) {
      Tensor& gx = g.grad(x);
      std::vector<double> dxhat(d);
      for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * d;
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
          dxhat[j] = gy[base + j] * gv[j];
          m1 += dxhat[j];
          m2 += dxhat[j] * (*xhat)[base + j];
        }
        m1 /= d;
        m2 /= d;
        for (int j = 0; j < d; ++j) {
          gx[base + j] += (*inv_std)[r] * (dxhat[j] - m1 - (*xhat)[base + j] * m2);
        }
      }
    }
  });
}

Var self_attention(Graph& g, Var q, Var k, Var v, int seq_len, int heads,
                   const std::vector<bool>& valid, Tensor* probs_out) {
  const Tensor& qv = g.value(q);
  const Tensor& kv = g.value(k);
  const Tensor& vv = g.value(v);
  require_rank("self_attention(q)", qv, 2);
  require(qv.shape() == kv.shape(), "self_attention(q,k)", qv, kv);
  require(qv.shape() == vv.shape(), "self_attention(q,v)", qv, vv);
  const int rows = qv.dim(0), d = qv.dim(1);
  if (seq_len <= 0 || rows % seq_len != 0 || heads <= 0 || d % heads != 0 ||
      valid.size() != static_cast<std::size_t>(rows)) {
    throw ContractViolation(fmt::format("self_attention: {} rows, seq_len {}, {} heads, {} mask entries",
                                        rows, seq_len, heads, valid.size()));
  }
  const int batch = rows / seq_len, dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<Tensor>(std::vector<int>{batch, heads, seq_len, seq_len});
  Tensor y({rows, d});
  const auto qm = as_matrix(qv, rows, d);
  const auto km = as_matrix(kv, rows, d);
  const auto vm = as_matrix(vv, rows, d);
  auto ym = as_matrix(y, rows, d);
  for (int bi = 0; bi < batch; ++bi) {
    const int r0 = bi * seq_len;
    bool any = false;
    for (int j = 0; j < seq_len; ++j) any = any || valid[r0 + j];
    if (!any) throw ContractViolation(fmt::format("self_attention: sequence {} has no valid tokens", bi));
    for (int hd = 0; hd < heads; ++hd) {
      MatMap p(probs->ptr() + (static_cast<std::size_t>(bi) * heads + hd) * seq_len * seq_len, seq_len, seq_len);
      RowMat s = qm.block(r0, hd * dh, seq_len, dh) * km.block(r0, hd * dh, seq_len, dh).transpose() * inv_sqrt;
      for (int i = 0; i < seq_len; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < seq_len; ++j) {
          if (valid[r0 + j]) m = std::max(m, s(i, j));
        }
        double z = 0.0;
        for (int j = 0; j < seq_len; ++j) {
          p(i, j) = valid[r0 + j] ? std::exp(s(i, j) - m) : 0.0;
          z += p(i, j);
        }
        for (int j = 0; j < seq_len; ++j) p(i, j) /= z;
      }
      ym.block(r0, hd * dh, seq_len, dh).noalias() = p * vm.block(r0, hd * dh, seq_len, dh);
    }
  }
  if (probs_out != nullptr) *probs_out = *probs;
  const Var out = next_var(g);
  return g.record(std::move(y), {q, k, v}, [q, k, v, out, probs, batch, heads, seq_len, dh, d, rows, inv_sqrt](Graph& g) {
    const auto gy = as_matrix(static_cast<const Tensor&>(g.grad(out)), rows, d);
    const auto qm = as_matrix(g.value(q), rows, d);
    const auto km = as_matrix(g.value(k), rows, d);
    const auto vm = as_matrix(g.value(v), rows, d);
    RowMat gq = RowMat::Zero(rows, d), gk = RowMat::Zero(rows, d), gv = RowMat::Zero(rows, d);
    for (int bi = 0; bi < batch; ++bi) {
      const int r0 = bi * seq_len;
      for (int hd = 0; hd < heads; ++hd) {
        const ConstMatMap p(probs->ptr() + (static_cast<std::size_t>(bi) * heads + hd) * seq_len * seq_len, seq_len, seq_len);
        const auto go = gy.block(r0, hd * dh, seq_len, dh);
        gv.block(r0, hd * dh, seq_len, dh).noalias() += p.transpose() * go;
        RowMat dp = go * vm.block(r0, hd * dh, seq_len, dh).transpose();
        RowMat ds(seq_len, seq_len);
        for (int i = 0; i < seq_len; ++i) {
          double dot = 0.0;
          for (int j = 0; j < seq_len; ++j) dot += dp(i, j) * p(i, j);
          for (int j = 0; j < seq_len; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * inv_sqrt;
        }
        gq.block(r0, hd * dh, seq_len, dh).noalias() += ds * km.block(r0, hd * dh, seq_len, dh);
        gk.block(r0, hd * dh, seq_len, dh).noalias() += ds.transpose() * qm.block(r0, hd * dh, seq_len, dh);
      }
    }
    if (g.requires_grad(q)) as_matrix(g.grad(q), rows, d) += gq;
    if (g.requires_grad(k)) as_matrix(g.grad(k), rows, d) += gk;
    if (g.requires_grad(v)) as_matrix(g.grad(v), rows, d) += gv;
  });
}

Var masked_mean_rows(Graph& g, Var x, int seq_len, const std::vector<bool>& valid) {
  const Tensor& xv = g.value(x);
  require_rank("masked_mean_rows", xv, 2);
  const int rows = xv.dim(0), d = xv.dim(1);
  if (seq_len <= 0 || rows % seq_len != 0 || valid.size() != static_cast<std::size_t>(rows)) {
    throw ContractViolation(fmt::format("masked_mean_rows: {} rows with seq_len {}", rows, seq_len));
  }
  const int batch = rows / seq_len;
  auto weights = std::make_shared<std::vector<double>>(rows, 0.0);
  Tensor y({batch, d});
  for (int bi = 0; bi < batch; ++bi) {
    int count = 0;
    for (int j = 0; j < seq_len; ++j) count += valid[bi * seq_len + j] ? 1 : 0;
    if (count == 0) throw ContractViolation(fmt::format("masked_mean_rows: sequence {} is empty", bi));
    for (int j = 0; j < seq_len; ++j) {
      const int r = bi * seq_len + j;
      if (!valid[r]) continue;
      (*weights)[r] = 1.0 / count;
      for (int c = 0; c < d; ++c) y[static_cast<std::size_t>(bi) * d + c] += xv[static_cast<std::size_t>(r) * d + c];
    }
    for (int c = 0; c < d; ++c) y[static_cast<std::size_t>(bi) * d + c] /= count;
  }
  const Var out = next_var(g);
  return g.record(std::move(y), {x}, [x, out, weights, seq_len, d, rows](Graph& g) {
    const Tensor& gy = g.grad(out);
    Tensor& gx = g.grad(x);
    for (int r = 0; r < rows; ++r) {
      const double wgt = (*weights)[r];
      if (wgt == 0.0) continue;
      const std::size_t bi = static_cast<std::size_t>(r / seq_len);
      for (int c = 0; c < d; ++c) gx[static_cast<std::size_t>(r) * d + c] += wgt * gy[bi * d + c];
    }
  });
}

Var affine_cols(Graph& g, Var x, const std::vector<double>& scale, const std::vector<double>& shift) {
  const Tensor& xv = g.value(x);
  require_rank("affine_cols", xv, 2);
  const int rows = xv.dim(0), cols = xv.dim(1);
  if (scale.size() != static_cast<std::size_t>(cols) || shift.size() != static_cast<std::size_t>(cols)) {
    throw ContractViolation(fmt::format("affine_cols: {} columns, {} scales, {} shifts", cols,
                                        scale.size(), shift.size()));
  }
  Tensor y(xv.shape());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      y[i] = xv[i] * scale[c] + shift[c];
    }
  }
  const Var out = next_var(g);
  return g.record(std::move(y), {x}, [x, out, scale, rows, cols](Graph& g) {
    const Tensor& gy = g.grad(out);
    Tensor& gx = g.grad(x);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * cols + c;
        gx[i] += gy[i] * scale[c];
      }
    }
  });
}

Var gaussian_log_prob(Graph& g, Var mean, const Tensor& actions, double sigma) {
  const Tensor& mv = g.value(mean);
  require_rank("gaussian_log_prob", mv, 2);
  require(mv.shape() == actions.shape(), "gaussian_log_prob", mv, actions);
  if (!(sigma > 0.0)) throw ContractViolation("gaussian_log_prob: sigma must be positive");
  const int n = mv.dim(0), d = mv.dim(1);
  const double norm = -d * (std::log(sigma) + 0.5 * std::log(2.0 * std::numbers::pi));
  const double inv_var = 1.0 / (sigma * sigma);
  Tensor y({n});
  for (int r = 0; r < n; ++r) {
    double acc = 0.0;
    for (int c = 0; c < d; ++c) {
      const double diff = actions[static_cast<std::size_t>(r) * d + c] - mv[static_cast<std::size_t>(r) * d + c];
      acc += diff * diff;
    }
    y[r] = -0.5 * acc * inv_var + norm;
  }
  const Var out = next_var(g);
  return g.record(std::move(y), {mean}, [mean, out, actions, inv_var, n, d](Graph& g) {
    const Tensor& gy = g.grad(out);
    const Tensor& mv = g.value(mean);
    Tensor& gm = g.grad(mean);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < d; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * d + c;
        gm[i] += gy[r] * (actions[i] - mv[i]) * inv_var;
      }
    }
  });
}

}  // namespace deskbot::nn
