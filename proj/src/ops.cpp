#include "staf/ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace staf {

LinearLayer::LinearLayer(Tensor w, Tensor b) : weight(std::move(w)), bias(std::move(b)) {
  require(weight.rank() == 2, "linear weight must be a matrix");
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(0),
          "linear bias length must equal the weight row count");
  require(weight.all_finite() && bias.all_finite(), "linear layer weights must be finite");
}

LinearVars as_constant(const LinearLayer& layer) {
  return LinearVars{constant(layer.weight), constant(layer.bias)};
}

namespace ops {

namespace {

using Eigen::Map;
using MutMat = Map<RowMatXd>;
using ConstMat = Map<const RowMatXd>;

std::vector<double> buf(std::int64_t n) {
  return std::vector<double>(static_cast<std::size_t>(n), 0.0);
}

MutMat mut(std::vector<double>& v, std::int64_t r, std::int64_t c) {
  return MutMat(v.data(), r, c);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require(a.value.same_dims(b.value), "add: shape mismatch " + dims_str(a.value) + " vs " + dims_str(b.value));
  auto d = buf(a.value.size());
  const double* pa = a.value.data();
  const double* pb = b.value.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = pa[i] + pb[i];
  return make_op(Tensor(a.value.dims(), std::move(d)), {&a, &b},
                 [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require(a.value.same_dims(b.value), "sub: shape mismatch " + dims_str(a.value) + " vs " + dims_str(b.value));
  auto d = buf(a.value.size());
  const double* pa = a.value.data();
  const double* pb = b.value.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = pa[i] - pb[i];
  return make_op(Tensor(a.value.dims(), std::move(d)), {&a, &b}, [](const Tensor& g) {
    auto n = buf(g.size());
    const double* pg = g.data();
    for (std::size_t i = 0; i < n.size(); ++i) n[i] = -pg[i];
    return std::vector<Tensor>{g, Tensor(g.dims(), std::move(n))};
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.value.same_dims(b.value), "mul: shape mismatch " + dims_str(a.value) + " vs " + dims_str(b.value));
  auto d = buf(a.value.size());
  const double* pa = a.value.data();
  const double* pb = b.value.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = pa[i] * pb[i];
  Tensor av = a.value, bv = b.value;
  return make_op(Tensor(a.value.dims(), std::move(d)), {&a, &b}, [av, bv](const Tensor& g) {
    auto da = buf(g.size());
    auto db = buf(g.size());
    const double* pg = g.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
      da[i] = pg[i] * bv.data()[i];
      db[i] = pg[i] * av.data()[i];
    }
    return std::vector<Tensor>{Tensor(g.dims(), std::move(da)), Tensor(g.dims(), std::move(db))};
  });
}

Var scale(const Var& a, double c) {
  auto d = buf(a.value.size());
  const double* pa = a.value.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = c * pa[i];
  return make_op(Tensor(a.value.dims(), std::move(d)), {&a}, [c](const Tensor& g) {
    auto da = buf(g.size());
    const double* pg = g.data();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] = c * pg[i];
    return std::vector<Tensor>{Tensor(g.dims(), std::move(da))};
  });
}

Var tanh(const Var& a) {
  auto d = buf(a.value.size());
  const double* pa = a.value.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::tanh(pa[i]);
  Tensor out(a.value.dims(), std::move(d));
  Tensor ov = out;
  return make_op(std::move(out), {&a}, [ov](const Tensor& g) {
    auto da = buf(g.size());
    const double* pg = g.data();
    const double* po = ov.data();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] = pg[i] * (1.0 - po[i] * po[i]);
    return std::vector<Tensor>{Tensor(g.dims(), std::move(da))};
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  const double* pa = a.value.data();
  for (std::int64_t i = 0; i < a.value.size(); ++i) s += pa[i];
  Tensor av = a.value;
  return make_op(Tensor::scalar(s), {&a}, [av](const Tensor& g) {
    return std::vector<Tensor>{Tensor::full(av.dims(), g.at(0))};
  });
}

Var norm2(const Var& a) {
  double s = 0.0;
  const double* pa = a.value.data();
  for (std::int64_t i = 0; i < a.value.size(); ++i) s += pa[i] * pa[i];
  double n = std::sqrt(s);
  Tensor av = a.value;
  // Subgradient 0 at the kink; callers that need a gradient keep residuals
  // away from exactly zero.
  return make_op(Tensor::scalar(n), {&a}, [av, n](const Tensor& g) {
    auto da = buf(av.size());
    if (n > 0.0) {
      const double f = g.at(0) / n;
      for (std::size_t i = 0; i < da.size(); ++i) da[i] = f * av.data()[i];
    }
    return std::vector<Tensor>{Tensor(av.dims(), std::move(da))};
  });
}

Var average(const std::vector<Var>& xs) {
  require(!xs.empty(), "average: needs at least one input");
  for (const Var& x : xs)
    require(x.value.same_dims(xs[0].value), "average: shape mismatch across inputs");
  const double inv = 1.0 / static_cast<double>(xs.size());
  auto d = buf(xs[0].value.size());
  for (const Var& x : xs) {
    const double* px = x.value.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += px[i];
  }
  for (auto& v : d) v *= inv;
  std::vector<const Var*> parents;
  parents.reserve(xs.size());
  for (const Var& x : xs) parents.push_back(&x);
  const std::size_t k = xs.size();
  return make_op(Tensor(xs[0].value.dims(), std::move(d)), parents, [inv, k](const Tensor& g) {
    auto share = buf(g.size());
    const double* pg = g.data();
    for (std::size_t i = 0; i < share.size(); ++i) share[i] = inv * pg[i];
    Tensor t(g.dims(), std::move(share));
    return std::vector<Tensor>(k, t);
  });
}

Var reshape(const Var& a, std::vector<std::int64_t> dims) {
  Tensor out = a.value.reshaped(std::move(dims));
  auto in_dims = a.value.dims();
  return make_op(std::move(out), {&a}, [in_dims](const Tensor& g) {
    return std::vector<Tensor>{g.reshaped(in_dims)};
  });
}

Var concat(const std::vector<Var>& xs) {
  require(!xs.empty(), "concat: needs at least one input");
  std::int64_t total = 0;
  for (const Var& x : xs) {
    require(x.value.rank() == 1, "concat: rank-1 inputs only");
    total += x.value.size();
  }
  auto d = buf(total);
  std::int64_t off = 0;
  std::vector<std::int64_t> lens;
  for (const Var& x : xs) {
    std::copy(x.value.data(), x.value.data() + x.value.size(), d.begin() + off);
    lens.push_back(x.value.size());
    off += x.value.size();
  }
  std::vector<const Var*> parents;
  for (const Var& x : xs) parents.push_back(&x);
  return make_op(Tensor({total}, std::move(d)), parents, [lens](const Tensor& g) {
    std::vector<Tensor> out;
    std::int64_t o = 0;
    for (auto len : lens) {
      out.emplace_back(std::vector<std::int64_t>{len},
                       std::vector<double>(g.data() + o, g.data() + o + len));
      o += len;
    }
    return out;
  });
}

Var slice(const Var& a, std::int64_t offset, std::int64_t len) {
  require(a.value.rank() == 1, "slice: rank-1 input only");
  require(offset >= 0 && len > 0 && offset + len <= a.value.size(), "slice: range out of bounds");
  std::vector<double> d(a.value.data() + offset, a.value.data() + offset + len);
  auto n = a.value.size();
  return make_op(Tensor({len}, std::move(d)), {&a}, [offset, len, n](const Tensor& g) {
    auto da = buf(n);
    std::copy(g.data(), g.data() + len, da.begin() + offset);
    return std::vector<Tensor>{Tensor({n}, std::move(da))};
  });
}

Var row(const Var& m, std::int64_t i) {
  require(m.value.rank() == 2, "row: matrix input required");
  const auto r = m.value.dim(0), c = m.value.dim(1);
  require(i >= 0 && i < r, "row: index out of range");
  std::vector<double> d(m.value.data() + i * c, m.value.data() + (i + 1) * c);
  return make_op(Tensor({c}, std::move(d)), {&m}, [i, r, c](const Tensor& g) {
    auto dm = buf(r * c);
    std::copy(g.data(), g.data() + c, dm.begin() + i * c);
    return std::vector<Tensor>{Tensor({r, c}, std::move(dm))};
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  require(!rows.empty(), "stack_rows: needs at least one row");
  const auto c = rows[0].value.size();
  for (const Var& x : rows)
    require(x.value.rank() == 1 && x.value.size() == c, "stack_rows: equal-length vectors required");
  const auto k = static_cast<std::int64_t>(rows.size());
  auto d = buf(k * c);
  for (std::int64_t i = 0; i < k; ++i)
    std::copy(rows[static_cast<std::size_t>(i)].value.data(),
              rows[static_cast<std::size_t>(i)].value.data() + c, d.begin() + i * c);
  std::vector<const Var*> parents;
  for (const Var& x : rows) parents.push_back(&x);
  return make_op(Tensor({k, c}, std::move(d)), parents, [k, c](const Tensor& g) {
    std::vector<Tensor> out;
    for (std::int64_t i = 0; i < k; ++i)
      out.emplace_back(std::vector<std::int64_t>{c},
                       std::vector<double>(g.data() + i * c, g.data() + (i + 1) * c));
    return out;
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require(a.value.rank() == 2 && b.value.rank() == 2 && a.value.dim(0) == b.value.dim(0),
          "concat_cols: row counts must match");
  const auto r = a.value.dim(0), p = a.value.dim(1), q = b.value.dim(1);
  auto d = buf(r * (p + q));
  for (std::int64_t i = 0; i < r; ++i) {
    std::copy(a.value.data() + i * p, a.value.data() + (i + 1) * p, d.begin() + i * (p + q));
    std::copy(b.value.data() + i * q, b.value.data() + (i + 1) * q, d.begin() + i * (p + q) + p);
  }
  return make_op(Tensor({r, p + q}, std::move(d)), {&a, &b}, [r, p, q](const Tensor& g) {
    auto da = buf(r * p);
    auto db = buf(r * q);
    for (std::int64_t i = 0; i < r; ++i) {
      std::copy(g.data() + i * (p + q), g.data() + i * (p + q) + p, da.begin() + i * p);
      std::copy(g.data() + i * (p + q) + p, g.data() + (i + 1) * (p + q), db.begin() + i * q);
    }
    return std::vector<Tensor>{Tensor({r, p}, std::move(da)), Tensor({r, q}, std::move(db))};
  });
}

Var transpose(const Var& a) {
  require(a.value.rank() == 2, "transpose: matrix input required");
  const auto r = a.value.dim(0), c = a.value.dim(1);
  auto d = buf(r * c);
  mut(d, c, r) = a.value.mat().transpose();
  return make_op(Tensor({c, r}, std::move(d)), {&a}, [r, c](const Tensor& g) {
    auto da = buf(r * c);
    mut(da, r, c) = g.mat().transpose();
    return std::vector<Tensor>{Tensor({r, c}, std::move(da))};
  });
}

Var matmul(const Var& a, const Var& b) {
  require(a.value.rank() == 2 && b.value.rank() == 2 && a.value.dim(1) == b.value.dim(0),
          "matmul: inner dims must agree, got " + dims_str(a.value) + " x " + dims_str(b.value));
  const auto m = a.value.dim(0), k = a.value.dim(1), n = b.value.dim(1);
  auto d = buf(m * n);
  mut(d, m, n).noalias() = a.value.mat() * b.value.mat();
  Tensor av = a.value, bv = b.value;
  return make_op(Tensor({m, n}, std::move(d)), {&a, &b}, [av, bv, m, k, n](const Tensor& g) {
    auto da = buf(m * k);
    auto db = buf(k * n);
    mut(da, m, k).noalias() = g.mat() * bv.mat().transpose();
    mut(db, k, n).noalias() = av.mat().transpose() * g.mat();
    return std::vector<Tensor>{Tensor({m, k}, std::move(da)), Tensor({k, n}, std::move(db))};
  });
}

Var add_rowvec(const Var& m, const Var& v) {
  require(m.value.rank() == 2 && v.value.rank() == 1 && m.value.dim(1) == v.value.dim(0),
          "add_rowvec: vector length must equal column count");
  const auto r = m.value.dim(0), c = m.value.dim(1);
  auto d = buf(r * c);
  mut(d, r, c) = m.value.mat().rowwise() + v.value.vec().transpose();
  return make_op(Tensor({r, c}, std::move(d)), {&m, &v}, [r, c](const Tensor& g) {
    auto dv = buf(c);
    Map<Eigen::VectorXd>(dv.data(), c) = g.mat().colwise().sum().transpose();
    return std::vector<Tensor>{g, Tensor({c}, std::move(dv))};
  });
}

Var linear(const Var& weight, const Var& bias, const Var& x) {
  require(weight.value.rank() == 2, "linear: weight must be a matrix");
  require(bias.value.rank() == 1 && bias.value.dim(0) == weight.value.dim(0),
          "linear: bias length must equal output width");
  const auto out_w = weight.value.dim(0), in_w = weight.value.dim(1);
  if (x.value.rank() == 1) {
    require(x.value.dim(0) == in_w, "linear: input width mismatch, got " + dims_str(x.value));
    auto d = buf(out_w);
    Map<Eigen::VectorXd>(d.data(), out_w).noalias() =
        weight.value.mat() * x.value.vec() + bias.value.vec();
    Tensor wv = weight.value, xv = x.value;
    return make_op(Tensor({out_w}, std::move(d)), {&weight, &bias, &x},
                   [wv, xv, out_w, in_w](const Tensor& g) {
                     auto dw = buf(out_w * in_w);
                     auto dx = buf(in_w);
                     mut(dw, out_w, in_w).noalias() = g.vec() * xv.vec().transpose();
                     Map<Eigen::VectorXd>(dx.data(), in_w).noalias() =
                         wv.mat().transpose() * g.vec();
                     return std::vector<Tensor>{Tensor({out_w, in_w}, std::move(dw)), g,
                                                Tensor({in_w}, std::move(dx))};
                   });
  }
  require(x.value.rank() == 2 && x.value.dim(1) == in_w,
          "linear: input width mismatch, got " + dims_str(x.value));
  const auto n = x.value.dim(0);
  auto d = buf(n * out_w);
  mut(d, n, out_w).noalias() = x.value.mat() * weight.value.mat().transpose();
  mut(d, n, out_w).rowwise() += bias.value.vec().transpose();
  Tensor wv = weight.value, xv = x.value;
  return make_op(Tensor({n, out_w}, std::move(d)), {&weight, &bias, &x},
                 [wv, xv, n, out_w, in_w](const Tensor& g) {
                   auto dw = buf(out_w * in_w);
                   auto db = buf(out_w);
                   auto dx = buf(n * in_w);
                   mut(dw, out_w, in_w).noalias() = g.mat().transpose() * xv.mat();
                   Map<Eigen::VectorXd>(db.data(), out_w) = g.mat().colwise().sum().transpose();
                   mut(dx, n, in_w).noalias() = g.mat() * wv.mat();
                   return std::vector<Tensor>{Tensor({out_w, in_w}, std::move(dw)),
                                              Tensor({out_w}, std::move(db)),
                                              Tensor({n, in_w}, std::move(dx))};
                 });
}

Var linear(const LinearLayer& layer, const Var& x) {
  Var w = constant(layer.weight);
  Var b = constant(layer.bias);
  return linear(w, b, x);
}

Var linear(const LinearVars& layer, const Var& x) { return linear(layer.weight, layer.bias, x); }

Var softmax_rows(const Var& m) {
  require(m.value.rank() == 2, "softmax_rows: matrix input required");
  require(m.value.all_finite(), "softmax_rows: input has non-finite entries");
  const auto r = m.value.dim(0), c = m.value.dim(1);
  auto d = buf(r * c);
  const double* pm = m.value.data();
  for (std::int64_t i = 0; i < r; ++i) {
    const double* x = pm + i * c;
    double mx = x[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      d[static_cast<std::size_t>(i * c + j)] = std::exp(x[j] - mx);
      s += d[static_cast<std::size_t>(i * c + j)];
    }
    for (std::int64_t j = 0; j < c; ++j) d[static_cast<std::size_t>(i * c + j)] /= s;
  }
  Tensor out({r, c}, std::move(d));
  Tensor ov = out;
  return make_op(std::move(out), {&m}, [ov, r, c](const Tensor& g) {
    auto dm = buf(r * c);
    for (std::int64_t i = 0; i < r; ++i) {
      const double* p = ov.data() + i * c;
      const double* gr = g.data() + i * c;
      double dot = 0.0;
      for (std::int64_t j = 0; j < c; ++j) dot += gr[j] * p[j];
      for (std::int64_t j = 0; j < c; ++j)
        dm[static_cast<std::size_t>(i * c + j)] = p[j] * (gr[j] - dot);
    }
    return std::vector<Tensor>{Tensor({r, c}, std::move(dm))};
  });
}

namespace {

struct SamplePoint {
  std::int64_t x0, x1, y0, y1;
  double fx, fy;
  double dux, dvy;  // d(u)/d(px), d(v)/d(py); zero when clamped or degenerate axis
};

SamplePoint locate(double px, double py, std::int64_t H, std::int64_t W) {
  SamplePoint s{};
  double u = (px + 1.0) * 0.5 * static_cast<double>(W - 1);
  double v = (py + 1.0) * 0.5 * static_cast<double>(H - 1);
  s.dux = (u >= 0.0 && u <= static_cast<double>(W - 1)) ? 0.5 * static_cast<double>(W - 1) : 0.0;
  s.dvy = (v >= 0.0 && v <= static_cast<double>(H - 1)) ? 0.5 * static_cast<double>(H - 1) : 0.0;
  u = std::clamp(u, 0.0, static_cast<double>(W - 1));
  v = std::clamp(v, 0.0, static_cast<double>(H - 1));
  if (W == 1) {
    s.x0 = s.x1 = 0;
    s.fx = 0.0;
    s.dux = 0.0;
  } else {
    s.x0 = std::min(static_cast<std::int64_t>(std::floor(u)), W - 2);
    s.x1 = s.x0 + 1;
    s.fx = u - static_cast<double>(s.x0);
  }
  if (H == 1) {
    s.y0 = s.y1 = 0;
    s.fy = 0.0;
    s.dvy = 0.0;
  } else {
    s.y0 = std::min(static_cast<std::int64_t>(std::floor(v)), H - 2);
    s.y1 = s.y0 + 1;
    s.fy = v - static_cast<double>(s.y0);
  }
  return s;
}

}  // namespace

Var bilinear_sample(const Var& map, const Var& pts) {
  require(map.value.rank() == 3, "bilinear_sample: map must be {C,H,W}");
  require(pts.value.rank() == 2 && pts.value.dim(1) == 2, "bilinear_sample: points must be {n,2}");
  require(pts.value.all_finite(), "bilinear_sample: points must be finite");
  const auto C = map.value.dim(0), H = map.value.dim(1), W = map.value.dim(2);
  const auto n = pts.value.dim(0);
  auto d = buf(n * C);
  const double* pm = map.value.data();
  const double* pp = pts.value.data();
  for (std::int64_t i = 0; i < n; ++i) {
    SamplePoint s = locate(pp[i * 2], pp[i * 2 + 1], H, W);
    for (std::int64_t c = 0; c < C; ++c) {
      const double* ch = pm + c * H * W;
      double top = (1.0 - s.fx) * ch[s.y0 * W + s.x0] + s.fx * ch[s.y0 * W + s.x1];
      double bot = (1.0 - s.fx) * ch[s.y1 * W + s.x0] + s.fx * ch[s.y1 * W + s.x1];
      d[static_cast<std::size_t>(i * C + c)] = (1.0 - s.fy) * top + s.fy * bot;
    }
  }
  Tensor mv = map.value, pv = pts.value;
  return make_op(Tensor({n, C}, std::move(d)), {&map, &pts}, [mv, pv, C, H, W, n](const Tensor& g) {
    auto dm = buf(C * H * W);
    auto dp = buf(n * 2);
    const double* pm = mv.data();
    const double* pp = pv.data();
    const double* pg = g.data();
    for (std::int64_t i = 0; i < n; ++i) {
      SamplePoint s = locate(pp[i * 2], pp[i * 2 + 1], H, W);
      double du = 0.0, dv = 0.0;
      for (std::int64_t c = 0; c < C; ++c) {
        const double gi = pg[i * C + c];
        double* dch = dm.data() + c * H * W;
        dch[s.y0 * W + s.x0] += gi * (1.0 - s.fy) * (1.0 - s.fx);
        dch[s.y0 * W + s.x1] += gi * (1.0 - s.fy) * s.fx;
        dch[s.y1 * W + s.x0] += gi * s.fy * (1.0 - s.fx);
        dch[s.y1 * W + s.x1] += gi * s.fy * s.fx;
        const double* ch = pm + c * H * W;
        du += gi * ((1.0 - s.fy) * (ch[s.y0 * W + s.x1] - ch[s.y0 * W + s.x0]) +
                    s.fy * (ch[s.y1 * W + s.x1] - ch[s.y1 * W + s.x0]));
        dv += gi * ((1.0 - s.fx) * (ch[s.y1 * W + s.x0] - ch[s.y0 * W + s.x0]) +
                    s.fx * (ch[s.y1 * W + s.x1] - ch[s.y0 * W + s.x1]));
      }
      dp[static_cast<std::size_t>(i * 2)] = du * s.dux;
      dp[static_cast<std::size_t>(i * 2 + 1)] = dv * s.dvy;
    }
    return std::vector<Tensor>{Tensor({C, H, W}, std::move(dm)), Tensor({n, 2}, std::move(dp))};
  });
}

Var deconv(const Var& weight, const Var& bias, const Var& map) {
  require(weight.value.rank() == 4 && weight.value.dim(2) == 4 && weight.value.dim(3) == 4,
          "deconv: weight must be {C_out,C_in,4,4}");
  require(map.value.rank() == 3, "deconv: map must be {C,H,W}");
  const auto Co = weight.value.dim(0), Ci = weight.value.dim(1);
  require(map.value.dim(0) == Ci,
          "deconv: channel mismatch, weight expects " + std::to_string(Ci) + " got " + dims_str(map.value));
  require(bias.value.rank() == 1 && bias.value.dim(0) == Co,
          "deconv: bias length must equal output channels");
  const auto H = map.value.dim(1), W = map.value.dim(2);
  const auto Ho = 2 * H, Wo = 2 * W;

  auto d = buf(Co * Ho * Wo);
  for (std::int64_t co = 0; co < Co; ++co)
    std::fill(d.begin() + co * Ho * Wo, d.begin() + (co + 1) * Ho * Wo, bias.value.at(co));
  auto outM = mut(d, Co, Ho * Wo);
  ConstMat inM(map.value.data(), Ci, H * W);

  RowMatXd tap(Co, Ci), contrib(Co, H * W);
  const double* pw = weight.value.data();
  for (std::int64_t ky = 0; ky < 4; ++ky) {
    for (std::int64_t kx = 0; kx < 4; ++kx) {
      for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t ci = 0; ci < Ci; ++ci)
          tap(co, ci) = pw[((co * Ci + ci) * 4 + ky) * 4 + kx];
      contrib.noalias() = tap * inM;
      for (std::int64_t iy = 0; iy < H; ++iy) {
        const std::int64_t oy = 2 * iy + ky - 1;
        if (oy < 0 || oy >= Ho) continue;
        for (std::int64_t ix = 0; ix < W; ++ix) {
          const std::int64_t ox = 2 * ix + kx - 1;
          if (ox < 0 || ox >= Wo) continue;
          outM.col(oy * Wo + ox) += contrib.col(iy * W + ix);
        }
      }
    }
  }

  Tensor wv = weight.value, mv = map.value;
  return make_op(Tensor({Co, Ho, Wo}, std::move(d)), {&weight, &bias, &map},
                 [wv, mv, Co, Ci, H, W, Ho, Wo](const Tensor& g) {
                   auto dw = buf(Co * Ci * 16);
                   auto db = buf(Co);
                   auto dm = buf(Ci * H * W);
                   ConstMat gM(g.data(), Co, Ho * Wo);
                   ConstMat inM(mv.data(), Ci, H * W);
                   Map<Eigen::VectorXd>(db.data(), Co) = gM.rowwise().sum();
                   auto dmM = mut(dm, Ci, H * W);
                   RowMatXd tap(Co, Ci), gathered(Co, H * W), dtap(Co, Ci);
                   const double* pw = wv.data();
                   for (std::int64_t ky = 0; ky < 4; ++ky) {
                     for (std::int64_t kx = 0; kx < 4; ++kx) {
                       gathered.setZero();
                       for (std::int64_t iy = 0; iy < H; ++iy) {
                         const std::int64_t oy = 2 * iy + ky - 1;
                         if (oy < 0 || oy >= Ho) continue;
                         for (std::int64_t ix = 0; ix < W; ++ix) {
                           const std::int64_t ox = 2 * ix + kx - 1;
                           if (ox < 0 || ox >= Wo) continue;
                           gathered.col(iy * W + ix) = gM.col(oy * Wo + ox);
                         }
                       }
                       for (std::int64_t co = 0; co < Co; ++co)
                         for (std::int64_t ci = 0; ci < Ci; ++ci)
                           tap(co, ci) = pw[((co * Ci + ci) * 4 + ky) * 4 + kx];
                       dmM.noalias() += tap.transpose() * gathered;
                       dtap.noalias() = gathered * inM.transpose();
                       for (std::int64_t co = 0; co < Co; ++co)
                         for (std::int64_t ci = 0; ci < Ci; ++ci)
                           dw[static_cast<std::size_t>(((co * Ci + ci) * 4 + ky) * 4 + kx)] =
                               dtap(co, ci);
                     }
                   }
                   return std::vector<Tensor>{Tensor({Co, Ci, 4, 4}, std::move(dw)),
                                              Tensor({Co}, std::move(db)),
                                              Tensor({Ci, H, W}, std::move(dm))};
                 });
}

namespace {

void skew(const double* w, Eigen::Matrix3d& K) {
  K << 0, -w[2], w[1], w[2], 0, -w[0], -w[1], w[0], 0;
}

}  // namespace

Var rodrigues_rows(const Var& aa) {
  require(aa.value.rank() == 2 && aa.value.dim(1) == 3, "rodrigues_rows: input must be {K,3}");
  require(aa.value.all_finite(), "rodrigues_rows: input must be finite");
  const auto K = aa.value.dim(0);
  auto d = buf(K * 9);
  const double* pa = aa.value.data();
  for (std::int64_t k = 0; k < K; ++k) {
    const double* w = pa + k * 3;
    const double th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    Eigen::Matrix3d Km;
    skew(w, Km);
    Eigen::Matrix3d R;
    if (th2 < 1e-16) {
      R = Eigen::Matrix3d::Identity() + Km;
    } else {
      const double th = std::sqrt(th2);
      const double a = std::sin(th) / th;
      const double b = (1.0 - std::cos(th)) / th2;
      R = Eigen::Matrix3d::Identity() + a * Km + b * (Km * Km);
    }
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) d[static_cast<std::size_t>(k * 9 + r * 3 + c)] = R(r, c);
  }
  Tensor av = aa.value;
  return make_op(Tensor({K, 9}, std::move(d)), {&aa}, [av, K](const Tensor& g) {
    auto da = buf(K * 3);
    const double* pa = av.data();
    const double* pg = g.data();
    for (std::int64_t k = 0; k < K; ++k) {
      const double* w = pa + k * 3;
      Eigen::Matrix3d G;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) G(r, c) = pg[k * 9 + r * 3 + c];
      const double th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
      if (th2 < 1e-16) {
        // dR/dw_i = skew(e_i) to first order
        da[static_cast<std::size_t>(k * 3 + 0)] = G(2, 1) - G(1, 2);
        da[static_cast<std::size_t>(k * 3 + 1)] = G(0, 2) - G(2, 0);
        da[static_cast<std::size_t>(k * 3 + 2)] = G(1, 0) - G(0, 1);
        continue;
      }
      const double th = std::sqrt(th2);
      const double a = std::sin(th) / th;
      const double b = (1.0 - std::cos(th)) / th2;
      const double da_dth = (th * std::cos(th) - std::sin(th)) / th2;
      const double db_dth = (th * std::sin(th) - 2.0 * (1.0 - std::cos(th))) / (th2 * th);
      Eigen::Matrix3d Km;
      skew(w, Km);
      const Eigen::Matrix3d K2 = Km * Km;
      for (int i = 0; i < 3; ++i) {
        double e[3] = {0, 0, 0};
        e[i] = 1.0;
        Eigen::Matrix3d Ei;
        skew(e, Ei);
        const double dth = w[i] / th;
        const Eigen::Matrix3d dR = da_dth * dth * Km + a * Ei + db_dth * dth * K2 +
                                   b * (Ei * Km + Km * Ei);
        da[static_cast<std::size_t>(k * 3 + i)] = (G.array() * dR.array()).sum();
      }
    }
    return std::vector<Tensor>{Tensor({K, 3}, std::move(da))};
  });
}

Var rowwise_transform(const Var& A, const Var& X) {
  require(A.value.rank() == 2 && A.value.dim(1) == 9, "rowwise_transform: A must be {n,9}");
  require(X.value.rank() == 2 && X.value.dim(1) == 3 && X.value.dim(0) == A.value.dim(0),
          "rowwise_transform: X must be {n,3} with matching n");
  const auto n = A.value.dim(0);
  auto d = buf(n * 3);
  const double* pa = A.value.data();
  const double* px = X.value.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const double* m = pa + i * 9;
    const double* x = px + i * 3;
    for (int r = 0; r < 3; ++r)
      d[static_cast<std::size_t>(i * 3 + r)] =
          m[r * 3] * x[0] + m[r * 3 + 1] * x[1] + m[r * 3 + 2] * x[2];
  }
  Tensor av = A.value, xv = X.value;
  return make_op(Tensor({n, 3}, std::move(d)), {&A, &X}, [av, xv, n](const Tensor& g) {
    auto da = buf(n * 9);
    auto dx = buf(n * 3);
    const double* pa = av.data();
    const double* px = xv.data();
    const double* pg = g.data();
    for (std::int64_t i = 0; i < n; ++i) {
      const double* m = pa + i * 9;
      const double* x = px + i * 3;
      const double* gr = pg + i * 3;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) da[static_cast<std::size_t>(i * 9 + r * 3 + c)] = gr[r] * x[c];
      for (int c = 0; c < 3; ++c)
        dx[static_cast<std::size_t>(i * 3 + c)] =
            m[c] * gr[0] + m[3 + c] * gr[1] + m[6 + c] * gr[2];
    }
    return std::vector<Tensor>{Tensor({n, 9}, std::move(da)), Tensor({n, 3}, std::move(dx))};
  });
}

Var project_xy(const Var& points, const Var& s, const Var& t) {
  require(points.value.rank() == 2 && points.value.dim(1) == 3, "project_xy: points must be {n,3}");
  require(s.value.size() == 1, "project_xy: s must be a scalar");
  require(t.value.rank() == 1 && t.value.dim(0) == 2, "project_xy: t must have length 2");
  const auto n = points.value.dim(0);
  auto d = buf(n * 2);
  const double* pp = points.value.data();
  const double sv = s.value.at(0);
  const double tx = t.value.at(0), ty = t.value.at(1);
  for (std::int64_t i = 0; i < n; ++i) {
    d[static_cast<std::size_t>(i * 2)] = sv * pp[i * 3] + tx;
    d[static_cast<std::size_t>(i * 2 + 1)] = sv * pp[i * 3 + 1] + ty;
  }
  Tensor pv = points.value;
  return make_op(Tensor({n, 2}, std::move(d)), {&points, &s, &t}, [pv, sv, n](const Tensor& g) {
    auto dp = buf(n * 3);
    auto ds = buf(1);
    auto dt = buf(2);
    const double* pg = g.data();
    const double* pp = pv.data();
    for (std::int64_t i = 0; i < n; ++i) {
      dp[static_cast<std::size_t>(i * 3)] = sv * pg[i * 2];
      dp[static_cast<std::size_t>(i * 3 + 1)] = sv * pg[i * 2 + 1];
      ds[0] += pg[i * 2] * pp[i * 3] + pg[i * 2 + 1] * pp[i * 3 + 1];
      dt[0] += pg[i * 2];
      dt[1] += pg[i * 2 + 1];
    }
    return std::vector<Tensor>{Tensor({n, 3}, std::move(dp)), Tensor({1}, std::move(ds)),
                               Tensor({2}, std::move(dt))};
  });
}

}  // namespace ops
}  // namespace staf
