#include "nbslu/graph.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace nbslu {

using EMat = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ECMat = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

const Tensor& Val::t() const { return tape->node(id).value(); }

Val Tape::leaf(Tensor* t) {
  Node n;
  n.external = t;
  nodes_.push_back(std::move(n));
  return Val{this, static_cast<int>(nodes_.size() - 1)};
}

Val Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Val{this, static_cast<int>(nodes_.size() - 1)};
}

Val Tape::emit(Tensor out, std::function<void(Tape&, Node&)> backward_fn) {
  Node n;
  n.owned = std::move(out);
  n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return Val{this, static_cast<int>(nodes_.size() - 1)};
}

std::vector<double>& Tape::adj_of(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.adj.size() != n.value().values.size()) n.adj.assign(n.value().values.size(), 0.0);
  return n.adj;
}

void Tape::backward(Val loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
  if (loss.t().size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  adj_of(loss.id)[0] = 1.0;
  touch(loss.id);
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.has_adj) continue;
    if (n.backward_fn) {
      n.backward_fn(*this, n);
    } else if (n.external && n.external->requires_grad) {
      n.external->ensure_grad();
      for (size_t k = 0; k < n.adj.size(); ++k) n.external->grad[k] += n.adj[k];
    }
  }
}

namespace {

void check_same_tape(Val a, Val b) {
  if (a.tape != b.tape) throw std::invalid_argument("op: operands from different tapes");
}

// b broadcasts over rows of a when a is [R,C] and b is rank-1 [C].
bool row_broadcast(const Tensor& a, const Tensor& b) {
  return a.rank() == 2 && b.rank() == 1 && a.shape[1] == b.shape[0];
}

}  // namespace

Val add(Val a, Val b) {
  check_same_tape(a, b);
  const Tensor& ta = a.t();
  const Tensor& tb = b.t();
  Tensor out(ta.shape);
  if (ta.same_shape(tb)) {
    for (int64_t i = 0; i < ta.size(); ++i) out.values[i] = ta.values[i] + tb.values[i];
  } else if (row_broadcast(ta, tb)) {
    int R = ta.shape[0], C = ta.shape[1];
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) out.values[static_cast<size_t>(r) * C + c] = ta.at(r, c) + tb.values[c];
  } else {
    throw std::invalid_argument("add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  }
  int ia = a.id, ib = b.id;
  bool bc = !ta.same_shape(tb);
  return a.tape->emit(std::move(out), [ia, ib, bc](Tape& t, Tape::Node& n) {
    auto& ga = t.adj_of(ia);
    for (size_t i = 0; i < n.adj.size(); ++i) ga[i] += n.adj[i];
    t.touch(ia);
    auto& gb = t.adj_of(ib);
    if (!bc) {
      for (size_t i = 0; i < n.adj.size(); ++i) gb[i] += n.adj[i];
    } else {
      size_t C = gb.size();
      for (size_t i = 0; i < n.adj.size(); ++i) gb[i % C] += n.adj[i];
    }
    t.touch(ib);
  });
}

Val sub(Val a, Val b) { return add(a, scale(b, -1.0)); }

Val mul(Val a, Val b) {
  check_same_tape(a, b);
  const Tensor& ta = a.t();
  const Tensor& tb = b.t();
  Tensor out(ta.shape);
  bool bc = false;
  if (ta.same_shape(tb)) {
    for (int64_t i = 0; i < ta.size(); ++i) out.values[i] = ta.values[i] * tb.values[i];
  } else if (row_broadcast(ta, tb)) {
    bc = true;
    int R = ta.shape[0], C = ta.shape[1];
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) out.values[static_cast<size_t>(r) * C + c] = ta.at(r, c) * tb.values[c];
  } else {
    throw std::invalid_argument("mul: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  }
  int ia = a.id, ib = b.id;
  return a.tape->emit(std::move(out), [ia, ib, bc](Tape& t, Tape::Node& n) {
    const auto& va = t.node(ia).value().values;
    const auto& vb = t.node(ib).value().values;
    auto& ga = t.adj_of(ia);
    auto& gb = t.adj_of(ib);
    if (!bc) {
      for (size_t i = 0; i < n.adj.size(); ++i) {
        ga[i] += n.adj[i] * vb[i];
        gb[i] += n.adj[i] * va[i];
      }
    } else {
      size_t C = vb.size();
      for (size_t i = 0; i < n.adj.size(); ++i) {
        ga[i] += n.adj[i] * vb[i % C];
        gb[i % C] += n.adj[i] * va[i];
      }
    }
    t.touch(ia);
    t.touch(ib);
  });
}

Val scale(Val a, double s) {
  const Tensor& ta = a.t();
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.size(); ++i) out.values[i] = ta.values[i] * s;
  int ia = a.id;
  return a.tape->emit(std::move(out), [ia, s](Tape& t, Tape::Node& n) {
    auto& ga = t.adj_of(ia);
    for (size_t i = 0; i < n.adj.size(); ++i) ga[i] += n.adj[i] * s;
    t.touch(ia);
  });
}

namespace {

struct MatView {
  const double* data;
  int rows, cols;
};

MatView as_matrix(const Tensor& t, const char* who) {
  if (t.rank() == 2) return {t.values.data(), t.shape[0], t.shape[1]};
  if (t.rank() == 1) return {t.values.data(), 1, t.shape[0]};
  throw std::invalid_argument(std::string(who) + ": rank-2 tensor required, got " + shape_str(t.shape));
}

}  // namespace

Val matmul(Val a, Val b, bool trans_a, bool trans_b) {
  check_same_tape(a, b);
  MatView ma = as_matrix(a.t(), "matmul");
  MatView mb = as_matrix(b.t(), "matmul");
  int m = trans_a ? ma.cols : ma.rows;
  int ka = trans_a ? ma.rows : ma.cols;
  int kb = trans_b ? mb.cols : mb.rows;
  int n = trans_b ? mb.rows : mb.cols;
  if (ka != kb)
    throw std::invalid_argument("matmul: inner dimensions disagree " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Tensor out({m, n});
  {
    ECMat A(ma.data, ma.rows, ma.cols);
    ECMat B(mb.data, mb.rows, mb.cols);
    EMat C(out.values.data(), m, n);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  int ia = a.id, ib = b.id;
  return a.tape->emit(std::move(out), [=](Tape& t, Tape::Node& nd) {
    ECMat A(t.node(ia).value().values.data(), ma.rows, ma.cols);
    ECMat B(t.node(ib).value().values.data(), mb.rows, mb.cols);
    ECMat G(nd.adj.data(), m, n);
    EMat dA(t.adj_of(ia).data(), ma.rows, ma.cols);
    EMat dB(t.adj_of(ib).data(), mb.rows, mb.cols);
    // d(op(A) op(B))/dA and /dB for each transpose combination.
    if (!trans_a && !trans_b) {
      dA.noalias() += G * B.transpose();
      dB.noalias() += A.transpose() * G;
    } else if (trans_a && !trans_b) {
      dA.noalias() += B * G.transpose();
      dB.noalias() += A * G;
    } else if (!trans_a && trans_b) {
      dA.noalias() += G * B;
      dB.noalias() += G.transpose() * A;
    } else {
      dA.noalias() += B.transpose() * G.transpose();
      dB.noalias() += G.transpose() * A.transpose();
    }
    t.touch(ia);
    t.touch(ib);
  });
}

Val concat(const std::vector<Val>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  Tape* tape = parts[0].tape;
  int R0 = parts[0].rows(), C0 = parts[0].cols();
  int R = 0, C = 0;
  for (const Val& p : parts) {
    if (p.tape != tape) throw std::invalid_argument("concat: mixed tapes");
    if (p.t().rank() != 2) throw std::invalid_argument("concat: rank-2 tensors required");
    if (axis == 0 && p.cols() != C0) throw std::invalid_argument("concat: column mismatch");
    if (axis == 1 && p.rows() != R0) throw std::invalid_argument("concat: row mismatch");
    R += p.rows();
    C += p.cols();
  }
  Tensor out(axis == 0 ? std::vector<int>{R, C0} : std::vector<int>{R0, C});
  std::vector<int> ids;
  std::vector<std::vector<int>> shapes;
  int off = 0;
  for (const Val& p : parts) {
    const Tensor& tp = p.t();
    if (axis == 0) {
      std::copy(tp.values.begin(), tp.values.end(), out.values.begin() + static_cast<size_t>(off) * C0);
      off += tp.shape[0];
    } else {
      for (int r = 0; r < R0; ++r)
        std::copy(tp.values.begin() + static_cast<size_t>(r) * tp.shape[1],
                  tp.values.begin() + static_cast<size_t>(r + 1) * tp.shape[1],
                  out.values.begin() + static_cast<size_t>(r) * C + off);
      off += tp.shape[1];
    }
    ids.push_back(p.id);
    shapes.push_back(tp.shape);
  }
  int outC = (axis == 0) ? C0 : C;
  return tape->emit(std::move(out), [ids, shapes, axis, outC](Tape& t, Tape::Node& n) {
    int off = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      auto& g = t.adj_of(ids[k]);
      int pr = shapes[k][0], pc = shapes[k][1];
      if (axis == 0) {
        for (size_t i = 0; i < g.size(); ++i) g[i] += n.adj[static_cast<size_t>(off) * outC + i];
        off += pr;
      } else {
        for (int r = 0; r < pr; ++r)
          for (int c = 0; c < pc; ++c)
            g[static_cast<size_t>(r) * pc + c] += n.adj[static_cast<size_t>(r) * outC + off + c];
        off += pc;
      }
      t.touch(ids[k]);
    }
  });
}

Val transpose(Val a) {
  const Tensor& ta = a.t();
  if (ta.rank() != 2) throw std::invalid_argument("transpose: rank-2 tensor required");
  int R = ta.shape[0], C = ta.shape[1];
  Tensor out({C, R});
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out.values[static_cast<size_t>(c) * R + r] = ta.at(r, c);
  int ia = a.id;
  return a.tape->emit(std::move(out), [ia, R, C](Tape& t, Tape::Node& n) {
    auto& g = t.adj_of(ia);
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) g[static_cast<size_t>(r) * C + c] += n.adj[static_cast<size_t>(c) * R + r];
    t.touch(ia);
  });
}

Val slice_rows(Val a, int r0, int r1) {
  const Tensor& ta = a.t();
  if (ta.rank() != 2) throw std::invalid_argument("slice_rows: rank-2 tensor required");
  if (r0 < 0 || r1 > ta.shape[0] || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
  int C = ta.shape[1];
  Tensor out({r1 - r0, C});
  std::copy(ta.values.begin() + static_cast<size_t>(r0) * C, ta.values.begin() + static_cast<size_t>(r1) * C,
            out.values.begin());
  int ia = a.id;
  return a.tape->emit(std::move(out), [ia, r0, C](Tape& t, Tape::Node& n) {
    auto& g = t.adj_of(ia);
    for (size_t i = 0; i < n.adj.size(); ++i) g[static_cast<size_t>(r0) * C + i] += n.adj[i];
    t.touch(ia);
  });
}

Val slice_cols(Val a, int c0, int c1) {
  const Tensor& ta = a.t();
  if (ta.rank() != 2) throw std::invalid_argument("slice_cols: rank-2 tensor required");
  if (c0 < 0 || c1 > ta.shape[1] || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  int R = ta.shape[0], C = ta.shape[1], W = c1 - c0;
  Tensor out({R, W});
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < W; ++c) out.values[static_cast<size_t>(r) * W + c] = ta.at(r, c0 + c);
  int ia = a.id;
  return a.tape->emit(std::move(out), [ia, R, C, c0, W](Tape& t, Tape::Node& n) {
    auto& g = t.adj_of(ia);
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < W; ++c) g[static_cast<size_t>(r) * C + c0 + c] += n.adj[static_cast<size_t>(r) * W + c];
    t.touch(ia);
  });
}

Val gather_rows(Val a, const std::vector<int>& idx) {
  const Tensor& ta = a.t();
  if (ta.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 tensor required");
  int C = ta.shape[1];
  Tensor out({static_cast<int>(idx.size()), C});
  for (size_t r = 0; r < idx.size(); ++r) {
    int src = idx[r];
    if (src < 0 || src >= ta.shape[0]) throw std::invalid_argument("gather_rows: index out of range");
    std::copy(ta.values.begin() + static_cast<size_t>(src) * C, ta.values.begin() + static_cast<size_t>(src + 1) * C,
              out.values.begin() + r * C);
  }
  int ia = a.id;
  return a.tape->emit(std::move(out), [ia, idx, C](Tape& t, Tape::Node& n) {
    auto& g = t.adj_of(ia);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int c = 0; c < C; ++c) g[static_cast<size_t>(idx[r]) * C + c] += n.adj[r * C + c];
    t.touch(ia);
  });
}

Val embedding_lookup(Val table, const std::vector<int>& ids) { return gather_rows(table, ids); }

Val softmax(Val a, int axis) {
  const Tensor& ta = a.t();
  if (axis < 0 || axis >= ta.rank())
    throw std::invalid_argument("softmax: invalid axis " + std::to_string(axis) + " for " + shape_str(ta.shape));
  int R = ta.rows(), C = ta.cols();
  bool over_cols = (ta.rank() == 1) || axis == 1;
  Tensor out(ta.shape);
  auto apply = [&](int n, auto get, auto set) {
    double mx = -1e308;
    for (int i = 0; i < n; ++i) mx = std::max(mx, get(i));
    double z = 0.0;
    for (int i = 0; i < n; ++i) z += std::exp(get(i) - mx);
    for (int i = 0; i < n; ++i) set(i, std::exp(get(i) - mx) / z);
  };
  if (over_cols) {
    for (int r = 0; r < R; ++r)
      apply(
          C, [&](int i) { return ta.values[static_cast<size_t>(r) * C + i]; },
          [&](int i, double v) { out.values[static_cast<size_t>(r) * C + i] = v; });
  } else {
    for (int c = 0; c < C; ++c)
      apply(
          R, [&](int i) { return ta.values[static_cast<size_t>(i) * C + c]; },
          [&](int i, double v) { out.values[static_cast<size_t>(i) * C + c] = v; });
  }
  int ia = a.id;
  return a.tape->emit(std::move(out), [ia, R, C, over_cols](Tape& t, Tape::Node& n) {
    const auto& y = n.owned.values;
    auto& g = t.adj_of(ia);
    // dL/dx_i = y_i * (dL/dy_i - sum_j dL/dy_j y_j), per slice.
    auto backprop = [&](int len, auto at) {
      double dot = 0.0;
      for (int i = 0; i < len; ++i) dot += n.adj[at(i)] * y[at(i)];
      for (int i = 0; i < len; ++i) g[at(i)] += y[at(i)] * (n.adj[at(i)] - dot);
    };
    if (over_cols) {
      for (int r = 0; r < R; ++r)
        backprop(C, [&](int i) { return static_cast<size_t>(r) * C + i; });
    } else {
      for (int c = 0; c < C; ++c)
        backprop(R, [&](int i) { return static_cast<size_t>(i) * C + c; });
    }
    t.touch(ia);
  });
}

Val layer_norm(Val a) {
  const Tensor& ta = a.t();
  if (ta.rank() > 2) throw std::invalid_argument("layer_norm: rank-1/2 tensor required");
  constexpr double kEps = 1e-5;
  int R = ta.rows(), C = ta.cols();
  Tensor out(ta.shape);
  std::vector<double> inv_sigma(static_cast<size_t>(R));
  for (int r = 0; r < R; ++r) {
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += ta.values[static_cast<size_t>(r) * C + c];
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      double d = ta.values[static_cast<size_t>(r) * C + c] - mean;
      var += d * d;
    }
    var /= C;
    double is = 1.0 / std::sqrt(var + kEps);
    inv_sigma[static_cast<size_t>(r)] = is;
    for (int c = 0; c < C; ++c)
      out.values[static_cast<size_t>(r) * C + c] = (ta.values[static_cast<size_t>(r) * C + c] - mean) * is;
  }
  int ia = a.id;
  return a.tape->emit(std::move(out), [ia, R, C, inv_sigma](Tape& t, Tape::Node& n) {
    const auto& y = n.owned.values;
    auto& g = t.adj_of(ia);
    for (int r = 0; r < R; ++r) {
      double gm = 0.0, gym = 0.0;
      for (int c = 0; c < C; ++c) {
        size_t i = static_cast<size_t>(r) * C + c;
        gm += n.adj[i];
        gym += n.adj[i] * y[i];
      }
      gm /= C;
      gym /= C;
      for (int c = 0; c < C; ++c) {
        size_t i = static_cast<size_t>(r) * C + c;
        g[i] += (n.adj[i] - gm - y[i] * gym) * inv_sigma[static_cast<size_t>(r)];
      }
    }
    t.touch(ia);
  });
}

Val gelu(Val a) {
  const Tensor& ta = a.t();
  Tensor out(ta.shape);
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  for (int64_t i = 0; i < ta.size(); ++i) {
    double x = ta.values[i];
    out.values[i] = 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
  }
  int ia = a.id;
  return a.tape->emit(std::move(out), [ia, k](Tape& t, Tape::Node& n) {
    const auto& x = t.node(ia).value().values;
    auto& g = t.adj_of(ia);
    for (size_t i = 0; i < n.adj.size(); ++i) {
      double xi = x[i];
      double u = k * (xi + 0.044715 * xi * xi * xi);
      double th = std::tanh(u);
      double du = k * (1.0 + 3.0 * 0.044715 * xi * xi);
      double d = 0.5 * (1.0 + th) + 0.5 * xi * (1.0 - th * th) * du;
      g[i] += n.adj[i] * d;
    }
    t.touch(ia);
  });
}

Val sum_all(Val a) {
  const Tensor& ta = a.t();
  double s = 0.0;
  for (double v : ta.values) s += v;
  int ia = a.id;
  int64_t sz = ta.size();
  return a.tape->emit(Tensor::scalar(s), [ia, sz](Tape& t, Tape::Node& n) {
    auto& g = t.adj_of(ia);
    for (int64_t i = 0; i < sz; ++i) g[static_cast<size_t>(i)] += n.adj[0];
    t.touch(ia);
  });
}

Val mean_rows(Val a) {
  const Tensor& ta = a.t();
  if (ta.rank() != 2) throw std::invalid_argument("mean_rows: rank-2 tensor required");
  int R = ta.shape[0], C = ta.shape[1];
  Tensor out({1, C});
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out.values[static_cast<size_t>(c)] += ta.at(r, c) / R;
  int ia = a.id;
  return a.tape->emit(std::move(out), [ia, R, C](Tape& t, Tape::Node& n) {
    auto& g = t.adj_of(ia);
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) g[static_cast<size_t>(r) * C + c] += n.adj[static_cast<size_t>(c)] / R;
    t.touch(ia);
  });
}

Val cross_entropy(Val dist, int target) {
  const Tensor& td = dist.t();
  if (td.rank() == 2 && td.shape[0] != 1)
    throw std::invalid_argument("cross_entropy: distribution must be a single row");
  int n = static_cast<int>(td.size());
  if (target < 0 || target >= n) throw std::invalid_argument("cross_entropy: target index out of range");
  double total = 0.0;
  for (double v : td.values) total += v;
  if (std::abs(total - 1.0) > 1e-6)
    throw std::invalid_argument("cross_entropy: input does not sum to 1");
  constexpr double kFloor = 1e-12;
  double p = td.values[static_cast<size_t>(target)];
  double loss = -std::log(std::max(p, kFloor));
  int ia = dist.id;
  return dist.tape->emit(Tensor::scalar(loss), [ia, target, kFloor](Tape& t, Tape::Node& n) {
    double p = t.node(ia).value().values[static_cast<size_t>(target)];
    if (p > kFloor) {
      t.adj_of(ia)[static_cast<size_t>(target)] += -n.adj[0] / p;
      t.touch(ia);
    }
  });
}

Val dropout(Val a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const Tensor& ta = a.t();
  Tensor out(ta.shape);
  std::vector<double> mask(ta.values.size());
  double keep = 1.0 - rate;
  for (size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.bernoulli(rate) ? 0.0 : 1.0 / keep;
    out.values[i] = ta.values[i] * mask[i];
  }
  int ia = a.id;
  return a.tape->emit(std::move(out), [ia, mask](Tape& t, Tape::Node& n) {
    auto& g = t.adj_of(ia);
    for (size_t i = 0; i < n.adj.size(); ++i) g[i] += n.adj[i] * mask[i];
    t.touch(ia);
  });
}

Val scaled_dot_product_attention(Val q, Val k, Val v, const Tensor* mask) {
  const Tensor& tk = k.t();
  if (tk.rank() != 2) throw std::invalid_argument("attention: rank-2 tensors required");
  int d = tk.shape[1];
  Val scores = scale(matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(d)));
  if (mask) {
    if (mask->shape != scores.shape())
      throw std::invalid_argument("attention: mask shape " + shape_str(mask->shape) + " vs scores " +
                                  shape_str(scores.shape()));
    scores = add(scores, q.tape->constant(*mask));
  }
  Val weights = softmax(scores, 1);
  return matmul(weights, v);
}

}  // namespace nbslu
