#include "sbench/tape.hpp"

#include <cassert>
#include <cmath>

namespace sbench::ad {

Var Tape::push(Mat v, bool needs, std::function<void()> back) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = needs;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::acc(int idx, const Mat& g) {
  Node& n = nodes_[idx];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

const Mat& Tape::grad(Var v) const {
  static const Mat empty;
  const Node& n = nodes_[v.i];
  return n.grad.size() ? n.grad : empty;
}

Var Tape::constant(Mat v) { return push(std::move(v), false); }
Var Tape::param(Mat v) { return push(std::move(v), true); }

Var Tape::add(Var a, Var b) {
  Mat v = val(a) + val(b);
  if (!req(a) && !req(b)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, bi = b.i, oi = out.i;
  nodes_[oi].back = [this, ai, bi, oi] {
    acc(ai, g(oi));
    acc(bi, g(oi));
  };
  return out;
}

Var Tape::sub(Var a, Var b) {
  Mat v = val(a) - val(b);
  if (!req(a) && !req(b)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, bi = b.i, oi = out.i;
  nodes_[oi].back = [this, ai, bi, oi] {
    acc(ai, g(oi));
    acc(bi, -g(oi));
  };
  return out;
}

Var Tape::mul(Var a, Var b) {
  Mat v = val(a).cwiseProduct(val(b));
  if (!req(a) && !req(b)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, bi = b.i, oi = out.i;
  nodes_[oi].back = [this, ai, bi, oi] {
    acc(ai, g(oi).cwiseProduct(val(Var{bi})));
    acc(bi, g(oi).cwiseProduct(val(Var{ai})));
  };
  return out;
}

Var Tape::div(Var a, Var b) {
  Mat v = val(a).cwiseQuotient(val(b));
  if (!req(a) && !req(b)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, bi = b.i, oi = out.i;
  nodes_[oi].back = [this, ai, bi, oi] {
    const Mat& go = g(oi);
    acc(ai, go.cwiseQuotient(val(Var{bi})));
    acc(bi, -go.cwiseProduct(val(Var{oi})).cwiseQuotient(val(Var{bi})));
  };
  return out;
}

Var Tape::neg(Var a) { return scale(a, -1.0); }

Var Tape::scale(Var a, double c) {
  Mat v = val(a) * c;
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi, c] { acc(ai, g(oi) * c); };
  return out;
}

Var Tape::add_scalar(Var a, double c) {
  Mat v = val(a).array() + c;
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi] { acc(ai, g(oi)); };
  return out;
}

Var Tape::matmul(Var a, Var b) {
  Mat v = val(a) * val(b);
  if (!req(a) && !req(b)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, bi = b.i, oi = out.i;
  nodes_[oi].back = [this, ai, bi, oi] {
    const Mat& go = g(oi);
    acc(ai, go * val(Var{bi}).transpose());
    acc(bi, val(Var{ai}).transpose() * go);
  };
  return out;
}

Var Tape::transpose(Var a) {
  Mat v = val(a).transpose();
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi] { acc(ai, g(oi).transpose()); };
  return out;
}

Var Tape::add_rowvec(Var a, Var row) {
  Mat v = val(a);
  v.array().rowwise() += val(row).row(0).array();
  if (!req(a) && !req(row)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, ri = row.i, oi = out.i;
  nodes_[oi].back = [this, ai, ri, oi] {
    acc(ai, g(oi));
    acc(ri, g(oi).colwise().sum());
  };
  return out;
}

Var Tape::mul_rowvec(Var a, Var row) {
  Mat v = val(a);
  v.array().rowwise() *= val(row).row(0).array();
  if (!req(a) && !req(row)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, ri = row.i, oi = out.i;
  nodes_[oi].back = [this, ai, ri, oi] {
    const Mat& go = g(oi);
    Mat ga = go;
    ga.array().rowwise() *= val(Var{ri}).row(0).array();
    acc(ai, ga);
    acc(ri, go.cwiseProduct(val(Var{ai})).colwise().sum());
  };
  return out;
}

Var Tape::add_colvec(Var a, Var col) {
  Mat v = val(a);
  v.array().colwise() += val(col).col(0).array();
  if (!req(a) && !req(col)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, ci = col.i, oi = out.i;
  nodes_[oi].back = [this, ai, ci, oi] {
    acc(ai, g(oi));
    acc(ci, g(oi).rowwise().sum());
  };
  return out;
}

Var Tape::mul_colvec(Var a, Var col) {
  Mat v = val(a);
  v.array().colwise() *= val(col).col(0).array();
  if (!req(a) && !req(col)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, ci = col.i, oi = out.i;
  nodes_[oi].back = [this, ai, ci, oi] {
    const Mat& go = g(oi);
    Mat ga = go;
    ga.array().colwise() *= val(Var{ci}).col(0).array();
    acc(ai, ga);
    acc(ci, go.cwiseProduct(val(Var{ai})).rowwise().sum());
  };
  return out;
}

Var Tape::div_colvec(Var a, Var col) {
  Mat v = val(a);
  v.array().colwise() /= val(col).col(0).array();
  if (!req(a) && !req(col)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, ci = col.i, oi = out.i;
  nodes_[oi].back = [this, ai, ci, oi] {
    const Mat& go = g(oi);
    Mat ga = go;
    ga.array().colwise() /= val(Var{ci}).col(0).array();
    acc(ai, ga);
    // d/dcol (a/col) = -a/col^2 = -out/col
    Mat gc = go.cwiseProduct(val(Var{oi})).rowwise().sum();
    gc.array() /= val(Var{ci}).col(0).array();
    acc(ci, -gc);
  };
  return out;
}

Var Tape::add_scalar_var(Var a, Var s) {
  Mat v = val(a).array() + val(s)(0, 0);
  if (!req(a) && !req(s)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, si = s.i, oi = out.i;
  nodes_[oi].back = [this, ai, si, oi] {
    acc(ai, g(oi));
    Mat gs(1, 1);
    gs(0, 0) = g(oi).sum();
    acc(si, gs);
  };
  return out;
}

Var Tape::mul_scalar_var(Var a, Var s) {
  Mat v = val(a) * val(s)(0, 0);
  if (!req(a) && !req(s)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, si = s.i, oi = out.i;
  nodes_[oi].back = [this, ai, si, oi] {
    acc(ai, g(oi) * val(Var{si})(0, 0));
    Mat gs(1, 1);
    gs(0, 0) = g(oi).cwiseProduct(val(Var{ai})).sum();
    acc(si, gs);
  };
  return out;
}

Var Tape::add_mat(Var a, const Mat& c) {
  Mat v = val(a) + c;
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi] { acc(ai, g(oi)); };
  return out;
}

Var Tape::mul_mat(Var a, const Mat& c) {
  Mat v = val(a).cwiseProduct(c);
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  Mat cc = c;
  nodes_[oi].back = [this, ai, oi, cc] { acc(ai, g(oi).cwiseProduct(cc)); };
  return out;
}

Var Tape::tanh_(Var a) {
  Mat v = val(a).array().tanh();
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi] {
    const Mat& y = val(Var{oi});
    acc(ai, g(oi).cwiseProduct((1.0 - y.array().square()).matrix()));
  };
  return out;
}

Var Tape::sigmoid(Var a) {
  Mat v = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi] {
    const Mat& y = val(Var{oi});
    acc(ai, g(oi).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  };
  return out;
}

Var Tape::exp_(Var a) {
  Mat v = val(a).array().exp();
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi] { acc(ai, g(oi).cwiseProduct(val(Var{oi}))); };
  return out;
}

Var Tape::sqrt_(Var a) {
  Mat v = val(a).array().sqrt();
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi] {
    acc(ai, (g(oi).array() / (2.0 * val(Var{oi}).array())).matrix());
  };
  return out;
}

Var Tape::abs_(Var a) {
  Mat v = val(a).array().abs();
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi] {
    acc(ai, g(oi).cwiseProduct(val(Var{ai}).array().sign().matrix()));
  };
  return out;
}

Var Tape::max_scalar(Var a, double c) {
  Mat v = val(a).cwiseMax(c);
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi, c] {
    Mat mask = (val(Var{ai}).array() > c).cast<double>();
    acc(ai, g(oi).cwiseProduct(mask));
  };
  return out;
}

Var Tape::cwise_max(Var a, Var b) {
  Mat v = val(a).cwiseMax(val(b));
  if (!req(a) && !req(b)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, bi = b.i, oi = out.i;
  nodes_[oi].back = [this, ai, bi, oi] {
    Mat take_a = (val(Var{ai}).array() >= val(Var{bi}).array()).cast<double>();
    acc(ai, g(oi).cwiseProduct(take_a));
    acc(bi, g(oi).cwiseProduct((1.0 - take_a.array()).matrix()));
  };
  return out;
}

Var Tape::softmax_rows(Var a) {
  Mat v = val(a);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp();
    v.row(r) /= v.row(r).sum();
  }
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi] {
    const Mat& y = val(Var{oi});
    const Mat& go = g(oi);
    Mat dot = go.cwiseProduct(y).rowwise().sum();  // [m x 1]
    Mat ga = go;
    ga.array().colwise() -= dot.col(0).array();
    acc(ai, ga.cwiseProduct(y));
  };
  return out;
}

Var Tape::sum(Var a) {
  Mat v(1, 1);
  v(0, 0) = val(a).sum();
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi] {
    acc(ai, Mat::Constant(val(Var{ai}).rows(), val(Var{ai}).cols(), g(oi)(0, 0)));
  };
  return out;
}

Var Tape::mean(Var a) {
  const double n = static_cast<double>(val(a).size());
  Mat v(1, 1);
  v(0, 0) = val(a).sum() / n;
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi, n] {
    acc(ai, Mat::Constant(val(Var{ai}).rows(), val(Var{ai}).cols(), g(oi)(0, 0) / n));
  };
  return out;
}

Var Tape::rowsum(Var a) {
  Mat v = val(a).rowwise().sum();
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi] {
    Mat ga(val(Var{ai}).rows(), val(Var{ai}).cols());
    ga.colwise() = g(oi).col(0);
    acc(ai, ga);
  };
  return out;
}

Var Tape::mean_rows(Var a) {
  const double n = static_cast<double>(val(a).cols());
  Mat v = val(a).rowwise().mean();
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi, n] {
    Mat ga(val(Var{ai}).rows(), val(Var{ai}).cols());
    ga.colwise() = (g(oi).col(0) / n).eval();
    acc(ai, ga);
  };
  return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  Eigen::Index rows = val(parts[0]).rows(), cols = 0;
  bool any = false;
  for (Var p : parts) {
    cols += val(p).cols();
    any = any || req(p);
  }
  Mat v(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    v.middleCols(c, val(p).cols()) = val(p);
    c += val(p).cols();
  }
  if (!any) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  std::vector<int> idx;
  std::vector<Eigen::Index> widths;
  for (Var p : parts) {
    idx.push_back(p.i);
    widths.push_back(val(p).cols());
  }
  int oi = out.i;
  nodes_[oi].back = [this, idx, widths, oi] {
    Eigen::Index c = 0;
    for (size_t j = 0; j < idx.size(); ++j) {
      acc(idx[j], g(oi).middleCols(c, widths[j]));
      c += widths[j];
    }
  };
  return out;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  Eigen::Index cols = val(parts[0]).cols(), rows = 0;
  bool any = false;
  for (Var p : parts) {
    rows += val(p).rows();
    any = any || req(p);
  }
  Mat v(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    v.middleRows(r, val(p).rows()) = val(p);
    r += val(p).rows();
  }
  if (!any) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  std::vector<int> idx;
  std::vector<Eigen::Index> heights;
  for (Var p : parts) {
    idx.push_back(p.i);
    heights.push_back(val(p).rows());
  }
  int oi = out.i;
  nodes_[oi].back = [this, idx, heights, oi] {
    Eigen::Index r = 0;
    for (size_t j = 0; j < idx.size(); ++j) {
      acc(idx[j], g(oi).middleRows(r, heights[j]));
      r += heights[j];
    }
  };
  return out;
}

Var Tape::slice_cols(Var a, int c0, int n) {
  Mat v = val(a).middleCols(c0, n);
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi, c0, n] {
    Mat ga = Mat::Zero(val(Var{ai}).rows(), val(Var{ai}).cols());
    ga.middleCols(c0, n) = g(oi);
    acc(ai, ga);
  };
  return out;
}

Var Tape::slice_rows(Var a, int r0, int n) {
  Mat v = val(a).middleRows(r0, n);
  if (!req(a)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ai = a.i, oi = out.i;
  nodes_[oi].back = [this, ai, oi, r0, n] {
    Mat ga = Mat::Zero(val(Var{ai}).rows(), val(Var{ai}).cols());
    ga.middleRows(r0, n) = g(oi);
    acc(ai, ga);
  };
  return out;
}

Var Tape::gather_rows(Var table, std::vector<int> ids) {
  Mat v(static_cast<Eigen::Index>(ids.size()), val(table).cols());
  for (size_t j = 0; j < ids.size(); ++j) v.row(static_cast<Eigen::Index>(j)) = val(table).row(ids[j]);
  if (!req(table)) return push(std::move(v), false);
  Var out = push(std::move(v), true);
  int ti = table.i, oi = out.i;
  nodes_[oi].back = [this, ti, oi, ids] {
    Mat gt = Mat::Zero(val(Var{ti}).rows(), val(Var{ti}).cols());
    for (size_t j = 0; j < ids.size(); ++j)
      gt.row(ids[j]) += g(oi).row(static_cast<Eigen::Index>(j));
    acc(ti, gt);
  };
  return out;
}

Var Tape::outer_flat(Var vv, Var kk) {
  const Mat& v = val(vv);
  const Mat& k = val(kk);
  const Eigen::Index B = v.rows(), dv = v.cols(), dk = k.cols();
  Mat o(B, dv * dk);
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index i = 0; i < dv; ++i)
      for (Eigen::Index j = 0; j < dk; ++j) o(b, i * dk + j) = v(b, i) * k(b, j);
  if (!req(vv) && !req(kk)) return push(std::move(o), false);
  Var out = push(std::move(o), true);
  int vi = vv.i, ki = kk.i, oi = out.i;
  nodes_[oi].back = [this, vi, ki, oi, B, dv, dk] {
    const Mat& go = g(oi);
    const Mat& v = val(Var{vi});
    const Mat& k = val(Var{ki});
    Mat gv = Mat::Zero(B, dv), gk = Mat::Zero(B, dk);
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index i = 0; i < dv; ++i)
        for (Eigen::Index j = 0; j < dk; ++j) {
          gv(b, i) += go(b, i * dk + j) * k(b, j);
          gk(b, j) += go(b, i * dk + j) * v(b, i);
        }
    acc(vi, gv);
    acc(ki, gk);
  };
  return out;
}

Var Tape::matvec_flat(Var cmat, Var q, int d) {
  const Mat& c = val(cmat);
  const Mat& qv = val(q);
  const Eigen::Index B = c.rows();
  Mat h(B, d);
  for (Eigen::Index b = 0; b < B; ++b)
    for (int i = 0; i < d; ++i) {
      double s = 0;
      for (int j = 0; j < d; ++j) s += c(b, i * d + j) * qv(b, j);
      h(b, i) = s;
    }
  if (!req(cmat) && !req(q)) return push(std::move(h), false);
  Var out = push(std::move(h), true);
  int ci = cmat.i, qi = q.i, oi = out.i;
  nodes_[oi].back = [this, ci, qi, oi, B, d] {
    const Mat& go = g(oi);
    const Mat& c = val(Var{ci});
    const Mat& qv = val(Var{qi});
    Mat gc = Mat::Zero(B, static_cast<Eigen::Index>(d) * d), gq = Mat::Zero(B, d);
    for (Eigen::Index b = 0; b < B; ++b)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          gc(b, i * d + j) += go(b, i) * qv(b, j);
          gq(b, j) += go(b, i) * c(b, i * d + j);
        }
    acc(ci, gc);
    acc(qi, gq);
  };
  return out;
}

void Tape::backward(Var scalar_loss) {
  Node& loss = nodes_[scalar_loss.i];
  assert(loss.value.rows() == 1 && loss.value.cols() == 1);
  loss.grad = Mat::Ones(1, 1);
  for (int i = scalar_loss.i; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back && n.grad.size() > 0) n.back();
  }
}

Var dropout(Tape& t, Var a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  const Mat& v = t.val(a);
  std::bernoulli_distribution keep(1.0 - p);
  Mat mask(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    for (Eigen::Index c = 0; c < v.cols(); ++c)
      mask(r, c) = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return t.mul_mat(a, mask);
}

Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps) {
  Var centered = t.add_colvec(x, t.neg(t.mean_rows(x)));
  Var var = t.mean_rows(t.mul(centered, centered));
  Var inv = t.sqrt_(t.add_scalar(var, eps));
  Var normed = t.div_colvec(centered, inv);
  Var scaled = t.mul_rowvec(normed, gain);
  if (shift.valid()) scaled = t.add_rowvec(scaled, shift);
  return scaled;
}

}  // namespace sbench::ad
