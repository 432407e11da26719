#pragma once

// Reverse-mode autodiff over dense Eigen matrices. A Tape owns a DAG of
// matrix-valued nodes; Var is an index into it. Values are computed eagerly,
// gradients on demand via backward() from a 1x1 scalar node. Leaves created
// with param() accumulate gradients; constant() leaves do not.
//
// Orientation convention used by the model code: rows are batch samples,
// columns are features/units.

#include <Eigen/Dense>
#include <functional>
#include <random>
#include <vector>

#include "sbench/core.hpp"

namespace sbench::ad {

using Mat = Eigen::MatrixXd;

struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

class Tape {
 public:
  Var constant(Mat v);
  Var param(Mat v);

  const Mat& val(Var v) const { return nodes_[v.i].value; }
  const Mat& grad(Var v) const;

  // arithmetic
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // Hadamard
  Var div(Var a, Var b);
  Var neg(Var a);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var matmul(Var a, Var b);
  Var transpose(Var a);

  // broadcasts: row is [1 x n], col is [m x 1], s is [1 x 1]
  Var add_rowvec(Var a, Var row);
  Var mul_rowvec(Var a, Var row);
  Var add_colvec(Var a, Var col);
  Var mul_colvec(Var a, Var col);
  Var div_colvec(Var a, Var col);
  Var add_scalar_var(Var a, Var s);
  Var mul_scalar_var(Var a, Var s);

  // constants mixed in elementwise
  Var add_mat(Var a, const Mat& c);
  Var mul_mat(Var a, const Mat& c);

  // nonlinearities
  Var tanh_(Var a);
  Var sigmoid(Var a);
  Var exp_(Var a);
  Var sqrt_(Var a);
  Var abs_(Var a);
  Var max_scalar(Var a, double c);  // elementwise max(a, c)
  Var cwise_max(Var a, Var b);      // elementwise max, ties go to a
  Var softmax_rows(Var a);

  // reductions / reshaping
  Var sum(Var a);        // 1x1
  Var mean(Var a);       // 1x1
  Var rowsum(Var a);     // [m x 1]
  Var mean_rows(Var a);  // [m x 1], mean over columns of each row
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_cols(Var a, int c0, int n);
  Var slice_rows(Var a, int r0, int n);
  Var gather_rows(Var table, std::vector<int> ids);

  // batched matrix memory, rows flattened [B x d*d]
  Var outer_flat(Var v, Var k);             // per row: vec(v k^T)
  Var matvec_flat(Var cmat, Var q, int d);  // per row: C q

  void backward(Var scalar_loss);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void()> back;  // empty for leaves / no-grad nodes
  };
  std::vector<Node> nodes_;

  Var push(Mat v, bool req, std::function<void()> back = {});
  void acc(int idx, const Mat& g);
  bool req(Var a) const { return nodes_[a.i].requires_grad; }
  bool has_grad(int idx) const { return nodes_[idx].grad.size() > 0; }
  const Mat& g(int idx) const { return nodes_[idx].grad; }

  friend struct BackwardCtx;
};

// inverted dropout with a fixed mask drawn from rng; identity when p == 0
Var dropout(Tape& t, Var a, double p, std::mt19937_64& rng);

// row-wise layer norm with learnable gain (and optional shift), eps inside sqrt
Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps = 1e-6);

}  // namespace sbench::ad
