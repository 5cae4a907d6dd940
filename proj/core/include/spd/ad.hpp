#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace spd::ad {

using Mat = Eigen::MatrixXd;

// A named trainable array. Gradients accumulate into `grad` across backward
// passes until zero_grad(); optimisers consume `grad` and update `value`.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

class Graph;

// Handle to a node of a Graph; cheap to copy, valid while the Graph lives.
class Var {
 public:
  Var() = default;
  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  friend class Graph;
  Var(Graph* g, int id) : g_(g), id_(id) {}
  Graph* g_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape over dense float64 matrices. One Graph per forward pass;
// parameters outlive the graph and collect gradients on backward().
class Graph {
 public:
  Graph() { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves.
  Var input(Mat v);
  Var param(Parameter& p);

  // Arithmetic. Shapes must agree unless stated otherwise.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);                 // Hadamard
  Var add_rowvec(Var a, Var row);        // (L x d) + broadcast (1 x d)
  Var mul_rowvec(Var a, Var row);        // (L x d) .* broadcast (1 x d)
  Var scale(Var a, double s);
  Var matmul(Var a, Var b);
  Var transpose(Var a);

  // Nonlinearities.
  Var relu(Var a);
  Var sigmoid(Var a);

  // Row-wise softmax; `additive_mask`, when given, is added to the input
  // first (use large negative entries to exclude positions).
  Var softmax_rows(Var a, const Mat* additive_mask = nullptr);

  // Shape surgery.
  Var concat_rows(Var a, Var b);
  Var concat_cols(Var a, Var b);
  Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n);
  Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n);

  // Reductions.
  Var sum_all(Var a);                    // 1x1
  Var mean_rows(Var a);                  // (L x d) -> (1 x d)

  // Row lookup with scatter-add backward; the workhorse for embeddings.
  Var gather_rows(Var table, const std::vector<int>& ids);

  // Per-row layer normalisation with learned gain/bias (both 1 x d).
  Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

  // Mean token-level cross entropy of `logits` (L x V) against `targets`
  // (length L); positions whose target equals `ignore_id` are skipped.
  Var cross_entropy(Var logits, const std::vector<int>& targets, int ignore_id);

  // Numerically stable binary cross entropy on a single logit (1 x 1).
  Var bce_with_logits(Var logit, double target);

  const Mat& value(int id) const { return nodes_[static_cast<size_t>(id)].val; }

  // Reverse sweep from a 1x1 loss node; accumulates into Parameter::grad.
  void backward(Var loss);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat val;
    Mat grad;
    bool needs_grad = false;
    Parameter* pref = nullptr;
    std::vector<int> parents;
    std::function<void(Graph&, Node&)> back;
  };

  friend class Var;

  int push(Mat val, std::vector<int> parents, std::function<void(Graph&, Node&)> back);
  Mat& grad_of(int id);
  bool any_needs_grad(const std::vector<int>& parents) const;

  std::vector<Node> nodes_;
};

// Global L2 norm of all parameter gradients.
double global_grad_norm(const std::vector<Parameter*>& params);

// In-place scaling so the global gradient norm does not exceed max_norm.
void clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);

// Adam with decoupled weight decay. Deterministic: state order follows the
// parameter list handed to the constructor.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, double lr, double weight_decay = 0.01,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();
  const std::vector<Parameter*>& params() const { return params_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_, v_;
  double lr_, wd_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace spd::ad
