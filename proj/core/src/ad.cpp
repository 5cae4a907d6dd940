#include "spd/ad.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace spd::ad {

namespace {

using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(std::string("ad: ") + msg);
}

}  // namespace

const Mat& Var::value() const { return g_->value(id_); }

int Graph::push(Mat val, std::vector<int> parents, std::function<void(Graph&, Node&)> back) {
  Node n;
  n.val = std::move(val);
  n.parents = std::move(parents);
  n.needs_grad = any_needs_grad(n.parents);
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

bool Graph::any_needs_grad(const std::vector<int>& parents) const {
  for (int p : parents) {
    if (nodes_[static_cast<size_t>(p)].needs_grad) return true;
  }
  return false;
}

Mat& Graph::grad_of(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

Var Graph::input(Mat v) {
  Node n;
  n.val = std::move(v);
  n.needs_grad = false;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::param(Parameter& p) {
  Node n;
  n.val = p.value;
  n.needs_grad = true;
  n.pref = &p;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::add(Var a, Var b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  int ia = a.id_, ib = b.id_;
  int id = push(nodes_[ia].val + nodes_[ib].val, {ia, ib}, [ia, ib](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) g.grad_of(ia) += n.grad;
    if (g.nodes_[ib].needs_grad) g.grad_of(ib) += n.grad;
  });
  return Var(this, id);
}

Var Graph::sub(Var a, Var b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  int ia = a.id_, ib = b.id_;
  int id = push(nodes_[ia].val - nodes_[ib].val, {ia, ib}, [ia, ib](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) g.grad_of(ia) += n.grad;
    if (g.nodes_[ib].needs_grad) g.grad_of(ib) -= n.grad;
  });
  return Var(this, id);
}

Var Graph::mul(Var a, Var b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  int ia = a.id_, ib = b.id_;
  int id = push(nodes_[ia].val.cwiseProduct(nodes_[ib].val), {ia, ib}, [ia, ib](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) g.grad_of(ia) += n.grad.cwiseProduct(g.nodes_[ib].val);
    if (g.nodes_[ib].needs_grad) g.grad_of(ib) += n.grad.cwiseProduct(g.nodes_[ia].val);
  });
  return Var(this, id);
}

Var Graph::add_rowvec(Var a, Var row) {
  check(row.rows() == 1 && row.cols() == a.cols(), "add_rowvec: row must be 1 x cols(a)");
  int ia = a.id_, ir = row.id_;
  Mat out = nodes_[ia].val;
  out.rowwise() += nodes_[ir].val.row(0);
  int id = push(std::move(out), {ia, ir}, [ia, ir](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) g.grad_of(ia) += n.grad;
    if (g.nodes_[ir].needs_grad) g.grad_of(ir) += n.grad.colwise().sum();
  });
  return Var(this, id);
}

Var Graph::mul_rowvec(Var a, Var row) {
  check(row.rows() == 1 && row.cols() == a.cols(), "mul_rowvec: row must be 1 x cols(a)");
  int ia = a.id_, ir = row.id_;
  Mat out = nodes_[ia].val.array().rowwise() * nodes_[ir].val.row(0).array();
  int id = push(std::move(out), {ia, ir}, [ia, ir](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) {
      g.grad_of(ia).array() += n.grad.array().rowwise() * g.nodes_[ir].val.row(0).array();
    }
    if (g.nodes_[ir].needs_grad) {
      g.grad_of(ir) += n.grad.cwiseProduct(g.nodes_[ia].val).colwise().sum();
    }
  });
  return Var(this, id);
}

Var Graph::scale(Var a, double s) {
  int ia = a.id_;
  int id = push(nodes_[ia].val * s, {ia}, [ia, s](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) g.grad_of(ia) += n.grad * s;
  });
  return Var(this, id);
}

Var Graph::matmul(Var a, Var b) {
  check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  int ia = a.id_, ib = b.id_;
  int id = push(nodes_[ia].val * nodes_[ib].val, {ia, ib}, [ia, ib](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) g.grad_of(ia) += n.grad * g.nodes_[ib].val.transpose();
    if (g.nodes_[ib].needs_grad) g.grad_of(ib) += g.nodes_[ia].val.transpose() * n.grad;
  });
  return Var(this, id);
}

Var Graph::transpose(Var a) {
  int ia = a.id_;
  int id = push(nodes_[ia].val.transpose(), {ia}, [ia](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) g.grad_of(ia) += n.grad.transpose();
  });
  return Var(this, id);
}

Var Graph::relu(Var a) {
  int ia = a.id_;
  int id = push(nodes_[ia].val.cwiseMax(0.0), {ia}, [ia](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) {
      g.grad_of(ia).array() +=
          n.grad.array() * (g.nodes_[ia].val.array() > 0.0).cast<double>();
    }
  });
  return Var(this, id);
}

Var Graph::sigmoid(Var a) {
  int ia = a.id_;
  Mat s = (1.0 / (1.0 + (-nodes_[ia].val.array()).exp())).matrix();
  int id = push(std::move(s), {ia}, [ia](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) {
      g.grad_of(ia).array() += n.grad.array() * n.val.array() * (1.0 - n.val.array());
    }
  });
  return Var(this, id);
}

Var Graph::softmax_rows(Var a, const Mat* additive_mask) {
  int ia = a.id_;
  Mat z = nodes_[ia].val;
  if (additive_mask) {
    check(additive_mask->rows() == z.rows() && additive_mask->cols() == z.cols(),
          "softmax_rows: mask shape mismatch");
    z += *additive_mask;
  }
  Mat out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    RowArr e = (z.row(r).array() - m).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  int id = push(std::move(out), {ia}, [ia](Graph& g, Node& n) {
    if (!g.nodes_[ia].needs_grad) return;
    Mat& ga = g.grad_of(ia);
    for (Eigen::Index r = 0; r < n.val.rows(); ++r) {
      const double dot = n.grad.row(r).dot(n.val.row(r));
      ga.row(r).array() += n.val.row(r).array() * (n.grad.row(r).array() - dot);
    }
  });
  return Var(this, id);
}

Var Graph::concat_rows(Var a, Var b) {
  check(a.cols() == b.cols(), "concat_rows: column mismatch");
  int ia = a.id_, ib = b.id_;
  Mat out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = nodes_[ia].val;
  out.bottomRows(b.rows()) = nodes_[ib].val;
  const Eigen::Index ra = a.rows();
  int id = push(std::move(out), {ia, ib}, [ia, ib, ra](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) g.grad_of(ia) += n.grad.topRows(ra);
    if (g.nodes_[ib].needs_grad) g.grad_of(ib) += n.grad.bottomRows(n.grad.rows() - ra);
  });
  return Var(this, id);
}

Var Graph::concat_cols(Var a, Var b) {
  check(a.rows() == b.rows(), "concat_cols: row mismatch");
  int ia = a.id_, ib = b.id_;
  Mat out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = nodes_[ia].val;
  out.rightCols(b.cols()) = nodes_[ib].val;
  const Eigen::Index ca = a.cols();
  int id = push(std::move(out), {ia, ib}, [ia, ib, ca](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) g.grad_of(ia) += n.grad.leftCols(ca);
    if (g.nodes_[ib].needs_grad) g.grad_of(ib) += n.grad.rightCols(n.grad.cols() - ca);
  });
  return Var(this, id);
}

Var Graph::slice_rows(Var a, Eigen::Index r0, Eigen::Index n_rows) {
  check(r0 >= 0 && r0 + n_rows <= a.rows(), "slice_rows: out of range");
  int ia = a.id_;
  int id = push(nodes_[ia].val.middleRows(r0, n_rows), {ia}, [ia, r0, n_rows](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) g.grad_of(ia).middleRows(r0, n_rows) += n.grad;
  });
  return Var(this, id);
}

Var Graph::slice_cols(Var a, Eigen::Index c0, Eigen::Index n_cols) {
  check(c0 >= 0 && c0 + n_cols <= a.cols(), "slice_cols: out of range");
  int ia = a.id_;
  int id = push(nodes_[ia].val.middleCols(c0, n_cols), {ia}, [ia, c0, n_cols](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) g.grad_of(ia).middleCols(c0, n_cols) += n.grad;
  });
  return Var(this, id);
}

Var Graph::sum_all(Var a) {
  int ia = a.id_;
  Mat out(1, 1);
  out(0, 0) = nodes_[ia].val.sum();
  int id = push(std::move(out), {ia}, [ia](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) g.grad_of(ia).array() += n.grad(0, 0);
  });
  return Var(this, id);
}

Var Graph::mean_rows(Var a) {
  int ia = a.id_;
  const double inv = 1.0 / static_cast<double>(a.rows());
  Mat out = nodes_[ia].val.colwise().sum() * inv;
  int id = push(std::move(out), {ia}, [ia, inv](Graph& g, Node& n) {
    if (g.nodes_[ia].needs_grad) {
      g.grad_of(ia).array().rowwise() += n.grad.row(0).array() * inv;
    }
  });
  return Var(this, id);
}

Var Graph::gather_rows(Var table, const std::vector<int>& ids) {
  int it = table.id_;
  Mat out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = nodes_[it].val.row(ids[i]);
  }
  int id = push(std::move(out), {it}, [it, ids](Graph& g, Node& n) {
    if (!g.nodes_[it].needs_grad) return;
    Mat& gt = g.grad_of(it);
    for (size_t i = 0; i < ids.size(); ++i) {
      gt.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    }
  });
  return Var(this, id);
}

Var Graph::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  check(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm: gamma must be 1 x d");
  check(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm: beta must be 1 x d");
  int ix = x.id_, igm = gamma.id_, ibt = beta.id_;
  const Eigen::Index d = x.cols();
  const double invd = 1.0 / static_cast<double>(d);

  // Cache normalised rows and the inverse stddev for the backward pass.
  Mat xhat(x.rows(), d);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = nodes_[ix].val.row(r).mean();
    RowArr cen = nodes_[ix].val.row(r).array() - mu;
    const double var = (cen * cen).sum() * invd;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = (cen * is).matrix();
  }
  Mat out = (xhat.array().rowwise() * nodes_[igm].val.row(0).array()).matrix();
  out.rowwise() += nodes_[ibt].val.row(0);

  auto xhat_p = std::make_shared<Mat>(std::move(xhat));
  auto inv_std_p = std::make_shared<Eigen::VectorXd>(std::move(inv_std));
  int id = push(std::move(out), {ix, igm, ibt},
                [ix, igm, ibt, invd, xhat_p, inv_std_p](Graph& g, Node& n) {
    if (g.nodes_[ibt].needs_grad) g.grad_of(ibt) += n.grad.colwise().sum();
    if (g.nodes_[igm].needs_grad) {
      g.grad_of(igm) += n.grad.cwiseProduct(*xhat_p).colwise().sum();
    }
    if (g.nodes_[ix].needs_grad) {
      Mat& gx = g.grad_of(ix);
      const RowArr gamma_row = g.nodes_[igm].val.row(0).array();
      for (Eigen::Index r = 0; r < n.grad.rows(); ++r) {
        RowArr dxhat = n.grad.row(r).array() * gamma_row;
        const double m1 = dxhat.sum() * invd;
        const double m2 = (dxhat * xhat_p->row(r).array()).sum() * invd;
        gx.row(r).array() +=
            (*inv_std_p)(r) * (dxhat - m1 - xhat_p->row(r).array() * m2);
      }
    }
  });
  return Var(this, id);
}

Var Graph::cross_entropy(Var logits, const std::vector<int>& targets, int ignore_id) {
  check(static_cast<Eigen::Index>(targets.size()) == logits.rows(),
        "cross_entropy: one target per row required");
  int il = logits.id_;
  const Mat& z = nodes_[il].val;

  auto probs = std::make_shared<Mat>(z.rows(), z.cols());
  double total = 0.0;
  long count = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    RowArr e = (z.row(r).array() - m).exp();
    const double s = e.sum();
    probs->row(r) = (e / s).matrix();
    if (targets[static_cast<size_t>(r)] == ignore_id) continue;
    const int t = targets[static_cast<size_t>(r)];
    check(t >= 0 && t < z.cols(), "cross_entropy: target out of range");
    total += -(z(r, t) - m - std::log(s));
    ++count;
  }
  check(count > 0, "cross_entropy: no unmasked targets");
  Mat out(1, 1);
  out(0, 0) = total / static_cast<double>(count);

  const double invn = 1.0 / static_cast<double>(count);
  int id = push(std::move(out), {il}, [il, targets, ignore_id, invn, probs](Graph& g, Node& n) {
    if (!g.nodes_[il].needs_grad) return;
    Mat& gl = g.grad_of(il);
    const double go = n.grad(0, 0) * invn;
    for (Eigen::Index r = 0; r < gl.rows(); ++r) {
      const int t = targets[static_cast<size_t>(r)];
      if (t == ignore_id) continue;
      gl.row(r) += go * probs->row(r);
      gl(r, t) -= go;
    }
  });
  return Var(this, id);
}

Var Graph::bce_with_logits(Var logit, double target) {
  check(logit.rows() == 1 && logit.cols() == 1, "bce_with_logits: logit must be 1x1");
  int il = logit.id_;
  const double z = nodes_[il].val(0, 0);
  // softplus(-z) + (1 - y) z, evaluated without overflow.
  const double softplus_neg = std::log1p(std::exp(-std::abs(z))) + std::max(-z, 0.0);
  Mat out(1, 1);
  out(0, 0) = softplus_neg + (1.0 - target) * z;
  int id = push(std::move(out), {il}, [il, target](Graph& g, Node& n) {
    if (!g.nodes_[il].needs_grad) return;
    const double z = g.nodes_[il].val(0, 0);
    const double sig = 1.0 / (1.0 + std::exp(-z));
    g.grad_of(il)(0, 0) += n.grad(0, 0) * (sig - target);
  });
  return Var(this, id);
}

void Graph::backward(Var loss) {
  check(loss.g_ == this, "backward: variable from another graph");
  check(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be 1x1");
  Node& ln = nodes_[static_cast<size_t>(loss.id_)];
  check(ln.needs_grad, "backward: loss does not depend on any parameter");
  grad_of(loss.id_)(0, 0) += 1.0;

  for (int i = loss.id_; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.pref) {
      n.pref->grad += n.grad;
    } else if (n.back) {
      n.back(*this, n);
    }
  }
}

double global_grad_norm(const std::vector<Parameter*>& params) {
  double sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

void clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Parameter* p : params) p->grad *= s;
  }
}

AdamW::AdamW(std::vector<Parameter*> params, double lr, double weight_decay, double beta1,
             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    const Mat mhat = m_[i] / bc1;
    const Mat vhat = v_[i] / bc2;
    p.value.array() -=
        lr_ * (mhat.array() / (vhat.array().sqrt() + eps_) + wd_ * p.value.array());
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace spd::ad
