#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tsembed/errors.hpp"

namespace tsembed {

// ---------------------------------------------------------------------------
// Multinomial logistic regression
//
// Minimizes sum-of-samples cross-entropy plus (1/(2C)) ||W||^2 (weights only,
// bias unpenalized) by L-BFGS with Armijo backtracking from zero
// initialization. Fully deterministic; the objective never increases across
// accepted iterations.

struct LogRegModel {
  Eigen::MatrixXd weights;  // n_classes x d
  Eigen::VectorXd bias;     // n_classes
  std::vector<int> class_ids;  // sorted ascending
  double C = 1.0;
  int max_iterations = 100;
  int iterations_run = 0;
  double final_grad_norm = 0.0;
};

namespace detail {

struct LogRegProblem {
  const Eigen::MatrixXd& X;      // n x d
  const std::vector<int>& yidx;  // class indices
  int n_classes;
  double C;

  // Objective and gradient in the packed (W row-major, then b) layout.
  double eval(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
    const int d = static_cast<int>(X.cols());
    const int n = static_cast<int>(X.rows());
    Eigen::MatrixXd W(n_classes, d);
    for (int c = 0; c < n_classes; ++c)
      W.row(c) = theta.segment(static_cast<Eigen::Index>(c) * d, d).transpose();
    const Eigen::VectorXd b = theta.tail(n_classes);

    Eigen::MatrixXd dW = W / C;  // d/dW of (1/(2C))||W||^2
    Eigen::VectorXd db = Eigen::VectorXd::Zero(n_classes);
    double obj = 0.5 / C * W.squaredNorm();

    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd z = W * X.row(i).transpose() + b;
      const double zmax = z.maxCoeff();
      const Eigen::VectorXd ez = (z.array() - zmax).exp();
      const double denom = ez.sum();
      obj += -(z[yidx[i]] - zmax) + std::log(denom);
      Eigen::VectorXd p = ez / denom;
      p[yidx[i]] -= 1.0;
      dW += p * X.row(i);
      db += p;
    }

    grad.resize(theta.size());
    for (int c = 0; c < n_classes; ++c)
      grad.segment(static_cast<Eigen::Index>(c) * d, d) = dW.row(c).transpose();
    grad.tail(n_classes) = db;
    return obj;
  }
};

}  // namespace detail

inline LogRegModel fit_logistic_regression(const Eigen::MatrixXd& X,
                                           const std::vector<int>& y,
                                           double C = 1.0,
                                           int max_iterations = 100) {
  if (X.rows() < 2) throw UsageError("logistic regression needs n >= 2");
  if (static_cast<Eigen::Index>(y.size()) != X.rows())
    throw ShapeMismatch("labels not parallel to rows of X");
  if (!(C > 0.0)) throw UsageError("regularization strength C must be > 0");

  std::vector<int> classes = y;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2)
    throw SingleClass("labels contain a single distinct class");

  std::vector<int> yidx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    yidx[i] = static_cast<int>(
        std::lower_bound(classes.begin(), classes.end(), y[i]) - classes.begin());

  const int n_classes = static_cast<int>(classes.size());
  const int d = static_cast<int>(X.cols());
  detail::LogRegProblem problem{X, yidx, n_classes, C};

  const Eigen::Index dim = static_cast<Eigen::Index>(n_classes) * d + n_classes;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd grad(dim);
  double fval = problem.eval(theta, grad);

  // L-BFGS two-loop recursion, memory 10.
  const int memory = 10;
  std::vector<Eigen::VectorXd> s_hist, y_hist;
  std::vector<double> rho_hist;
  int iters = 0;
  const double gtol = 1e-8 * std::max(1.0, static_cast<double>(X.rows()));

  for (; iters < max_iterations; ++iters) {
    if (grad.norm() <= gtol) break;

    Eigen::VectorXd dir = -grad;
    const int h = static_cast<int>(s_hist.size());
    std::vector<double> alpha(h);
    for (int k = h - 1; k >= 0; --k) {
      alpha[k] = rho_hist[k] * s_hist[k].dot(dir);
      dir -= alpha[k] * y_hist[k];
    }
    if (h > 0) {
      const double gamma =
          s_hist[h - 1].dot(y_hist[h - 1]) / y_hist[h - 1].squaredNorm();
      dir *= gamma;
    }
    for (int k = 0; k < h; ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(dir);
      dir += (alpha[k] - beta) * s_hist[k];
    }

    double slope = grad.dot(dir);
    if (slope >= 0.0) {  // not a descent direction; fall back
      dir = -grad;
      slope = -grad.squaredNorm();
    }

    double step = iters == 0 ? 1.0 / std::max(1.0, grad.norm()) : 1.0;
    Eigen::VectorXd theta_new;
    Eigen::VectorXd grad_new(dim);
    double f_new = fval;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      theta_new = theta + step * dir;
      f_new = problem.eval(theta_new, grad_new);
      if (f_new <= fval + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    const Eigen::VectorXd s = theta_new - theta;
    const Eigen::VectorXd yv = grad_new - grad;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(yv);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }
    theta = theta_new;
    grad = grad_new;
    fval = f_new;
  }

  LogRegModel model;
  model.class_ids = classes;
  model.C = C;
  model.max_iterations = max_iterations;
  model.iterations_run = iters;
  model.final_grad_norm = grad.norm();
  model.weights.resize(n_classes, d);
  for (int c = 0; c < n_classes; ++c)
    model.weights.row(c) =
        theta.segment(static_cast<Eigen::Index>(c) * d, d).transpose();
  model.bias = theta.tail(n_classes);
  return model;
}

inline Eigen::MatrixXd predict_logistic_proba(const LogRegModel& model,
                                              const Eigen::MatrixXd& X) {
  if (X.cols() != model.weights.cols())
    throw ShapeMismatch("feature dimension differs from the fitted model");
  Eigen::MatrixXd P(X.rows(), model.weights.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Eigen::VectorXd z = model.weights * X.row(i).transpose() + model.bias;
    const double zmax = z.maxCoeff();
    const Eigen::VectorXd ez = (z.array() - zmax).exp();
    P.row(i) = (ez / ez.sum()).transpose();
  }
  return P;
}

// Argmax of the logits; ties resolve to the lowest class id.
inline std::vector<int> predict_logistic_regression(const LogRegModel& model,
                                                    const Eigen::MatrixXd& X) {
  if (X.cols() != model.weights.cols())
    throw ShapeMismatch("feature dimension differs from the fitted model");
  std::vector<int> out(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Eigen::VectorXd z = model.weights * X.row(i).transpose() + model.bias;
    int best = 0;
    for (int c = 1; c < z.size(); ++c)
      if (z[c] > z[best]) best = c;
    out[static_cast<std::size_t>(i)] = model.class_ids[best];
  }
  return out;
}

// ---------------------------------------------------------------------------
// One-nearest-neighbor

struct NearestNeighborModel {
  Eigen::MatrixXd store;  // n x d
  std::vector<int> labels;
};

inline NearestNeighborModel fit_1nn(const Eigen::MatrixXd& X,
                                    const std::vector<int>& y) {
  if (X.rows() < 1) throw UsageError("1-NN needs a non-empty store");
  if (static_cast<Eigen::Index>(y.size()) != X.rows())
    throw ShapeMismatch("labels not parallel to rows of X");
  return NearestNeighborModel{X, y};
}

// Label of the Euclidean-nearest stored embedding; exact distance ties go to
// the lowest stored index.
inline std::vector<int> predict_1nn(const NearestNeighborModel& model,
                                    const Eigen::MatrixXd& X) {
  if (model.store.rows() < 1) throw UsageError("1-NN store is empty");
  if (X.cols() != model.store.cols())
    throw ShapeMismatch("feature dimension differs from the stored embeddings");
  std::vector<int> out(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Eigen::Index best = 0;
    double best_d2 = (model.store.row(0) - X.row(i)).squaredNorm();
    for (Eigen::Index j = 1; j < model.store.rows(); ++j) {
      const double d2 = (model.store.row(j) - X.row(i)).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = j;
      }
    }
    out[static_cast<std::size_t>(i)] = model.labels[static_cast<std::size_t>(best)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Confusion matrix (rows = true class, columns = predicted class)

struct ConfusionMatrix {
  std::vector<int> class_ids;
  Eigen::MatrixX<std::int64_t> counts;

  std::int64_t total() const { return counts.sum(); }

  double accuracy() const {
    const std::int64_t tot = total();
    return tot == 0 ? 0.0
                    : static_cast<double>(counts.diagonal().sum()) /
                          static_cast<double>(tot);
  }

  // Absent (nullopt) when the denominator is zero, never reported as 0.
  std::optional<double> recall(int class_index) const {
    const std::int64_t denom = counts.row(class_index).sum();
    if (denom == 0) return std::nullopt;
    return static_cast<double>(counts(class_index, class_index)) /
           static_cast<double>(denom);
  }

  std::optional<double> precision(int class_index) const {
    const std::int64_t denom = counts.col(class_index).sum();
    if (denom == 0) return std::nullopt;
    return static_cast<double>(counts(class_index, class_index)) /
           static_cast<double>(denom);
  }
};

inline ConfusionMatrix confusion(const std::vector<int>& y_true,
                                 const std::vector<int>& y_pred,
                                 const std::vector<int>& class_list) {
  if (y_true.size() != y_pred.size())
    throw ShapeMismatch("y_true and y_pred have different lengths");
  ConfusionMatrix cm;
  cm.class_ids = class_list;
  cm.counts.setZero(static_cast<Eigen::Index>(class_list.size()),
                    static_cast<Eigen::Index>(class_list.size()));
  auto index_of = [&class_list](int label) {
    const auto it = std::find(class_list.begin(), class_list.end(), label);
    if (it == class_list.end())
      throw DataError("label " + std::to_string(label) +
                      " is not in the class list");
    return static_cast<Eigen::Index>(it - class_list.begin());
  };
  for (std::size_t i = 0; i < y_true.size(); ++i)
    cm.counts(index_of(y_true[i]), index_of(y_pred[i])) += 1;
  return cm;
}

// ---------------------------------------------------------------------------
// PCA export

struct PcaResult {
  Eigen::MatrixXd projected;       // n x kept (kept <= requested out_dim)
  Eigen::VectorXd variances;       // descending
  int requested = 0;
};

// Centered projection onto the top principal components, eigenvalues
// descending. Sign convention: the largest-magnitude loading of each
// component is positive. Components whose eigenvalue is numerically zero are
// dropped, so the output can have fewer columns than requested.
inline PcaResult pca_project(const Eigen::MatrixXd& X, int out_dim = 2) {
  if (out_dim < 1) throw UsageError("pca out_dim must be >= 1");
  if (X.rows() < out_dim)
    throw UsageError("pca needs at least out_dim rows");
  PcaResult result;
  result.requested = out_dim;

  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - mean;
  const double denom = X.rows() > 1 ? static_cast<double>(X.rows() - 1) : 1.0;
  const Eigen::MatrixXd cov = centered.transpose() * centered / denom;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success)
    throw DataError("pca eigendecomposition failed");
  const Eigen::VectorXd evals = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd evecs = solver.eigenvectors();

  const double tol = std::max(evals.cwiseAbs().maxCoeff(), 0.0) * 1e-12;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = evals.size() - 1;
       k >= 0 && static_cast<int>(keep.size()) < out_dim; --k) {
    if (evals[k] <= tol) break;
    keep.push_back(k);
  }

  result.projected.resize(X.rows(), static_cast<Eigen::Index>(keep.size()));
  result.variances.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    Eigen::VectorXd v = evecs.col(keep[c]);
    Eigen::Index max_idx = 0;
    v.cwiseAbs().maxCoeff(&max_idx);
    if (v[max_idx] < 0.0) v = -v;
    result.projected.col(static_cast<Eigen::Index>(c)) = centered * v;
    result.variances[static_cast<Eigen::Index>(c)] = evals[keep[c]];
  }
  return result;
}

}  // namespace tsembed
