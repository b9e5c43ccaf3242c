#pragma once

#include "ciper/augment.hpp"
#include "ciper/common.hpp"

#include <cmath>
#include <limits>

namespace ciper {

template <typename Scalar>
struct InfoNceResult {
  Scalar loss = 0;
  Matrix<Scalar> grad_z1;
  Matrix<Scalar> grad_z2;
};

/**
 * NT-Xent over the 2N embeddings [z1; z2]. Rows are L2-normalized, each
 * embedding's positive is the other view of the same index, and the
 * candidates are all 2N-1 other embeddings. Mean over the 2N anchors.
 */
template <typename Scalar>
InfoNceResult<Scalar> info_nce(const Matrix<Scalar>& z1, const Matrix<Scalar>& z2, Scalar tau, bool with_grad = true) {
  const Eigen::Index n = z1.rows();
  if (z2.rows() != n || z2.cols() != z1.cols()) throw ShapeError("info_nce: z1 and z2 shapes differ");
  if (n < 2) throw PreconditionError("info_nce: need N >= 2 pairs");
  if (!(tau > Scalar(0))) throw PreconditionError("info_nce: temperature must be positive");

  const Eigen::Index m = 2 * n;
  Matrix<Scalar> z(m, z1.cols());
  z << z1, z2;
  const Vector<Scalar> norms = z.rowwise().norm();
  if (!norms.allFinite()) throw PreconditionError("info_nce: non-finite embedding");
  if ((norms.array() <= Scalar(0)).any()) throw PreconditionError("info_nce: zero-norm row");
  const Matrix<Scalar> u = z.array().colwise() / norms.array();
  Matrix<Scalar> s = (u * u.transpose()) / tau;

  Matrix<Scalar> prob(m, m);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index pos = (i + n) % m;
    s(i, i) = -std::numeric_limits<Scalar>::infinity();
    const Scalar mx = s.row(i).maxCoeff();
    prob.row(i) = (s.row(i).array() - mx).exp();
    const Scalar denom = prob.row(i).sum();
    total += mx + std::log(denom) - s(i, pos);
    prob.row(i) /= denom;
  }
  InfoNceResult<Scalar> r;
  r.loss = total / static_cast<Scalar>(m);
  if (!with_grad) return r;

  // dL/dS = (softmax - onehot(positive)) / 2N; S = U Uᵀ / τ.
  for (Eigen::Index i = 0; i < m; ++i) prob(i, (i + n) % m) -= Scalar(1);
  prob /= static_cast<Scalar>(m);
  const Matrix<Scalar> du = (prob + prob.transpose()) * u / tau;
  const Vector<Scalar> radial = (u.array() * du.array()).rowwise().sum();
  const Matrix<Scalar> dz = ((du.array() - u.array().colwise() * radial.array()).colwise() / norms.array()).matrix();
  r.grad_z1 = dz.topRows(n);
  r.grad_z2 = dz.bottomRows(n);
  return r;
}

template <typename Scalar>
Scalar info_nce_loss(const Matrix<Scalar>& z1, const Matrix<Scalar>& z2, Scalar tau) {
  return info_nce(z1, z2, tau, false).loss;
}

template <typename Scalar>
struct PredictiveResult {
  Scalar loss = 0;  // mse + ce
  Scalar mse = 0;
  Scalar ce = 0;
  Matrix<Scalar> grad_pred1;
  Matrix<Scalar> grad_pred2;
};

/**
 * Augmentation-parameter prediction loss over both views.
 *
 * Continuous and binary slots: Σ over views, N and M of squared error,
 * divided by 2·N·M. Categorical fields: cross-entropy averaged over N and
 * the two views, summed over fields, added to the squared-error term.
 * Predictions are laid out as [M continuous][logit block per categorical].
 */
template <typename Scalar>
PredictiveResult<Scalar> predictive_loss(const Matrix<Scalar>& pred1, const Matrix<Scalar>& pred2,
                                         const Matrix<Scalar>& target1, const Matrix<Scalar>& target2,
                                         const Eigen::MatrixXi& labels1, const Eigen::MatrixXi& labels2,
                                         const AugmentationSchema& schema, bool with_grad = true) {
  const Eigen::Index n = pred1.rows();
  const int m = schema.total_dims();
  const int k = schema.num_categorical();
  if (pred1.cols() != schema.predictor_width() || pred2.rows() != n || pred2.cols() != pred1.cols())
    throw ShapeError("predictive_loss: prediction width does not match schema");
  if (target1.rows() != n || target2.rows() != n || target1.cols() != m || target2.cols() != m)
    throw ShapeError("predictive_loss: target shape does not match predictions");
  if (labels1.rows() != n || labels2.rows() != n || labels1.cols() != k || labels2.cols() != k)
    throw ShapeError("predictive_loss: label shape does not match schema");
  if (n < 1) throw PreconditionError("predictive_loss: empty batch");

  PredictiveResult<Scalar> r;
  if (with_grad) {
    r.grad_pred1 = Matrix<Scalar>::Zero(n, pred1.cols());
    r.grad_pred2 = Matrix<Scalar>::Zero(n, pred1.cols());
  }
  if (m > 0) {
    const Scalar denom = Scalar(2) * static_cast<Scalar>(n) * static_cast<Scalar>(m);
    const Matrix<Scalar> e1 = pred1.leftCols(m) - target1;
    const Matrix<Scalar> e2 = pred2.leftCols(m) - target2;
    r.mse = (e1.squaredNorm() + e2.squaredNorm()) / denom;
    if (with_grad) {
      r.grad_pred1.leftCols(m) = Scalar(2) * e1 / denom;
      r.grad_pred2.leftCols(m) = Scalar(2) * e2 / denom;
    }
  }
  Eigen::Index offset = m;
  for (int c = 0; c < k; ++c) {
    const int classes = schema.categorical_classes()[static_cast<size_t>(c)];
    const Scalar denom = Scalar(2) * static_cast<Scalar>(n);
    auto field_ce = [&](const Matrix<Scalar>& pred, const Eigen::MatrixXi& labels, Matrix<Scalar>* grad) {
      Scalar sum = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int label = labels(i, c);
        if (label < 0 || label >= classes) throw ShapeError("predictive_loss: label out of range");
        const auto logits = pred.row(i).segment(offset, classes);
        const Scalar mx = logits.maxCoeff();
        const RowVector<Scalar> ex = (logits.array() - mx).exp();
        const Scalar z = ex.sum();
        sum += mx + std::log(z) - logits(label);
        if (grad) {
          auto g = grad->row(i).segment(offset, classes);
          g = ex / (z * denom);
          g(label) -= Scalar(1) / denom;
        }
      }
      return sum;
    };
    r.ce += (field_ce(pred1, labels1, with_grad ? &r.grad_pred1 : nullptr) +
             field_ce(pred2, labels2, with_grad ? &r.grad_pred2 : nullptr)) /
            denom;
    offset += classes;
  }
  r.loss = r.mse + r.ce;
  return r;
}

template <typename Scalar>
PredictiveResult<Scalar> predictive_loss(const Matrix<Scalar>& pred1, const Matrix<Scalar>& pred2,
                                         const TargetBatch& t1, const TargetBatch& t2,
                                         const AugmentationSchema& schema, bool with_grad = true) {
  return predictive_loss<Scalar>(pred1, pred2, t1.normalized.cast<Scalar>(), t2.normalized.cast<Scalar>(), t1.labels,
                                 t2.labels, schema, with_grad);
}

struct LossReport {
  double l_c = 0.0;
  double l_p = 0.0;
  double total = 0.0;
  double alpha = 1.0;
  double tau = 0.5;
};

/// total = l_c + alpha · l_p.
LossReport combined_loss(double l_c, double l_p, double alpha, double tau = 0.5);

}  // namespace ciper
