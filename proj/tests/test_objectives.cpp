#include "ciper/objectives.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace ciper;
using ciper::test::random_matrix;

namespace {

// Explicit 2N×2N cosine-similarity matrix, masked diagonal, per-row log-softmax.
double nt_xent_oracle(const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2, double tau) {
  const Eigen::Index n = z1.rows();
  std::vector<Eigen::VectorXd> z;
  for (Eigen::Index i = 0; i < n; ++i) z.push_back(z1.row(i).transpose());
  for (Eigen::Index i = 0; i < n; ++i) z.push_back(z2.row(i).transpose());
  const auto m = static_cast<Eigen::Index>(z.size());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    double denom = 0.0;
    double positive = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      const double sim = z[i].dot(z[j]) / (z[i].norm() * z[j].norm()) / tau;
      denom += std::exp(sim);
      if (j == (i + n) % m) positive = sim;
    }
    loss += -(positive - std::log(denom));
  }
  return loss / static_cast<double>(m);
}

double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

template <typename F>
Eigen::MatrixXd central_difference(Eigen::MatrixXd x, F f, double h = 1e-4) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("info_nce matches the brute-force similarity oracle") {
  std::mt19937_64 gen(7);
  for (int n : {2, 4, 8}) {
    for (int d : {4, 16}) {
      for (int trial = 0; trial < 20; ++trial) {
        const Eigen::MatrixXd z1 = random_matrix(n, d, gen);
        const Eigen::MatrixXd z2 = random_matrix(n, d, gen);
        CHECK(std::abs(info_nce_loss<double>(z1, z2, 0.5) - nt_xent_oracle(z1, z2, 0.5)) < 1e-6);
      }
    }
  }
}

TEST_CASE("info_nce on the duplicated standard basis") {
  const Eigen::MatrixXd e = Eigen::MatrixXd::Identity(2, 2);
  // Each anchor sees its positive at similarity 1 and two negatives at 0.
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  CHECK(info_nce_loss<double>(e, e, 1.0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(info_nce_loss<double>(e, e, 1.0) == doctest::Approx(0.5514).epsilon(1e-4));
}

TEST_CASE("info_nce vanishes as temperature goes to zero with orthogonal negatives") {
  const Eigen::MatrixXd e = Eigen::MatrixXd::Identity(4, 4);
  CHECK(info_nce_loss<double>(e, e, 0.01) < 1e-12);
  CHECK(info_nce_loss<double>(e, e, 0.01) >= 0.0);
}

TEST_CASE("info_nce preconditions") {
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 3);
  CHECK_THROWS_AS(info_nce_loss<double>(one, one, 0.5), PreconditionError);
  const Eigen::MatrixXd two = Eigen::MatrixXd::Ones(2, 3);
  CHECK_THROWS_AS(info_nce_loss<double>(two, two, 0.0), PreconditionError);
  CHECK_THROWS_AS(info_nce_loss<double>(two, Eigen::MatrixXd::Ones(3, 3), 0.5), ShapeError);
  Eigen::MatrixXd zero_row = two;
  zero_row.row(1).setZero();
  CHECK_THROWS_AS(info_nce_loss<double>(two, zero_row, 0.5), PreconditionError);
}

TEST_CASE("info_nce gradient matches central differences") {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd z1 = random_matrix(4, 6, gen);
    const Eigen::MatrixXd z2 = random_matrix(4, 6, gen);
    const auto r = info_nce<double>(z1, z2, 0.5);
    const auto g1 = central_difference(z1, [&](const Eigen::MatrixXd& x) { return info_nce_loss<double>(x, z2, 0.5); });
    const auto g2 = central_difference(z2, [&](const Eigen::MatrixXd& x) { return info_nce_loss<double>(z1, x, 0.5); });
    CHECK(relative_error(r.grad_z1, g1) < 1e-4);
    CHECK(relative_error(r.grad_z2, g2) < 1e-4);
  }
}

TEST_CASE("info_nce is invariant to positive row scaling and pair permutation") {
  std::mt19937_64 gen(3);
  const Eigen::MatrixXd z1 = random_matrix(5, 8, gen);
  const Eigen::MatrixXd z2 = random_matrix(5, 8, gen);
  const double base = info_nce_loss<double>(z1, z2, 0.5);

  Eigen::MatrixXd scaled = z1;
  scaled.row(2) *= 4.0;
  CHECK(info_nce_loss<double>(scaled, z2, 0.5) == base);

  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  perm.indices() << 3, 0, 4, 1, 2;
  const Eigen::MatrixXd p1 = perm * z1;
  const Eigen::MatrixXd p2 = perm * z2;
  CHECK(std::abs(info_nce_loss<double>(p1, p2, 0.5) - base) < 1e-9);
}

TEST_CASE("predictive loss matches the per-element definition") {
  std::mt19937_64 gen(5);
  const auto schema = AugmentationSchema::standard_image();
  const int n = 6, m = 10;
  const Eigen::MatrixXd p1 = random_matrix(n, m, gen), p2 = random_matrix(n, m, gen);
  const Eigen::MatrixXd t1 = random_matrix(n, m, gen), t2 = random_matrix(n, m, gen);
  const Eigen::MatrixXi none(n, 0);
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) sum += std::pow(p1(i, j) - t1(i, j), 2) + std::pow(p2(i, j) - t2(i, j), 2);
  const auto r = predictive_loss<double>(p1, p2, t1, t2, none, none, schema);
  CHECK(r.loss == doctest::Approx(sum / (2.0 * n * m)).epsilon(1e-12));
  CHECK(r.ce == 0.0);
}

TEST_CASE("predictive loss reference values") {
  const auto schema = AugmentationSchema::standard_image();
  std::mt19937_64 gen(9);
  const TargetBatch t1 = normalize_targets(random_matrix(8, 10, gen));
  const TargetBatch t2 = normalize_targets(random_matrix(8, 10, gen));

  SUBCASE("perfect prediction") {
    CHECK(predictive_loss<double>(t1.normalized, t2.normalized, t1, t2, schema).loss == 0.0);
  }
  SUBCASE("zero prediction against standardized targets") {
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(8, 10);
    CHECK(predictive_loss<double>(zero, zero, t1, t2, schema).loss == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("uniform logits over K classes") {
    const auto session = AugmentationSchema::dataset(false, true, 5);
    const Eigen::MatrixXd logits = Eigen::MatrixXd::Constant(3, 5, 0.25);
    Eigen::MatrixXi labels(3, 1);
    labels << 0, 4, 2;
    const auto r = predictive_loss<double>(logits, logits, Eigen::MatrixXd(3, 0), Eigen::MatrixXd(3, 0), labels,
                                           labels, session);
    CHECK(r.loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
}

TEST_CASE("predictive loss gradient matches central differences") {
  std::mt19937_64 gen(21);
  const auto schema = AugmentationSchema::dataset(true, true, 4);  // 3 continuous + 4 logits
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 5;
    const Eigen::MatrixXd p1 = random_matrix(n, 7, gen), p2 = random_matrix(n, 7, gen);
    const Eigen::MatrixXd t1 = random_matrix(n, 3, gen), t2 = random_matrix(n, 3, gen);
    Eigen::MatrixXi l1(n, 1), l2(n, 1);
    for (int i = 0; i < n; ++i) {
      l1(i, 0) = static_cast<int>(gen() % 4);
      l2(i, 0) = static_cast<int>(gen() % 4);
    }
    const auto r = predictive_loss<double>(p1, p2, t1, t2, l1, l2, schema);
    const auto g1 = central_difference(
        p1, [&](const Eigen::MatrixXd& x) { return predictive_loss<double>(x, p2, t1, t2, l1, l2, schema, false).loss; });
    const auto g2 = central_difference(
        p2, [&](const Eigen::MatrixXd& x) { return predictive_loss<double>(p1, x, t1, t2, l1, l2, schema, false).loss; });
    CHECK(relative_error(r.grad_pred1, g1) < 1e-4);
    CHECK(relative_error(r.grad_pred2, g2) < 1e-4);
  }
}

TEST_CASE("predictive loss rejects mismatched shapes") {
  const auto schema = AugmentationSchema::standard_image();
  const Eigen::MatrixXd p = Eigen::MatrixXd::Zero(4, 9);
  const Eigen::MatrixXd t = Eigen::MatrixXd::Zero(4, 10);
  const Eigen::MatrixXi none(4, 0);
  CHECK_THROWS_AS(predictive_loss<double>(p, p, t, t, none, none, schema), ShapeError);
  const Eigen::MatrixXd good = Eigen::MatrixXd::Zero(4, 10);
  CHECK_THROWS_AS(predictive_loss<double>(good, good, p, p, none, none, schema), ShapeError);
}

TEST_CASE("combined loss") {
  CHECK(combined_loss(0.7, 0.3, 1.0).total == doctest::Approx(1.0));
  CHECK(combined_loss(2.0, 0.5, 2.0).total == 3.0);
  const auto r = combined_loss(1.25, 9.0, 0.0);
  CHECK(r.total == r.l_c);
  CHECK(r.l_p == 9.0);
  CHECK_THROWS_AS(combined_loss(1.0, 1.0, -0.1), PreconditionError);
}
