#include "doctest.h"

#include "sdot/linalg.hpp"
#include "sdot/objective.hpp"
#include "sdot/sinkhorn.hpp"
#include "support/generators.hpp"

#include <cmath>

using namespace sdot;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

// Unshifted softmax; only valid for moderate exponents.
Vector naive_softmax(const Vector& c, const Vector& v, double eps, const Vector& nu) {
  Vector w(c.size());
  for (Index j = 0; j < c.size(); ++j) w(j) = nu(j) * std::exp((v(j) - c(j)) / eps);
  return w / w.sum();
}

double naive_h(const Vector& c, const Vector& v, double eps, const Vector& nu) {
  double s = 0.0;
  for (Index j = 0; j < c.size(); ++j) s += nu(j) * std::exp((v(j) - c(j)) / eps);
  return eps + eps * std::log(s) - v.dot(nu);
}

}  // namespace

TEST_CASE("cost_row on small examples") {
  Matrix y(2, 2);
  y << 0.3, 0.7, 3.0, 4.0;
  const auto target = DiscreteMeasure::uniform(y);
  const Vector x = vec({0.3, 0.7});
  CHECK(cost_row(x, target)(0) == 0.0);

  const Vector origin = vec({0.0, 0.0});
  CHECK(cost_row(origin, target)(1) == doctest::Approx(25.0).epsilon(1e-15));
  CHECK(cost_row(origin, target, Cost::normalized())(1) == doctest::Approx(12.5).epsilon(1e-15));

  const auto manhattan = Cost::custom([](const auto& a, const auto& b) { return (a - b).cwiseAbs().sum(); });
  CHECK(cost_row(origin, target, manhattan)(1) == doctest::Approx(7.0));
}

TEST_CASE("cost_row rejects mismatched dimension") {
  const auto target = DiscreteMeasure::uniform(Matrix::Zero(3, 2));
  try {
    cost_row(vec({1.0, 2.0, 3.0}), target);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::dimension_mismatch);
  }
}

TEST_CASE("custom cost must be finite and non-negative") {
  const auto target = DiscreteMeasure::uniform(Matrix::Zero(2, 1));
  const auto negative = Cost::custom([](const auto&, const auto&) { return -1.0; });
  CHECK_THROWS_AS(cost_row(vec({0.0}), target, negative), Error);
}

TEST_CASE("soft assignment examples") {
  SUBCASE("constant v - c gives pi = nu") {
    const Vector nu = vec({0.2, 0.5, 0.3});
    const Vector c = vec({1.0, 2.0, 3.0});
    const Vector pi = soft_assignment(c, Vector(c.array() + 0.4), 0.3, nu);
    CHECK((pi - nu).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("weights in ratio 1:3") {
    // v_2 - v_1 = log 3 with v zero-mean.
    const double d = std::log(3.0);
    const Vector v = vec({-d / 2, d / 2});
    const Vector pi = soft_assignment(Vector::Zero(2), v, 1.0, vec({0.5, 0.5}));
    CHECK(pi(0) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(pi(1) == doctest::Approx(0.75).epsilon(1e-14));
  }
  SUBCASE("shift by 1e3") {
    const Vector nu = vec({0.1, 0.6, 0.3});
    const Vector c = vec({0.1, 0.2, 0.5});
    const Vector v = vec({0.3, -0.1, -0.2});
    const Vector a = soft_assignment(c, v, 0.05, nu);
    const Vector b = soft_assignment(c, Vector(v.array() + 1e3), 0.05, nu);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("soft assignment stays finite for extreme exponents") {
  const Vector nu = vec({0.25, 0.25, 0.5});
  const Vector c = vec({1e6, 0.0, -1e6});
  const Vector v = Vector::Zero(3);
  const auto e = evaluate_point(c, v, 1.0, nu);
  CHECK(e.pi.allFinite());
  CHECK(std::isfinite(e.h));
  CHECK(e.pi(0) < 1e-300);
  CHECK(e.pi(2) == doctest::Approx(1.0));
}

TEST_CASE("h_eps examples") {
  CHECK(h_eps(vec({2.5}), vec({0.0}), 0.1, vec({1.0})) == doctest::Approx(0.1 - 2.5).epsilon(1e-15));
  CHECK(h_eps(vec({0.0, 0.0}), vec({0.0, 0.0}), 0.3, vec({0.5, 0.5})) == doctest::Approx(0.3).epsilon(1e-15));

  const Vector nu = vec({0.3, 0.7});
  const Vector c = vec({0.4, 0.9});
  const Vector v = vec({0.2, -0.2});
  CHECK(h_eps(c, Vector(v.array() + 7.3), 0.2, nu) == doctest::Approx(h_eps(c, v, 0.2, nu)).epsilon(1e-13));
}

TEST_CASE("grad_h examples") {
  const Vector nu = vec({0.5, 0.5});
  CHECK(grad_h(nu, nu).isZero(0.0));
  const Vector g = grad_h(vec({1.0, 0.0}), nu);
  CHECK(g(0) == 0.5);
  CHECK(g(1) == -0.5);
  CHECK(g.norm() == doctest::Approx(std::sqrt(0.5)));

  gen::Gen r(11);
  const Vector pi = r.simplex(10);
  const Vector nu10 = r.simplex(10);
  CHECK(std::abs(grad_h(pi, nu10).sum()) < 1e-14);
}

TEST_CASE("hess_h examples") {
  CHECK(hess_h(vec({1.0}), 0.5).isZero(0.0));
  Matrix expected(2, 2);
  expected << 0.25, -0.25, -0.25, 0.25;
  CHECK((hess_h(vec({0.5, 0.5}), 1.0) - expected).norm() < 1e-15);
}

TEST_CASE("project_zero_mean examples") {
  CHECK(project_zero_mean(vec({1.0, -1.0})) == vec({1.0, -1.0}));
  CHECK(project_zero_mean(vec({1.0, 1.0})).isZero(0.0));
  gen::Gen r(3);
  const Vector v = r.normal_vector(17);
  const Vector p = project_zero_mean(v);
  CHECK((project_zero_mean(p) - p).cwiseAbs().maxCoeff() < 1e-15);
  // Agrees with the explicit projector matrix.
  CHECK((zero_mean_projector(17) * v - p).norm() < 1e-14);
}

TEST_CASE("exact objective with one atom reduces to the pointwise functions") {
  Matrix x(1, 2);
  x << 0.2, 0.1;
  Matrix y(3, 2);
  y << 0.0, 0.0, 1.0, 0.0, 0.5, 0.5;
  const Vector nu = vec({0.2, 0.3, 0.5});
  DiscreteProblem p(DiscreteMeasure::uniform(x), DiscreteMeasure(y, nu), 0.3);
  const Vector v = vec({0.1, -0.3, 0.2});
  const auto obj = exact_objective(p, v);
  const Vector c = cost_row(x.row(0).transpose(), p.target);
  const Vector pi = soft_assignment(c, v, 0.3, nu);
  CHECK(obj.value == doctest::Approx(h_eps(c, v, 0.3, nu)).epsilon(1e-14));
  CHECK((obj.gradient - grad_h(pi, nu)).norm() < 1e-14);
  CHECK((obj.hessian - hess_h(pi, 0.3)).norm() < 1e-14);
}

TEST_CASE("exact gradient vanishes at the Sinkhorn potential") {
  gen::Gen r(20);
  const auto p = r.problem(20, 5, 2, 0.1);
  SinkhornOptions so;
  so.tol = 1e-12;
  const auto s = sinkhorn_solve(p, so);
  CHECK(exact_objective(p, s.v_star, false).gradient.norm() <= 1e-6);
}

TEST_CASE("exact Hessian against central differences of the gradient") {
  gen::Gen r(21);
  const auto p = r.problem(30, 6, 2, 0.1);
  for (int t = 0; t < 5; ++t) {
    const Vector v = r.zero_mean(6, 0.5);
    const Matrix hess = exact_objective(p, v).hessian;
    const double h = 1e-5;
    Matrix fd(6, 6);
    for (Index k = 0; k < 6; ++k) {
      Vector e = Vector::Zero(6);
      e(k) = h;
      fd.col(k) = (exact_objective(p, v + e, false).gradient - exact_objective(p, v - e, false).gradient) / (2 * h);
    }
    CHECK((fd - hess).cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("property: pointwise functions agree with unshifted formulas") {
  gen::Gen r(100);
  for (int t = 0; t < 200; ++t) {
    const Index J = r.integer(1, 12);
    const double eps = r.uniform(0.05, 2.0);
    const Vector nu = r.simplex(J);
    const Vector c = r.normal_vector(J).cwiseAbs();
    const Vector v = r.normal_vector(J);
    const auto e = evaluate_point(c, v, eps, nu);
    CHECK((e.pi - naive_softmax(c, v, eps, nu)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(e.h == doctest::Approx(naive_h(c, v, eps, nu)).epsilon(1e-11));
  }
}

TEST_CASE("property: gradient and Hessian invariants") {
  gen::Gen r(101);
  for (int t = 0; t < 200; ++t) {
    const Index J = r.integer(1, 15);
    const double eps = r.uniform(0.01, 1.0);
    const Vector nu = r.simplex(J);
    const Vector c = r.normal_vector(J).cwiseAbs() * 3.0;
    const Vector v = r.normal_vector(J);
    const Vector pi = soft_assignment(c, v, eps, nu);
    const Vector g = grad_h(pi, nu);
    CHECK(g.norm() <= 2.0);
    CHECK(std::abs(g.sum()) < 1e-13);

    const Matrix hs = hess_h(pi, eps);
    CHECK((hs - hs.transpose()).norm() == 0.0);
    CHECK((hs * Vector::Ones(J)).cwiseAbs().maxCoeff() < 1e-12 / eps);
    Eigen::SelfAdjointEigenSolver<Matrix> es(hs, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12 / eps);
    CHECK(es.eigenvalues().maxCoeff() <= 1.0 / eps + 1e-12 / eps);

    // Translation invariance.
    const double s = r.uniform(-50.0, 50.0);
    const Vector shifted = v.array() + s;
    const auto e0 = evaluate_point(c, v, eps, nu);
    const auto e1 = evaluate_point(c, shifted, eps, nu);
    CHECK((e0.pi - e1.pi).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(e1.h == doctest::Approx(e0.h).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("property: exact objective gradient norm at most 2") {
  gen::Gen r(102);
  for (int t = 0; t < 20; ++t) {
    const auto p = r.problem(r.integer(1, 30), r.integer(1, 8), r.integer(1, 3), r.uniform(0.01, 1.0), t % 2 == 0);
    const Vector v = r.normal_vector(p.target.size()) * 3.0;
    const auto obj = exact_objective(p, v);
    CHECK(obj.gradient.norm() <= 2.0);
    CHECK(std::abs(obj.gradient.sum()) < 1e-12);
    CHECK(obj.hessian.allFinite());
  }
}

TEST_CASE("restricted spectrum helpers") {
  CHECK(std::isinf(restricted_min_eigenvalue(Matrix::Zero(1, 1))));
  const Matrix p = zero_mean_projector(5);
  const Vector ev = restricted_eigenvalues(p);
  CHECK(ev.size() == 4);
  CHECK((ev.array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK((pinv_psd(p) - p).norm() < 1e-12);
  CHECK(numerical_rank(p) == 4);
}

TEST_CASE("property: pinv_psd against SVD pseudo-inverse") {
  gen::Gen r(103);
  for (int t = 0; t < 30; ++t) {
    const Index J = r.integer(2, 10);
    Matrix a = Matrix::Zero(J, J);
    for (int k = 0; k < 3; ++k) {
      const Vector u = r.zero_mean(J, r.uniform(0.1, 2.0));
      a += u * u.transpose();
    }
    const Matrix ours = pinv_psd(a);
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector s = svd.singularValues();
    Vector sinv = Vector::Zero(J);
    for (Index i = 0; i < J; ++i) {
      if (s(i) > 1e-10 * s(0)) sinv(i) = 1.0 / s(i);
    }
    const Matrix oracle = svd.matrixV() * sinv.asDiagonal() * svd.matrixU().transpose();
    CHECK((ours - oracle).norm() <= 1e-8 * std::max(1.0, oracle.norm()));
  }
}
