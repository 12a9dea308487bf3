#pragma once

#include "cmo/nnet.hpp"

#include <algorithm>
#include <span>

namespace cmo {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every i.
template <typename Scalar, typename Fn>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> central_difference(Fn&& f, Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x,
                                                          Scalar h) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar orig = x[i];
    x[i] = orig + h;
    const Scalar up = f(x);
    x[i] = orig - h;
    const Scalar down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (Scalar(2) * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), zero when both vanish.
template <typename Derived1, typename Derived2>
double relative_error(const Eigen::MatrixBase<Derived1>& a, const Eigen::MatrixBase<Derived2>& b) {
  const double scale = std::max(static_cast<double>(a.norm()), static_cast<double>(b.norm()));
  return scale == 0.0 ? 0.0 : static_cast<double>((a - b).norm()) / scale;
}

struct GradientComparison {
  Model::Vector analytic;
  Model::Vector numeric;
  double relative_error = 0.0;
};

/// Analytic parameter gradient of soft_ce(forward(x)) against central
/// differences of the loss value alone.
inline GradientComparison check_model_gradient(const Model& model, const RowMatrixXd& x, std::span<const int> y_b,
                                               std::span<const int> y_f, std::span<const double> lambda,
                                               std::span<const double> class_weights = {}, double h = 1e-6) {
  Model::Tape tape;
  const auto lg = soft_ce<double>(model.forward(x, &tape), y_b, y_f, lambda, class_weights);
  GradientComparison out;
  out.analytic = model.backward(tape, lg.dlogits);
  Model probe = model;
  auto loss = [&](const Model::Vector& p) {
    probe.set_params(p);
    return soft_ce<double>(probe.forward(x), y_b, y_f, lambda, class_weights).loss;
  };
  out.numeric = central_difference<double>(loss, model.params(), h);
  out.relative_error = relative_error(out.analytic, out.numeric);
  return out;
}

}  // namespace cmo
