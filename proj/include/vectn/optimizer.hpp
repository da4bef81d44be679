#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vectn/fusion_classifier.hpp"

namespace vectn {

// Adam with decoupled weight decay. Decay is scaled by the learning rate,
// so a zero learning rate leaves parameters untouched.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(const GateParams& shape, Options opts) : opts_(opts) {
    shape.for_each([this](const char*, const auto& t) {
      first_.push_back(Matrix::Zero(t.rows(), t.cols()));
      second_.push_back(Matrix::Zero(t.rows(), t.cols()));
    });
  }

  std::size_t steps() const noexcept { return step_; }

  void step(GateParams& params, const GateGradients& grads, double learning_rate) {
    ++step_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    std::size_t k = 0;
    // parameter and gradient tensors are visited in the same order
    std::vector<Eigen::Map<const Matrix>> g;
    grads.for_each([&g](const char*, const auto& t) {
      g.emplace_back(t.data(), t.rows(), t.cols());
    });
    params.for_each([&](const char*, auto& p) {
      Eigen::Map<Matrix> w(p.data(), p.rows(), p.cols());
      const auto& grad = g[k];
      Matrix& m = first_[k];
      Matrix& v = second_[k];
      ++k;
      if (w.size() == 0) return;
      w *= 1.0 - learning_rate * opts_.weight_decay;
      m = opts_.beta1 * m + (1.0 - opts_.beta1) * grad;
      v = opts_.beta2 * v + (1.0 - opts_.beta2) * grad.cwiseAbs2();
      w.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + opts_.epsilon);
    });
  }

 private:
  Options opts_;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  std::size_t step_ = 0;
};

}  // namespace vectn
