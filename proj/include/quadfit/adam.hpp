#pragma once

#include <Eigen/Core>
#include <cmath>

namespace quadfit {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment first-order optimizer state over a flat parameter vector.
/// Coordinates with mask 0 are never touched.
class Adam {
 public:
  Adam(Eigen::Index size, AdamConfig config = {})
      : config_(config), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

  void step(Eigen::VectorXd& x, const Eigen::VectorXd& grad, const Eigen::VectorXd& mask, double step_size) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, t_);
    const double bc2 = 1.0 - std::pow(config_.beta2, t_);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (mask[i] == 0.0) continue;
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double m_hat = m_[i] / bc1;
      const double v_hat = v_[i] / bc2;
      x[i] -= step_size * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }

  void reset() {
    m_.setZero();
    v_.setZero();
    t_ = 0;
  }

  int iterations() const { return t_; }

 private:
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  int t_ = 0;
};

}  // namespace quadfit
