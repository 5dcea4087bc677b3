#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mosbench/common.hpp"
#include "mosbench/nn.hpp"

namespace mosbench {

enum class OptimizerKind { kAdam, kSgd };

inline const char* to_string(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "ADAM" : "SGD";
}

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "ADAM" || s == "adam") return OptimizerKind::kAdam;
  if (s == "SGD" || s == "sgd") return OptimizerKind::kSgd;
  throw MosError(ErrorCode::kConfig, "unknown optimizer '" + s + "'");
}

inline double default_learning_rate(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? 0.001 : 0.0001;
}

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Applies accumulated gradients to trainable parameters only.
  virtual void step(const std::vector<Parameter*>& params) = 0;

  static void zero_grad(const std::vector<Parameter*>& params) {
    for (auto* p : params) p->zero_grad();
  }
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(const std::vector<Parameter*>& params) override {
    for (auto* p : params)
      if (p->trainable) p->value -= lr_ * p->grad;
  }

 private:
  double lr_;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter*>& params) override {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (auto* p : params) {
      if (!p->trainable) continue;
      auto& st = state_[p];
      if (st.m.size() == 0) {
        st.m.setZero(p->value.rows(), p->value.cols());
        st.v.setZero(p->value.rows(), p->value.cols());
      }
      st.m = b1_ * st.m + (1.0 - b1_) * p->grad;
      st.v = b2_ * st.v + (1.0 - b2_) * p->grad.cwiseProduct(p->grad);
      const Mat mhat = st.m / bc1;
      const Mat vhat = st.v / bc2;
      p->value.array() -=
          lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
    }
  }

 private:
  struct State {
    Mat m, v;
  };
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::map<Parameter*, State> state_;
};

inline std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind,
                                                 double lr) {
  if (lr <= 0.0)
    throw MosError(ErrorCode::kConfig, "learning rate must be positive");
  if (kind == OptimizerKind::kAdam) return std::make_unique<Adam>(lr);
  return std::make_unique<Sgd>(lr);
}

}  // namespace mosbench
