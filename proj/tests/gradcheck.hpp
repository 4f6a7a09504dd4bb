#pragma once

#include "dynamind/nn/params.hpp"

#include <functional>

namespace dynamind::testing {

// Central-difference gradient check against the tape. The builder must
// construct the scalar loss from the store's current parameter values.
// Returns the maximum relative error over every parameter element.
inline double max_rel_grad_error(nn::ParamStore& store, const std::function<nn::Value(nn::Tape&)>& build,
                                 double step = 1e-5) {
  store.zero_grad();
  {
    nn::Tape tape;
    nn::Value loss = build(tape);
    tape.backward(loss);
  }
  std::map<std::string, nn::Matrix> analytic;
  for (nn::Param* p : store.all()) analytic[p->name] = p->grad;

  double worst = 0.0;
  for (nn::Param* p : store.all()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + step;
      double lp;
      {
        nn::Tape tape;
        lp = build(tape).scalar();
      }
      p->value.data()[i] = keep - step;
      double lm;
      {
        nn::Tape tape;
        lm = build(tape).scalar();
      }
      p->value.data()[i] = keep;
      const double fd = (lp - lm) / (2.0 * step);
      const double ad = analytic[p->name].data()[i];
      const double denom = std::max({std::abs(fd), std::abs(ad), 1e-6});
      worst = std::max(worst, std::abs(fd - ad) / denom);
    }
  }
  return worst;
}

}  // namespace dynamind::testing
