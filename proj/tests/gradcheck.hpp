#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "emi/rng.hpp"
#include "emi/tape.hpp"
#include "emi/tensor.hpp"

// Central finite-difference gradient verification, always at 64-bit
// precision. The error metric is |analytic - fd| / max(1, |analytic|, |fd|):
// absolute for O(1) magnitudes, relative for large ones, so a single
// threshold covers both regimes.

namespace gradcheck {

struct Result {
  std::size_t checked = 0;
  double max_err = 0.0;
  std::string worst;  // "name[i] analytic=... fd=..."
};

// make_loss must rebuild the full forward from current parameter values on
// every call and return a scalar tensor. params lists every tensor whose
// gradient should be verified (leaf inputs may be included too).
template <class LossFn>
Result check(LossFn&& make_loss,
             const std::vector<std::pair<std::string, emi::TensorT<double>*>>& params,
             emi::Rng& pick, int per_tensor, double h = 1e-5) {
  // Analytic pass.
  {
    emi::TapeT<double> tp;
    auto loss = make_loss(tp);
    tp.backward(loss);
  }
  std::vector<std::vector<double>> saved_grads;
  saved_grads.reserve(params.size());
  for (const auto& [name, t] : params) {
    if (t->has_grad())
      saved_grads.push_back(t->grad());
    else
      saved_grads.emplace_back(t->numel(), 0.0);
  }

  auto loss_value = [&]() {
    emi::TapeT<double> tp(false);
    return make_loss(tp).item();
  };

  Result r;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& t = *params[p].second;
    const int n = int(t.numel());
    const int reps = std::min(per_tensor, n);
    for (int rep = 0; rep < reps; ++rep) {
      const std::size_t i = reps == n ? std::size_t(rep)
                                      : std::size_t(pick.next_below(uint64_t(n)));
      const double save = t.value()[i];
      t.value()[i] = save + h;
      const double lp = loss_value();
      t.value()[i] = save - h;
      const double lm = loss_value();
      t.value()[i] = save;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = saved_grads[p][i];
      const double err =
          std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      ++r.checked;
      if (err > r.max_err) {
        r.max_err = err;
        r.worst = params[p].first + "[" + std::to_string(i) +
                  "] analytic=" + std::to_string(an) +
                  " fd=" + std::to_string(fd);
      }
    }
    t.zero_grad();
  }
  return r;
}

}  // namespace gradcheck
