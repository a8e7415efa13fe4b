#pragma once

#include <array>
#include <ostream>
#include <string>
#include <vector>

// Evaluation lives entirely in double, independent of the model's compute
// type.

namespace emi {

struct PearsonResult {
  double rho = 0.0;
  bool zero_variance = false;  // either input constant; rho reported as 0
};

// Population-normalized Pearson correlation, clamped to [-1, 1].
PearsonResult pearson(const std::vector<double>& a,
                      const std::vector<double>& b);

struct EvalReport {
  size_t n = 0;
  std::array<double, 6> rho{};
  std::array<bool, 6> zero_variance{};
  double mean_rho = 0.0;
  std::array<double, 6> mse{};
  double mse_overall = 0.0;
};

EvalReport evaluate(const std::vector<std::array<double, 6>>& pred,
                    const std::vector<std::array<double, 6>>& target);

double mse_flat(const std::vector<double>& pred,
                const std::vector<double>& target);

void write_report_text(std::ostream& os, const EvalReport& r);
void write_report_csv(const std::string& path, const EvalReport& r);

}  // namespace emi
