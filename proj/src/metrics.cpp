#include "emi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "emi/data.hpp"
#include "emi/errors.hpp"

namespace emi {

PearsonResult pearson(const std::vector<double>& a,
                      const std::vector<double>& b) {
  if (a.size() != b.size())
    throw ContractError("pearson: length mismatch: " +
                        std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
  const size_t n = a.size();
  if (n < 2)
    throw ContractError("pearson: need at least 2 points, got " +
                        std::to_string(n));
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(n);
  mb /= double(n);
  double cov = 0, va = 0, vb = 0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  cov /= double(n);
  va /= double(n);
  vb /= double(n);
  if (va == 0.0 || vb == 0.0) return {0.0, true};
  return {std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0), false};
}

EvalReport evaluate(const std::vector<std::array<double, 6>>& pred,
                    const std::vector<std::array<double, 6>>& target) {
  if (pred.size() != target.size())
    throw ContractError("evaluate: " + std::to_string(pred.size()) +
                        " predictions vs " + std::to_string(target.size()) +
                        " targets");
  EvalReport r;
  r.n = pred.size();
  double rho_sum = 0, mse_sum = 0;
  for (int k = 0; k < 6; ++k) {
    std::vector<double> p(r.n), t(r.n);
    for (size_t i = 0; i < r.n; ++i) {
      p[i] = pred[i][size_t(k)];
      t[i] = target[i][size_t(k)];
    }
    const auto pr = pearson(p, t);
    r.rho[size_t(k)] = pr.rho;
    r.zero_variance[size_t(k)] = pr.zero_variance;
    rho_sum += pr.rho;
    double se = 0;
    for (size_t i = 0; i < r.n; ++i) se += (p[i] - t[i]) * (p[i] - t[i]);
    r.mse[size_t(k)] = se / double(r.n);
    mse_sum += r.mse[size_t(k)];
  }
  r.mean_rho = rho_sum / 6.0;
  r.mse_overall = mse_sum / 6.0;
  return r;
}

double mse_flat(const std::vector<double>& pred,
                const std::vector<double>& target) {
  if (pred.size() != target.size() || pred.empty())
    throw ContractError("mse: need equal, non-empty inputs");
  double se = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    se += (pred[i] - target[i]) * (pred[i] - target[i]);
  return se / double(pred.size());
}

void write_report_text(std::ostream& os, const EvalReport& r) {
  char buf[128];
  os << "n = " << r.n << "\n";
  std::snprintf(buf, sizeof buf, "%-14s %10s %12s\n", "dimension", "rho",
                "mse");
  os << buf;
  for (int k = 0; k < 6; ++k) {
    std::snprintf(buf, sizeof buf, "%-14s %10.6f %12.8f%s\n",
                  kDimensionNames[size_t(k)], r.rho[size_t(k)],
                  r.mse[size_t(k)],
                  r.zero_variance[size_t(k)] ? "  (zero variance)" : "");
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-14s %10.6f %12.8f\n", "mean", r.mean_rho,
                r.mse_overall);
  os << buf;
}

void write_report_csv(const std::string& path, const EvalReport& r) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "dimension,rho,mse,zero_variance\n";
  char buf[128];
  for (int k = 0; k < 6; ++k) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%d\n",
                  kDimensionNames[size_t(k)], r.rho[size_t(k)],
                  r.mse[size_t(k)], r.zero_variance[size_t(k)] ? 1 : 0);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "mean,%.17g,%.17g,\n", r.mean_rho,
                r.mse_overall);
  out << buf;
  if (!out) throw IoError("short write: " + path);
}

}  // namespace emi
