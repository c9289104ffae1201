#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace rdrl::quantile {

/// Standard-deviation convention for atom sets.
enum class StdNormalization {
  MeanSquare,    ///< sqrt((1/M) sum (theta_i - mean)^2)
  PaperLiteral,  ///< sqrt(sum (theta_i - mean)^2), no 1/M factor
};

struct PenaltyConfig {
  double alpha = 0.0;
  StdNormalization std_normalization = StdNormalization::MeanSquare;
};

/// tau_m = (2m - 1) / (2M), m = 1..M.
std::vector<double> quantile_fractions(std::size_t m);

/// M atoms at the midpoint fractions. Atoms are not required to be sorted.
class QuantileDistribution {
 public:
  explicit QuantileDistribution(std::vector<double> atoms);

  std::size_t size() const { return atoms_.size(); }
  const std::vector<double>& atoms() const { return atoms_; }
  std::vector<double> fractions() const { return quantile_fractions(atoms_.size()); }

 private:
  std::vector<double> atoms_;
};

double dist_mean(std::span<const double> atoms);
double dist_std(std::span<const double> atoms, StdNormalization norm);
/// mean - alpha * std.
double xi_alpha(std::span<const double> atoms, const PenaltyConfig& cfg);

inline double dist_mean(const QuantileDistribution& z) { return dist_mean(z.atoms()); }
inline double dist_std(const QuantileDistribution& z, const PenaltyConfig& cfg) {
  return dist_std(z.atoms(), cfg.std_normalization);
}
inline double xi_alpha(const QuantileDistribution& z, const PenaltyConfig& cfg) {
  return xi_alpha(z.atoms(), cfg);
}

/// rho_tau(u) = u (tau - 1{u < 0}).
double pinball(double u, double tau);

/// Mean over samples of rho_tau(sample - theta).
double qr_loss(double theta, std::span<const double> samples, double tau);

/// (1/(M K)) sum_j sum_i |tau_j - 1{y_i - theta_j < 0}| huber(y_i - theta_j, kappa).
double qr_huber_loss(const QuantileDistribution& pred, std::span<const double> targets, double kappa);

/// Gradient of qr_huber_loss with respect to the predicted atoms.
std::vector<double> qr_huber_loss_grad(const QuantileDistribution& pred,
                                       std::span<const double> targets, double kappa);

struct FitConfig {
  std::size_t steps = 20000;
  std::size_t batch = 256;
  double lr_initial = 0.05;
  double lr_final = 1e-4;
};

/// Streams i.i.d. draws from `sample` and fits M atoms by minimising the
/// quantile Huber loss with Adam. Small kappa approaches pure quantiles.
QuantileDistribution fit_quantiles(const std::function<double()>& sample, std::size_t m,
                                   double kappa, const FitConfig& cfg = {});

}  // namespace rdrl::quantile
