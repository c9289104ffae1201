#include "rdrl/quantile.hpp"

#include <cmath>
#include <numeric>

#include "rdrl/adam.hpp"
#include "rdrl/autodiff.hpp"
#include "rdrl/errors.hpp"

namespace rdrl::quantile {

std::vector<double> quantile_fractions(std::size_t m) {
  if (m == 0) throw InvalidArgument("quantile_fractions: M must be >= 1");
  std::vector<double> tau(m);
  for (std::size_t j = 0; j < m; ++j) {
    tau[j] = (2.0 * static_cast<double>(j) + 1.0) / (2.0 * static_cast<double>(m));
  }
  return tau;
}

QuantileDistribution::QuantileDistribution(std::vector<double> atoms) : atoms_(std::move(atoms)) {
  if (atoms_.empty()) throw InvalidArgument("QuantileDistribution: need at least one atom");
  for (double a : atoms_) {
    if (!std::isfinite(a)) throw InvalidArgument("QuantileDistribution: atoms must be finite");
  }
}

double dist_mean(std::span<const double> atoms) {
  if (atoms.empty()) throw InvalidArgument("dist_mean: empty atom set");
  return std::accumulate(atoms.begin(), atoms.end(), 0.0) / static_cast<double>(atoms.size());
}

double dist_std(std::span<const double> atoms, StdNormalization norm) {
  const double mu = dist_mean(atoms);
  double ss = 0.0;
  for (double a : atoms) ss += (a - mu) * (a - mu);
  if (norm == StdNormalization::MeanSquare) ss /= static_cast<double>(atoms.size());
  return std::sqrt(ss);
}

double xi_alpha(std::span<const double> atoms, const PenaltyConfig& cfg) {
  const double mu = dist_mean(atoms);
  if (cfg.alpha == 0.0) return mu;
  return mu - cfg.alpha * dist_std(atoms, cfg.std_normalization);
}

double pinball(double u, double tau) { return u * (tau - (u < 0.0 ? 1.0 : 0.0)); }

double qr_loss(double theta, std::span<const double> samples, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw InvalidArgument("qr_loss: tau must lie in (0, 1)");
  if (samples.empty()) throw InvalidArgument("qr_loss: no samples");
  double s = 0.0;
  for (double y : samples) s += pinball(y - theta, tau);
  return s / static_cast<double>(samples.size());
}

double qr_huber_loss(const QuantileDistribution& pred, std::span<const double> targets, double kappa) {
  if (!(kappa > 0.0)) throw InvalidArgument("qr_huber_loss: kappa must be positive");
  if (targets.empty()) throw InvalidArgument("qr_huber_loss: empty target list");
  const auto tau = pred.fractions();
  double s = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    for (double y : targets) {
      const double u = y - pred.atoms()[j];
      s += std::abs(tau[j] - (u < 0.0 ? 1.0 : 0.0)) * ad::huber(u, kappa);
    }
  }
  return s / (static_cast<double>(pred.size()) * static_cast<double>(targets.size()));
}

std::vector<double> qr_huber_loss_grad(const QuantileDistribution& pred,
                                       std::span<const double> targets, double kappa) {
  if (!(kappa > 0.0)) throw InvalidArgument("qr_huber_loss: kappa must be positive");
  if (targets.empty()) throw InvalidArgument("qr_huber_loss: empty target list");
  const auto tau = pred.fractions();
  const double norm = 1.0 / (static_cast<double>(pred.size()) * static_cast<double>(targets.size()));
  std::vector<double> g(pred.size(), 0.0);
  for (std::size_t j = 0; j < pred.size(); ++j) {
    for (double y : targets) {
      const double u = y - pred.atoms()[j];
      g[j] -= std::abs(tau[j] - (u < 0.0 ? 1.0 : 0.0)) * ad::huber_derivative(u, kappa);
    }
    g[j] *= norm;
  }
  return g;
}

QuantileDistribution fit_quantiles(const std::function<double()>& sample, std::size_t m,
                                   double kappa, const FitConfig& cfg) {
  if (m == 0) throw InvalidArgument("fit_quantiles: M must be >= 1");
  if (!(kappa > 0.0)) throw InvalidArgument("fit_quantiles: kappa must be positive");
  if (cfg.batch == 0) throw InvalidArgument("fit_quantiles: batch must be >= 1");

  std::vector<double> batch(cfg.batch);
  for (double& y : batch) y = sample();
  const double start = std::accumulate(batch.begin(), batch.end(), 0.0) / static_cast<double>(batch.size());

  ad::ParamSet atoms({ad::Matrix::Constant(1, static_cast<Eigen::Index>(m), start)});
  ad::AdamConfig acfg;
  acfg.lr = ad::LrSchedule::linear(cfg.lr_initial, cfg.lr_final, cfg.steps);
  ad::AdamState adam(atoms, acfg);

  std::vector<ad::Matrix> grads{ad::Matrix(1, static_cast<Eigen::Index>(m))};
  std::vector<double> current(m);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (step > 0) {
      for (double& y : batch) y = sample();
    }
    for (std::size_t j = 0; j < m; ++j) current[j] = atoms[0](0, static_cast<Eigen::Index>(j));
    const auto g = qr_huber_loss_grad(QuantileDistribution(current), batch, kappa);
    for (std::size_t j = 0; j < m; ++j) grads[0](0, static_cast<Eigen::Index>(j)) = g[j];
    adam.apply(atoms, grads);
  }
  for (std::size_t j = 0; j < m; ++j) current[j] = atoms[0](0, static_cast<Eigen::Index>(j));
  return QuantileDistribution(std::move(current));
}

}  // namespace rdrl::quantile
