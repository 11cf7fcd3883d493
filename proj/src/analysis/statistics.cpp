#include "qlink/analysis/statistics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

namespace qlink::analysis {

namespace {

constexpr double kPi = std::numbers::pi;

double normalize_phase(double phi) {
  double p = std::fmod(phi, kPi);
  if (p < 0.0) p += kPi;
  return p;
}

struct FitWork {
  Eigen::Vector3d params;  // A, V, phi0
  double chi2 = 0.0;
};

double chi2_of(std::span<const std::pair<double, double>> pts, const Eigen::Vector3d& p,
               std::span<const double> weights) {
  double chi2 = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double m = p[0] * (1.0 + p[1] * std::cos(2.0 * (pts[i].first - p[2])));
    const double r = pts[i].second - m;
    chi2 += weights[i] * r * r;
  }
  return chi2;
}

}  // namespace

VisibilityFit fit_visibility(std::span<const std::pair<double, double>> points) {
  if (points.size() < 6) throw std::invalid_argument("visibility fit needs >= 6 points");
  double lo = points.front().first, hi = points.front().first;
  for (const auto& [phi, c] : points) {
    lo = std::min(lo, phi);
    hi = std::max(hi, phi);
  }
  if (hi - lo < kPi - 1e-9)
    throw std::invalid_argument("visibility fit needs angles spanning >= pi");

  const std::size_t n = points.size();
  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) weights[i] = 1.0 / std::max(points[i].second, 1.0);

  // Fourier component at frequency 2 of the angle series seeds the basin.
  double mean = 0.0;
  std::complex<double> z{0.0, 0.0};
  for (const auto& [phi, c] : points) {
    mean += c;
    z += c * std::exp(std::complex<double>(0.0, -2.0 * phi));
  }
  mean /= static_cast<double>(n);
  z *= 2.0 / static_cast<double>(n);

  Eigen::Vector3d p;
  p[0] = std::max(mean, 1e-12);
  p[1] = std::min(std::abs(z) / p[0], 1.2);
  p[2] = normalize_phase(-std::arg(z) / 2.0);

  double chi2 = chi2_of(points, p, weights);
  double lambda = 1e-3;
  int iterations = 0;
  bool converged = false;
  Eigen::Matrix3d jtj_final = Eigen::Matrix3d::Zero();

  for (; iterations < 200; ++iterations) {
    Eigen::Matrix3d jtj = Eigen::Matrix3d::Zero();
    Eigen::Vector3d jtr = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const double delta = points[i].first - p[2];
      const double c2 = std::cos(2.0 * delta), s2 = std::sin(2.0 * delta);
      const double model = p[0] * (1.0 + p[1] * c2);
      const double r = points[i].second - model;
      Eigen::Vector3d j(1.0 + p[1] * c2, p[0] * c2, 2.0 * p[0] * p[1] * s2);
      jtj += weights[i] * j * j.transpose();
      jtr += weights[i] * r * j;
    }
    jtj_final = jtj;

    bool improved = false;
    for (int attempt = 0; attempt < 24; ++attempt) {
      Eigen::Matrix3d damped = jtj;
      for (int d = 0; d < 3; ++d) damped(d, d) *= 1.0 + lambda;
      const Eigen::Vector3d step = damped.ldlt().solve(jtr);
      const Eigen::Vector3d trial = p + step;
      const double trial_chi2 = chi2_of(points, trial, weights);
      if (std::isfinite(trial_chi2) && trial_chi2 <= chi2) {
        const double gain = chi2 - trial_chi2;
        p = trial;
        chi2 = trial_chi2;
        lambda = std::max(lambda * 0.3, 1e-12);
        improved = true;
        if (gain <= 1e-12 * (1.0 + chi2)) converged = true;
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e14) break;
    }
    if (converged) break;
    if (!improved) {
      if (chi2 <= 1e-20 || lambda > 1e14) {
        converged = true;
        break;
      }
    }
  }

  VisibilityFit fit;
  fit.iterations = iterations;
  // Fold V < 0 into a phase shift, then clamp into the declared range.
  double amplitude = p[0], visibility = p[1], phase = p[2];
  if (visibility < 0.0) {
    visibility = -visibility;
    phase += kPi / 2.0;
  }
  fit.amplitude = amplitude;
  fit.visibility = std::min(visibility, 1.0);
  fit.phase_rad = normalize_phase(phase);

  double rss = 0.0;
  for (const auto& [phi, c] : points) {
    const double m = amplitude * (1.0 + visibility * std::cos(2.0 * (phi - fit.phase_rad)));
    rss += (c - m) * (c - m);
  }
  fit.residual_rms = std::sqrt(rss / static_cast<double>(n));

  // The phase column of the Jacobian scales with A*V, so flat data leaves
  // the phase unidentifiable.
  const bool degenerate = fit.amplitude * fit.visibility <
                          1e-9 * std::max(std::abs(fit.amplitude), 1.0);
  const double det = jtj_final.determinant();
  if (!degenerate && std::abs(det) > 1e-30) {
    const Eigen::Matrix3d cov = jtj_final.inverse();
    fit.amplitude_err = std::sqrt(std::max(cov(0, 0), 0.0));
    fit.visibility_err = std::sqrt(std::max(cov(1, 1), 0.0));
    fit.phase_err = std::sqrt(std::max(cov(2, 2), 0.0));
  } else {
    fit.amplitude_err = std::sqrt(std::max(fit.amplitude, 1.0) / static_cast<double>(n));
    fit.visibility_err = std::numeric_limits<double>::infinity();
    fit.phase_err = std::numeric_limits<double>::infinity();
    if (std::abs(z) < 1e-9 * std::max(mean, 1.0)) fit.visibility = 0.0;
  }

  if (!converged) throw FitError("visibility fit did not converge", fit);
  return fit;
}

ValueWithError E_from_counts(const SettingCounts& sc) {
  const double n = sc.total();
  if (!(n > 0.0)) throw std::invalid_argument("E_from_counts: zero total counts");
  const double e =
      (sc.counts[0][0] + sc.counts[1][1] - sc.counts[1][0] - sc.counts[0][1]) / n;
  // Poisson propagation through the ratio collapses to sqrt((1 - E^2)/N).
  const double var = std::max(1.0 - e * e, 0.0) / n;
  return {e, std::sqrt(var)};
}

namespace {

bool is_45_apart(double x, double y) {
  const double d = std::abs(normalize_phase(x) - normalize_phase(y));
  return std::abs(d - kPi / 4.0) < 1e-6 || std::abs(d - 3.0 * kPi / 4.0) < 1e-6;
}

}  // namespace

ChshResult S_from_counts(const SettingCounts& s11, const SettingCounts& s12,
                         const SettingCounts& s21, const SettingCounts& s22) {
  ChshResult out;
  out.e = {E_from_counts(s11), E_from_counts(s12), E_from_counts(s21), E_from_counts(s22)};
  out.s.value = out.e[0].value + out.e[1].value + out.e[2].value - out.e[3].value;
  out.s.error = std::sqrt(out.e[0].error * out.e[0].error + out.e[1].error * out.e[1].error +
                          out.e[2].error * out.e[2].error + out.e[3].error * out.e[3].error);
  out.angle_warning = !is_45_apart(s11.malta_angle_rad, s21.malta_angle_rad) ||
                      !is_45_apart(s11.sicily_angle_rad, s12.sicily_angle_rad);
  return out;
}

double s_curve_at(const VisibilityFit& hv, const VisibilityFit& da, double phi_rad) {
  auto e_hv = [&](double x) { return hv.visibility * std::cos(2.0 * (x - hv.phase_rad)); };
  auto e_da = [&](double x) { return da.visibility * std::cos(2.0 * (x - da.phase_rad)); };
  const double shifted = phi_rad + kPi / 4.0;
  return e_hv(phi_rad) + e_da(phi_rad) + e_hv(shifted) - e_da(shifted);
}

std::vector<std::pair<double, double>> s_curve(const VisibilityFit& hv, const VisibilityFit& da,
                                               std::span<const double> phi_grid_rad) {
  std::vector<std::pair<double, double>> out;
  out.reserve(phi_grid_rad.size());
  for (double phi : phi_grid_rad) out.emplace_back(phi, s_curve_at(hv, da, phi));
  return out;
}

ValueWithError qber_from_counts(const SettingCounts& sc, bool anticorrelated) {
  const double n = sc.total();
  if (!(n > 0.0)) throw std::invalid_argument("qber_from_counts: zero total counts");
  const double wrong = anticorrelated ? sc.counts[0][0] + sc.counts[1][1]
                                      : sc.counts[0][1] + sc.counts[1][0];
  const double q = wrong / n;
  return {q, std::sqrt(std::max(q * (1.0 - q), 0.0) / n)};
}

double binary_entropy(double q) {
  if (q <= 0.0 || q >= 1.0) return 0.0;
  return -q * std::log2(q) - (1.0 - q) * std::log2(1.0 - q);
}

double secure_key_rate(double coincidence_rate_cps, double qber,
                       double error_correction_inefficiency) {
  if (!(qber >= 0.0 && qber <= 0.5)) throw std::domain_error("QBER outside [0, 0.5]");
  if (!(coincidence_rate_cps >= 0.0)) throw std::domain_error("negative coincidence rate");
  const double bracket = 1.0 - (1.0 + error_correction_inefficiency) * binary_entropy(qber);
  return coincidence_rate_cps * 0.5 * std::max(bracket, 0.0);
}

BlockStats block_stats(std::span<const double> block_values) {
  if (block_values.empty()) throw std::invalid_argument("block_stats: no blocks");
  BlockStats out;
  out.n_blocks = block_values.size();
  double mean = 0.0;
  for (double v : block_values) mean += v;
  mean /= static_cast<double>(block_values.size());
  out.mean = mean;
  if (block_values.size() < 2) return out;
  double ss = 0.0;
  for (double v : block_values) ss += (v - mean) * (v - mean);
  const double sample_var = ss / static_cast<double>(block_values.size() - 1);
  out.std_of_mean = std::sqrt(sample_var / static_cast<double>(block_values.size()));
  return out;
}

}  // namespace qlink::analysis
