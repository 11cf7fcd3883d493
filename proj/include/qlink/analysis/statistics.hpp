#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace qlink::analysis {

struct ValueWithError {
  double value = 0.0;
  double error = 0.0;
};

// Coincidence counts for one pair of analyzer settings.
// counts[port_a][port_b], port 0 = transmit, 1 = reflect.
struct SettingCounts {
  double malta_angle_rad = 0.0;
  double sicily_angle_rad = 0.0;
  std::array<std::array<double, 2>, 2> counts{};
  double duration_s = 1.0;

  double total() const {
    return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
  }
};

// Result of fitting C(phi) = A * (1 + V * cos 2(phi - phi0)).
struct VisibilityFit {
  double amplitude = 0.0;
  double visibility = 0.0;
  double phase_rad = 0.0;
  double residual_rms = 0.0;
  double amplitude_err = 0.0;
  double visibility_err = 0.0;
  double phase_err = 0.0;  // +inf when the phase is unidentifiable (flat data)
  int iterations = 0;
};

class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, VisibilityFit last_iterate)
      : std::runtime_error(what), last(last_iterate) {}
  VisibilityFit last;
};

// Weighted least squares of the 3-parameter sinusoid with Poisson weights
// sigma^2 = max(count, 1): discrete Fourier initialisation at frequency 2,
// then Levenberg-style damped refinement. Needs >= 6 points spanning >= pi.
VisibilityFit fit_visibility(std::span<const std::pair<double, double>> points);

// E = (C_tt + C_rr - C_tr - C_rt) / total, with Poisson error propagation.
ValueWithError E_from_counts(const SettingCounts& sc);

struct ChshResult {
  ValueWithError s;
  std::array<ValueWithError, 4> e;  // E11, E12, E21, E22
  bool angle_warning = false;       // set if a1-a2 or b1-b2 is not 45 degrees
};

// S = E11 + E12 + E21 - E22 for the settings (a1,b1),(a1,b2),(a2,b1),(a2,b2).
ChshResult S_from_counts(const SettingCounts& s11, const SettingCounts& s12,
                         const SettingCounts& s21, const SettingCounts& s22);

// CHSH quantity composed from the two fitted basis scans exactly as the
// measured curve is constructed: the HV-basis scan gives E(phi, basis) and
// the DA-basis scan gives E(phi, basis + 45 deg);
// S(phi) = E_hv(phi) + E_da(phi) + E_hv(phi + 45 deg) - E_da(phi + 45 deg).
std::vector<std::pair<double, double>> s_curve(const VisibilityFit& hv, const VisibilityFit& da,
                                               std::span<const double> phi_grid_rad);

double s_curve_at(const VisibilityFit& hv, const VisibilityFit& da, double phi_rad);

// QBER in a key basis: the fraction of coincidences in the wrong detector
// combination. anticorrelated selects which combination counts as "right".
ValueWithError qber_from_counts(const SettingCounts& sc, bool anticorrelated = false);

double binary_entropy(double q);

// Asymptotic entanglement-based rate with sifting factor 1/2:
//   R = rate * 1/2 * max(0, 1 - (1 + f) * H2(Q)).
// Throws std::domain_error unless 0 <= Q <= 0.5.
double secure_key_rate(double coincidence_rate_cps, double qber,
                       double error_correction_inefficiency);

struct BlockStats {
  double mean = 0.0;
  double std_of_mean = 0.0;
  std::size_t n_blocks = 0;
};

// Mean and standard error of per-block statistic values.
BlockStats block_stats(std::span<const double> block_values);

}  // namespace qlink::analysis
