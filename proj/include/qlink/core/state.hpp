#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>

namespace qlink::core {

using Mat4c = Eigen::Matrix4cd;
using Mat2c = Eigen::Matrix2cd;

inline constexpr double kAlgebraTol = 1e-12;  // algebraic identities
inline constexpr double kEigenTol = 1e-10;    // eigenvalue checks

// Two-qubit polarisation density matrix, basis order |HH>,|HV>,|VH>,|VV>.
// Construction validates hermiticity, unit trace and positivity.
struct TwoQubitState {
  Mat4c rho;

  static TwoQubitState from_density(const Mat4c& rho);
  void validate() const;  // throws std::domain_error on violation
  double purity() const;  // Tr(rho^2)
};

enum class Port : std::uint8_t { transmit = 0, reflect = 1 };

// Linear-polariser orientation: H = 0, V = pi/2, D = pi/4, A = -pi/4.
// The reflect port of the analysing beam-splitter sees angle + pi/2.
struct AnalyzerSetting {
  double angle = 0.0;  // radians, normalized to [0, pi)
  Port port = Port::transmit;

  static AnalyzerSetting from_radians(double angle, Port port = Port::transmit);
  double effective_angle() const;
};

double normalize_analyzer_angle(double angle);

enum class Side : std::uint8_t { malta = 0, sicily = 1 };

// Single-qubit unitary acting on one side of the pair (e.g. the residual
// polarisation rotation of the fibre channel).
struct LocalUnitary {
  Mat2c u = Mat2c::Identity();
  Side side = Side::sicily;

  static LocalUnitary identity(Side side);
  // Real rotation of the polarisation plane by theta.
  static LocalUnitary rotation(double theta, Side side);
  // General SU(2) element as Rz(z1) * Ry(y) * Rz(z2).
  static LocalUnitary from_euler(double z1, double y, double z2, Side side);
  void validate() const;  // throws std::domain_error if not unitary
};

// (|VV> - |HH>)/sqrt(2) as a density matrix.
TwoQubitState bell_phi_minus();

// v * rho + (1 - v) * I/4. Throws std::domain_error unless 0 <= v <= 1.
TwoQubitState werner_mix(const TwoQubitState& state, double v);

// Symmetric H<->V flip channel with probability p applied to one qubit.
// Damps the HV-basis correlation envelope by (1 - 2p) while leaving the
// DA-basis envelope untouched.
TwoQubitState hv_flip_mix(const TwoQubitState& state, double p, Side side = Side::sicily);

// Two-parameter noise model used by the link simulator: an H<->V flip with
// probability hv_dephasing on the transmitted qubit followed by Werner
// mixing with visibility v_werner. Correlation envelopes come out as
// V_DA = v_werner and V_HV = v_werner * (1 - 2 * hv_dephasing).
TwoQubitState noisy_pair_state(double v_werner, double hv_dephasing);

TwoQubitState apply_local_unitary(const TwoQubitState& state, const LocalUnitary& u);

struct JointProbs {
  double tt = 0, tr = 0, rt = 0, rr = 0;
  std::array<double, 4> as_array() const { return {tt, tr, rt, rr}; }
  std::array<double, 4> cumulative() const;
};

// Born-rule outcome probabilities for linear analysers at angles a and b.
JointProbs joint_outcome_probs(const TwoQubitState& state, double a_angle, double b_angle);

// E(a, b) = p_tt + p_rr - p_tr - p_rt; equals cos 2(a+b) for phi-minus.
double correlation_E_theory(const TwoQubitState& state, double a_angle, double b_angle);

// S = E(a1,b1) + E(a1,b2) + E(a2,b1) - E(a2,b2).
double chsh_S_theory(const TwoQubitState& state, double a1, double a2, double b1, double b2);

}  // namespace qlink::core
