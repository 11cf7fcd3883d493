#include "qlink/core/state.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace qlink::core {

namespace {

using Vec4c = Eigen::Vector4cd;

Eigen::Vector2cd analyzer_ket(double theta) {
  return {std::complex<double>(std::cos(theta), 0.0), std::complex<double>(std::sin(theta), 0.0)};
}

Mat4c kron2(const Mat2c& a, const Mat2c& b) {
  Mat4c out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) out.block<2, 2>(2 * i, 2 * j) = a(i, j) * b;
  return out;
}

}  // namespace

TwoQubitState TwoQubitState::from_density(const Mat4c& rho) {
  TwoQubitState state{rho};
  state.validate();
  return state;
}

void TwoQubitState::validate() const {
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (std::abs(rho(i, j) - std::conj(rho(j, i))) > kAlgebraTol)
        throw std::domain_error("density matrix is not Hermitian");
  if (std::abs(rho.trace() - std::complex<double>(1.0, 0.0)) > kAlgebraTol)
    throw std::domain_error("density matrix trace differs from 1");
  Eigen::SelfAdjointEigenSolver<Mat4c> solver(rho, Eigen::EigenvaluesOnly);
  if (solver.eigenvalues().minCoeff() < -kEigenTol)
    throw std::domain_error("density matrix has a negative eigenvalue");
}

double TwoQubitState::purity() const { return (rho * rho).trace().real(); }

double normalize_analyzer_angle(double angle) {
  const double pi = std::numbers::pi;
  double a = std::fmod(angle, pi);
  if (a < 0.0) a += pi;
  return a;
}

AnalyzerSetting AnalyzerSetting::from_radians(double angle, Port port) {
  return {normalize_analyzer_angle(angle), port};
}

double AnalyzerSetting::effective_angle() const {
  return port == Port::transmit ? angle : normalize_analyzer_angle(angle + std::numbers::pi / 2);
}

LocalUnitary LocalUnitary::identity(Side side) { return {Mat2c::Identity(), side}; }

LocalUnitary LocalUnitary::rotation(double theta, Side side) {
  Mat2c u;
  u << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return {u, side};
}

LocalUnitary LocalUnitary::from_euler(double z1, double y, double z2, Side side) {
  const std::complex<double> i(0.0, 1.0);
  Mat2c rz1 = Mat2c::Zero(), rz2 = Mat2c::Zero(), ry;
  rz1(0, 0) = std::exp(-i * (z1 / 2.0));
  rz1(1, 1) = std::exp(i * (z1 / 2.0));
  rz2(0, 0) = std::exp(-i * (z2 / 2.0));
  rz2(1, 1) = std::exp(i * (z2 / 2.0));
  ry << std::cos(y / 2.0), -std::sin(y / 2.0), std::sin(y / 2.0), std::cos(y / 2.0);
  return {rz1 * ry * rz2, side};
}

void LocalUnitary::validate() const {
  if (((u * u.adjoint()) - Mat2c::Identity()).cwiseAbs().maxCoeff() > kAlgebraTol)
    throw std::domain_error("matrix is not unitary");
}

TwoQubitState bell_phi_minus() {
  Vec4c psi = Vec4c::Zero();
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  psi(0) = -inv_sqrt2;  // |HH>
  psi(3) = inv_sqrt2;   // |VV>
  return TwoQubitState{psi * psi.adjoint()};
}

TwoQubitState werner_mix(const TwoQubitState& state, double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("werner visibility outside [0, 1]");
  return TwoQubitState{v * state.rho + (1.0 - v) * 0.25 * Mat4c::Identity()};
}

TwoQubitState hv_flip_mix(const TwoQubitState& state, double p, Side side) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("flip probability outside [0, 1]");
  Mat2c x;
  x << 0, 1, 1, 0;
  const Mat4c k = side == Side::malta ? kron2(x, Mat2c::Identity()) : kron2(Mat2c::Identity(), x);
  return TwoQubitState{(1.0 - p) * state.rho + p * k * state.rho * k.adjoint()};
}

TwoQubitState noisy_pair_state(double v_werner, double hv_dephasing) {
  return werner_mix(hv_flip_mix(bell_phi_minus(), hv_dephasing), v_werner);
}

TwoQubitState apply_local_unitary(const TwoQubitState& state, const LocalUnitary& u) {
  u.validate();
  const Mat4c big =
      u.side == Side::malta ? kron2(u.u, Mat2c::Identity()) : kron2(Mat2c::Identity(), u.u);
  return TwoQubitState{big * state.rho * big.adjoint()};
}

std::array<double, 4> JointProbs::cumulative() const {
  return {tt, tt + tr, tt + tr + rt, tt + tr + rt + rr};
}

JointProbs joint_outcome_probs(const TwoQubitState& state, double a_angle, double b_angle) {
  const double half_pi = std::numbers::pi / 2;
  auto prob = [&](double a, double b) {
    const Eigen::Vector2cd ka = analyzer_ket(a), kb = analyzer_ket(b);
    Vec4c psi;
    psi << ka(0) * kb(0), ka(0) * kb(1), ka(1) * kb(0), ka(1) * kb(1);
    const double p = (psi.adjoint() * state.rho * psi)(0).real();
    return p < 0.0 ? 0.0 : p;  // clip -1e-17 style round-off
  };
  return JointProbs{prob(a_angle, b_angle), prob(a_angle, b_angle + half_pi),
                    prob(a_angle + half_pi, b_angle), prob(a_angle + half_pi, b_angle + half_pi)};
}

double correlation_E_theory(const TwoQubitState& state, double a_angle, double b_angle) {
  const JointProbs p = joint_outcome_probs(state, a_angle, b_angle);
  return p.tt + p.rr - p.tr - p.rt;
}

double chsh_S_theory(const TwoQubitState& state, double a1, double a2, double b1, double b2) {
  return correlation_E_theory(state, a1, b1) + correlation_E_theory(state, a1, b2) +
         correlation_E_theory(state, a2, b1) - correlation_E_theory(state, a2, b2);
}

}  // namespace qlink::core
