#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qlink/core/state.hpp"
#include "qlink/io/tags.hpp"
#include "qlink/sim/config.hpp"
#include "qlink/sim/rng.hpp"

namespace qlink::sim {

// Homogeneous Poisson emission times in picoseconds over [0, duration_s).
// Deterministic for a fixed seed.
std::vector<double> emit_pairs(double rate_hz, double duration_s, std::uint64_t seed);

// Which detector fired at each station for one pair; -1 means the photon
// was lost on that arm.
struct PairOutcome {
  int malta_port = -1;
  int sicily_port = -1;
};

// Samples the joint analyzer outcome from the Born-rule probabilities, then
// thins each arm by its survival probability (arm efficiency x fibre
// transmission x detector efficiency, folded by the caller per channel).
PairOutcome detect_pair(const core::JointProbs& probs,
                        const std::array<double, 2>& malta_survival,
                        const std::array<double, 2>& sicily_survival, Rng& rng);

// Detector response for one channel: Gaussian jitter of the configured
// FWHM, Poissonian dark counts uniform over [0, duration], non-paralyzable
// dead time, output sorted. Times are picoseconds.
std::vector<double> apply_detector(std::vector<double> photon_times_ps, const DetectorConfig& cfg,
                                   double duration_s, Rng& rng);

class ClockRangeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// t -> round((t * (1 + drift_ppm * 1e-6) + offset_ps) / resolution) * resolution.
// Throws ClockRangeError if the result leaves the unsigned 64-bit range.
std::uint64_t apply_clock_ps(double t_ps, const ClockConfig& cfg);
io::TagStream apply_clock(const io::TagStream& tags, const ClockConfig& cfg);

struct SimResult {
  io::TagStream malta;
  io::TagStream sicily;
};

// Full chain: Poisson emission -> per-pair Born sampling under the schedule
// angles -> channel unitary -> loss/efficiency thinning -> fibre delay and
// dispersion on the sicily arm -> detector model -> clock model. Fully
// deterministic per seed; schedule intervals may be simulated in parallel
// (QLINK_THREADS caps the worker count) without changing the output.
SimResult simulate_run(const LinkConfig& cfg, std::uint64_t seed);

// Analytic coincidence rate: pair_rate x eta_malta x 10^(-loss/10) x eta_sicily
// (detector efficiencies averaged over the Born outcome distribution at the
// first schedule entry's angles).
double analytic_coincidence_rate(const LinkConfig& cfg);

// Worker cap honoured by internal parallel sections: QLINK_THREADS if set,
// otherwise the hardware concurrency.
unsigned thread_cap();

}  // namespace qlink::sim
