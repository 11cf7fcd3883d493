#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "qlink/io/tags.hpp"

namespace qlink::corr {

// Histogram of pairwise time differences t_b - t_a over the half-open
// offset domain [start_offset_ps, start_offset_ps + counts.size() * bin_width_ps).
struct Correlogram {
  std::int64_t start_offset_ps = 0;
  std::uint64_t bin_width_ps = 1;
  std::vector<std::uint64_t> counts;

  std::int64_t bin_center(std::size_t k) const {
    return start_offset_ps + static_cast<std::int64_t>(k * bin_width_ps) +
           static_cast<std::int64_t>(bin_width_ps) / 2;
  }
  std::uint64_t total() const;
};

struct PeakStats {
  std::int64_t delay_ps = 0;      // interpolated peak center
  double fwhm_ps = 0.0;           // linear interpolation at half (peak - background)
  double peak_height = 0.0;       // counts in the argmax bin
  double background_mean = 0.0;   // median of far-from-peak bins
  double significance = 0.0;      // (peak - background) / sqrt(background)
};

struct DriftKnot {
  std::uint64_t t_ps = 0;    // position in stream-B time
  std::int64_t delay_ps = 0;
};

// Piecewise-linear delay(t) map compensating residual clock drift.
struct DriftModel {
  std::vector<DriftKnot> knots;  // sorted by t_ps, at least one

  std::int64_t delay_at(std::uint64_t t_ps) const;
  double fitted_slope_ppm() const;  // least-squares slope across the knots
};

class NoCorrelationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Cross-correlation histogram computed with a sorted two-pointer sweep
// (cost is proportional to stream sizes plus the number of pairs inside the
// offset range, never n*m). Streams must be sorted ascending.
Correlogram cross_correlogram(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                              std::uint64_t bin_width_ps, std::int64_t min_offset_ps,
                              std::int64_t max_offset_ps);

PeakStats peak_stats(const Correlogram& histogram);

// Multi-resolution delay search. An acquisition pass scans the full
// +-search_span with 1024 bins, halving the bin width (and, once the
// per-level cost grows, shrinking the analysed prefix of the data) until a
// 5-sigma peak appears; refinement then re-centers on the argmax each round
// while halving the width down to final_bin_ps. Throws NoCorrelationError
// if no significant peak emerges before the work budget runs out.
PeakStats coarse_to_fine_delay(std::span<const std::uint64_t> a,
                               std::span<const std::uint64_t> b, std::uint64_t search_span_ps,
                               std::uint64_t final_bin_ps);

struct CoincidenceRecord {
  std::uint64_t t_a = 0;
  std::uint64_t t_b = 0;
  std::uint8_t channel_a = 0;
  std::uint8_t channel_b = 0;
};

struct CoincidenceSet {
  std::vector<CoincidenceRecord> records;
  std::array<std::array<std::uint64_t, 2>, 2> counts{};  // [channel_a][channel_b]

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::uint64_t count(int ch_a, int ch_b) const {
    return counts[static_cast<std::size_t>(ch_a)][static_cast<std::size_t>(ch_b)];
  }
};

// Greedy earliest-first one-to-one matching of tags with
// |t_b - delay - t_a| <= window/2; every tag joins at most one coincidence.
CoincidenceSet match_coincidences(const io::TagStream& a, const io::TagStream& b,
                                  std::int64_t delay_ps, std::uint64_t window_ps);

// Drift-compensated variant: the delay applied to each b tag comes from the
// model instead of a constant.
CoincidenceSet match_coincidences(const io::TagStream& a, const io::TagStream& b,
                                  const DriftModel& drift, std::uint64_t window_ps);

struct DriftOptions {
  std::uint64_t search_margin_ps = 1'000'000'000;  // +-1 ms around the running delay
  std::uint64_t fine_bin_ps = 1000;
};

// Splits stream B into blocks of block_duration_s, finds the per-block
// delay peak, and returns one knot per block (blocks without a 5-sigma
// peak inherit their nearest significant neighbour).
DriftModel track_drift(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b,
                       double block_duration_s, std::int64_t coarse_delay_ps,
                       DriftOptions options = {});

}  // namespace qlink::corr
