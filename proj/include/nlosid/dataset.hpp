#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nlosid/error.hpp"
#include "nlosid/rng.hpp"
#include "nlosid/transient.hpp"

namespace nlosid {

/// One preprocessed pixel histogram with its labels. Ids are 1-based.
struct LabeledSample {
  std::vector<double> features;
  int person_id = 1;
  int position_index = 1;
  int illumination_id = 1;
  int pixel_id = 0;
  bool operator==(const LabeledSample&) const = default;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  std::size_t n_bins = 0;
  int n_classes = 3;
  int n_locations = 7;
  ClothingMode clothing_mode = ClothingMode::different;
  /// Divisor applied to raw counts to obtain features.
  double feature_scale = 1.0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  /// Same metadata, no samples.
  Dataset like() const {
    Dataset d = *this;
    d.samples.clear();
    return d;
  }

  /// Distinct illumination ids in increasing order.
  std::vector<int> illuminations() const {
    std::vector<int> ids;
    for (const auto& s : samples) ids.push_back(s.illumination_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }
};

struct HotPixelMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> hot;  // 1 = excluded
  std::size_t kept_count = 0;

  static HotPixelMask none(int rows, int cols) {
    HotPixelMask m{rows, cols, std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols, 0), 0};
    m.kept_count = m.hot.size();
    return m;
  }
};

/// Bin-wise frame − background, clamped at zero. Keeps the frame's metadata
/// and mask.
inline PixelArrayFrame subtract_background(const PixelArrayFrame& frame, const PixelArrayFrame& background) {
  if (frame.rows != background.rows || frame.cols != background.cols ||
      frame.pixel_count() != background.pixel_count())
    throw DataError("subtract_background: grid shape mismatch (" + std::to_string(frame.rows) + "x" +
                    std::to_string(frame.cols) + " vs " + std::to_string(background.rows) + "x" +
                    std::to_string(background.cols) + ")");
  if (frame.n_bins() != background.n_bins()) throw DataError("subtract_background: bin count mismatch");
  if (frame.bin_width_ps() != background.bin_width_ps()) throw DataError("subtract_background: bin width mismatch");
  PixelArrayFrame out = frame;
  for (std::size_t p = 0; p < out.pixel_count(); ++p) {
    auto& c = out.histograms[p].counts;
    const auto& b = background.histograms[p].counts;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::max(0.0, c[i] - b[i]);
  }
  return out;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    m = 0.5 * (m + lower);
  }
  return m;
}

/// Flags pixels whose summed totals exceed median + threshold·1.4826·MAD of
/// the pixel population. With zero dispersion nothing is flagged.
inline HotPixelMask hot_pixels_from_totals(int rows, int cols, const std::vector<double>& totals,
                                           double threshold_sigma) {
  if (!(threshold_sigma > 0.0)) throw std::invalid_argument("detect_hot_pixels: threshold must be positive");
  HotPixelMask mask = HotPixelMask::none(rows, cols);
  const double med = median_of(totals);
  std::vector<double> dev(totals.size());
  for (std::size_t i = 0; i < totals.size(); ++i) dev[i] = std::abs(totals[i] - med);
  const double sigma = 1.4826 * median_of(std::move(dev));
  if (sigma > 0.0) {
    const double limit = med + threshold_sigma * sigma;
    for (std::size_t i = 0; i < totals.size(); ++i) mask.hot[i] = totals[i] > limit ? 1 : 0;
  }
  mask.kept_count = static_cast<std::size_t>(std::count(mask.hot.begin(), mask.hot.end(), 0));
  return mask;
}

/// Streaming accumulator of per-pixel totals over many frames.
class PixelTotals {
 public:
  void add(const PixelArrayFrame& f) {
    if (totals_.empty()) {
      rows_ = f.rows;
      cols_ = f.cols;
      totals_.assign(f.pixel_count(), 0.0);
    } else if (f.rows != rows_ || f.cols != cols_) {
      throw DataError("detect_hot_pixels: frames have different grid shapes");
    }
    for (std::size_t p = 0; p < f.pixel_count(); ++p) totals_[p] += f.histograms[p].total();
  }
  HotPixelMask mask(double threshold_sigma) const {
    if (totals_.empty()) throw DataError("detect_hot_pixels: no frames");
    return hot_pixels_from_totals(rows_, cols_, totals_, threshold_sigma);
  }
  const std::vector<double>& totals() const { return totals_; }

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<double> totals_;
};

inline HotPixelMask detect_hot_pixels(std::span<const PixelArrayFrame> frames, double threshold_sigma = 5.0) {
  if (frames.empty()) throw DataError("detect_hot_pixels: empty frame list");
  PixelTotals acc;
  for (const auto& f : frames) acc.add(f);
  return acc.mask(threshold_sigma);
}

inline std::vector<double> normalize_features(const TemporalHistogram& h, double global_scale) {
  if (!(global_scale > 0.0)) throw std::invalid_argument("normalize_features: scale must be positive");
  std::vector<double> out(h.counts);
  for (auto& v : out) v /= global_scale;
  return out;
}

/// Background-subtracts a measurement frame and appends one sample per kept
/// pixel with raw (unscaled) features.
inline void append_frame_samples(Dataset& ds, const PixelArrayFrame& frame, const PixelArrayFrame& background,
                                 const HotPixelMask& mask) {
  if (mask.hot.size() != frame.pixel_count() || mask.rows != frame.rows || mask.cols != frame.cols)
    throw DataError("assemble_dataset: mask shape does not match the frame grid");
  if (frame.meta.person_id < 1 || frame.meta.person_id > ds.n_classes)
    throw DataError("assemble_dataset: person_id " + std::to_string(frame.meta.person_id) + " outside 1.." +
                    std::to_string(ds.n_classes));
  if (frame.meta.position_index < 1 || frame.meta.position_index > ds.n_locations)
    throw DataError("assemble_dataset: position index outside 1.." + std::to_string(ds.n_locations));
  if (ds.n_bins == 0) ds.n_bins = frame.n_bins();
  if (frame.n_bins() != ds.n_bins) throw DataError("assemble_dataset: inconsistent bin geometry across frames");
  const auto sub = subtract_background(frame, background);
  for (std::size_t p = 0; p < sub.pixel_count(); ++p) {
    if (mask.hot[p]) continue;
    LabeledSample s;
    s.features = sub.histograms[p].counts;
    s.person_id = frame.meta.person_id;
    s.position_index = frame.meta.position_index;
    s.illumination_id = frame.meta.illumination_id;
    s.pixel_id = static_cast<int>(p);
    ds.samples.push_back(std::move(s));
  }
}

/// Largest feature value in the dataset.
inline double max_feature(const Dataset& ds) {
  double m = 0.0;
  for (const auto& s : ds.samples)
    for (double v : s.features) m = std::max(m, v);
  return m;
}

/// Divides every feature by one shared constant and records it.
inline void apply_scale(Dataset& ds, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("feature scale must be positive");
  for (auto& s : ds.samples)
    for (auto& v : s.features) v /= scale;
  ds.feature_scale *= scale;
}

/// Builds the labelled dataset in canonical (frame, pixel) order. Each
/// measurement frame is paired with the background of the same illumination.
/// Features are divided by `global_scale`, or by the largest
/// background-subtracted count when none is given.
inline Dataset assemble_dataset(std::span<const PixelArrayFrame> frames, std::span<const PixelArrayFrame> backgrounds,
                                const HotPixelMask& mask, std::optional<double> global_scale = std::nullopt,
                                int n_classes = 3, int n_locations = 7) {
  if (mask.kept_count == 0) throw DataError("assemble_dataset: every pixel is masked");
  if (frames.empty()) throw DataError("assemble_dataset: no measurement frames");
  std::map<int, const PixelArrayFrame*> bg_by_illum;
  for (const auto& b : backgrounds) bg_by_illum[b.meta.illumination_id] = &b;
  Dataset ds;
  ds.n_classes = n_classes;
  ds.n_locations = n_locations;
  ds.clothing_mode = frames.front().meta.clothing_mode;
  ds.samples.reserve(frames.size() * mask.kept_count);
  for (const auto& f : frames) {
    auto it = bg_by_illum.find(f.meta.illumination_id);
    if (it == bg_by_illum.end())
      throw DataError("assemble_dataset: no background for illumination " + std::to_string(f.meta.illumination_id));
    append_frame_samples(ds, f, *it->second, mask);
  }
  double scale = global_scale.value_or(max_feature(ds));
  if (!(scale > 0.0)) scale = 1.0;
  apply_scale(ds, scale);
  return ds;
}

/// Leave-one-illumination-out split: test = samples of `holdout`, train = rest.
inline std::pair<Dataset, Dataset> loo_split(const Dataset& ds, int holdout_illumination) {
  Dataset train = ds.like();
  Dataset test = ds.like();
  for (const auto& s : ds.samples) (s.illumination_id == holdout_illumination ? test : train).samples.push_back(s);
  if (test.empty()) throw DataError("loo_split: no samples with illumination " + std::to_string(holdout_illumination));
  return {std::move(train), std::move(test)};
}

inline std::vector<double> one_hot(int index, int n) {
  if (n < 1 || index < 1 || index > n)
    throw std::out_of_range("one_hot: index " + std::to_string(index) + " outside 1.." + std::to_string(n));
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  v[static_cast<std::size_t>(index - 1)] = 1.0;
  return v;
}

/// Seeded Fisher–Yates permutation of 0..n-1.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace nlosid
