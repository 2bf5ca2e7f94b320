#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "nlosid/config.hpp"
#include "nlosid/error.hpp"
#include "nlosid/geometry.hpp"
#include "nlosid/parallel.hpp"
#include "nlosid/rng.hpp"
#include "nlosid/scene.hpp"

namespace nlosid {

/// Photon counts per time bin for one pixel. Bin i covers
/// [t0_ps + i·bin_width_ps, t0_ps + (i+1)·bin_width_ps) after the trigger.
struct TemporalHistogram {
  std::vector<double> counts;
  double bin_width_ps = 50.0;
  double t0_ps = 0.0;

  TemporalHistogram() = default;
  TemporalHistogram(std::size_t n_bins, double bin_width, double t0 = 0.0)
      : counts(n_bins, 0.0), bin_width_ps(bin_width), t0_ps(t0) {}

  std::size_t n_bins() const { return counts.size(); }
  double total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }
  std::size_t peak_bin() const {
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  bool operator==(const TemporalHistogram&) const = default;
};

struct DetectorSpec {
  int rows = 32;
  int cols = 32;
  double irf_fwhm_ps = 120.0;
  double bin_width_ps = 50.0;
  double rep_period_ns = 12.5;  // 80 MHz
  double pulses_per_acquisition = 8e7;
  double hot_pixel_fraction = 0.22;
  /// Expected dark counts per bin per acquisition.
  double dark_rate_per_bin = 1.0;
  /// Hot pixels belong to the sensor, so their layout comes from a sensor
  /// seed rather than the per-frame noise seed.
  std::uint64_t hot_pixel_seed = 0x5ead5eedull;
  /// Per-bin upper bound of the uniform noise emitted by hot pixels.
  double hot_pixel_level = 2000.0;
  /// Radiometric calibration constant k (photons per pulse per unit geometry).
  double calibration_k = 1.2e-3;
  /// Peak expected counts and FWHM of the stationary wall background.
  double background_amplitude = 12.0;
  double background_width_ps = 600.0;

  std::size_t pixel_count() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }

  /// Bins per repetition period. Throws unless the window tiles exactly.
  std::size_t n_bins() const {
    const double ratio = rep_period_ns * 1000.0 / bin_width_ps;
    const double rounded = std::round(ratio);
    if (!(rounded >= 1.0) || std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio))
      throw ConfigError("detector window does not tile the repetition period: " +
                        std::to_string(rep_period_ns) + " ns / " + std::to_string(bin_width_ps) + " ps");
    return static_cast<std::size_t>(rounded);
  }
};

inline void validate(const DetectorSpec& d) {
  if (d.rows < 1 || d.cols < 1 || d.pixel_count() > 65536)
    throw ConfigError("detector grid must have 1..65536 pixels");
  if (!(d.bin_width_ps > 0.0) || !(d.rep_period_ns > 0.0)) throw ConfigError("bin width and period must be positive");
  (void)d.n_bins();
  if (!(d.irf_fwhm_ps >= 0.0)) throw ConfigError("irf_fwhm_ps must be non-negative");
  if (!(d.pulses_per_acquisition > 0.0)) throw ConfigError("pulses_per_acquisition must be positive");
  if (!(d.hot_pixel_fraction >= 0.0 && d.hot_pixel_fraction < 1.0))
    throw ConfigError("hot_pixel_fraction must lie in [0, 1)");
  if (!(d.dark_rate_per_bin >= 0.0) || !(d.hot_pixel_level >= 0.0) || !(d.calibration_k >= 0.0) ||
      !(d.background_amplitude >= 0.0) || !(d.background_width_ps > 0.0))
    throw ConfigError("detector rates, levels and calibration must be non-negative");
}

inline DetectorSpec load_detector(const KeyValueConfig& cfg) {
  DetectorSpec d;
  d.rows = static_cast<int>(cfg.get_int("detector.rows", d.rows));
  d.cols = static_cast<int>(cfg.get_int("detector.cols", d.cols));
  d.irf_fwhm_ps = cfg.get_double("detector.irf_fwhm_ps", d.irf_fwhm_ps);
  d.bin_width_ps = cfg.get_double("detector.bin_width_ps", d.bin_width_ps);
  d.rep_period_ns = cfg.get_double("detector.rep_period_ns", d.rep_period_ns);
  d.pulses_per_acquisition = cfg.get_double("detector.pulses_per_acquisition", d.pulses_per_acquisition);
  d.hot_pixel_fraction = cfg.get_double("detector.hot_pixel_fraction", d.hot_pixel_fraction);
  d.dark_rate_per_bin = cfg.get_double("detector.dark_rate_per_bin", d.dark_rate_per_bin);
  d.hot_pixel_seed = cfg.get_u64("detector.hot_pixel_seed", d.hot_pixel_seed);
  d.hot_pixel_level = cfg.get_double("detector.hot_pixel_level", d.hot_pixel_level);
  d.calibration_k = cfg.get_double("detector.calibration_k", d.calibration_k);
  d.background_amplitude = cfg.get_double("detector.background_amplitude", d.background_amplitude);
  d.background_width_ps = cfg.get_double("detector.background_width_ps", d.background_width_ps);
  validate(d);
  return d;
}

enum class ClothingMode : std::uint8_t { different = 0, same = 1 };

inline const char* to_string(ClothingMode m) { return m == ClothingMode::same ? "same" : "different"; }

inline ClothingMode parse_clothing_mode(const std::string& s) {
  if (s == "different") return ClothingMode::different;
  if (s == "same") return ClothingMode::same;
  throw ConfigError("clothing_mode must be 'same' or 'different', got '" + s + "'");
}

struct FrameMeta {
  int person_id = 0;       // 0 = background frame
  int position_index = 0;  // 1..7, 0 = none
  int illumination_id = 1;
  ClothingMode clothing_mode = ClothingMode::different;
  std::uint64_t seed = 0;
  bool noiseless = false;
  bool operator==(const FrameMeta&) const = default;
};

/// One acquisition: a rows×cols grid of histograms in row-major order.
struct PixelArrayFrame {
  int rows = 0;
  int cols = 0;
  std::vector<TemporalHistogram> histograms;
  std::vector<std::uint8_t> hot_mask;  // 1 = hot
  FrameMeta meta;

  std::size_t pixel_count() const { return histograms.size(); }
  std::size_t n_bins() const { return histograms.empty() ? 0 : histograms.front().n_bins(); }
  double bin_width_ps() const { return histograms.empty() ? 0.0 : histograms.front().bin_width_ps; }
  bool operator==(const PixelArrayFrame&) const = default;
};

/// Throws DataError unless every histogram shares the grid's bin geometry.
inline void validate(const PixelArrayFrame& f) {
  if (f.rows < 1 || f.cols < 1) throw DataError("frame grid must be non-empty");
  const auto n = static_cast<std::size_t>(f.rows) * static_cast<std::size_t>(f.cols);
  if (f.histograms.size() != n || f.hot_mask.size() != n)
    throw DataError("frame holds " + std::to_string(f.histograms.size()) + " histograms for a " +
                    std::to_string(f.rows) + "x" + std::to_string(f.cols) + " grid");
  for (const auto& h : f.histograms) {
    if (h.n_bins() != f.n_bins() || h.bin_width_ps != f.bin_width_ps() || h.t0_ps != f.histograms[0].t0_ps)
      throw DataError("histograms within a frame must share bin geometry");
  }
}

// ---------------------------------------------------------------------------
// Forward model
// ---------------------------------------------------------------------------

/// Expected photons returned by one facet: inverse square on each target
/// segment with Lambertian cosines at the facet. Back-facing facets return 0.
inline double radiometric_weight(const Patch& patch, const Point3& laser_spot, const Point3& observed_spot,
                                 double emitted_energy, double k = 1.0) {
  const Vec3 to_laser = laser_spot - patch.center;
  const Vec3 to_observed = observed_spot - patch.center;
  const double d1 = norm(to_laser);
  const double d2 = norm(to_observed);
  const double cos_in = dot(patch.normal, to_laser) / d1;
  const double cos_out = dot(patch.normal, to_observed) / d2;
  if (cos_in <= 0.0 || cos_out <= 0.0) return 0.0;
  return emitted_energy * patch.albedo * patch.area * cos_in * cos_out / (d1 * d1 * d2 * d2) * k;
}

/// Arrival time modulo the laser period, in [0, period).
inline double fold_to_window(double tof_ns, double rep_period_ns) {
  if (!(rep_period_ns > 0.0)) throw std::invalid_argument("fold_to_window: period must be positive");
  double r = std::fmod(tof_ns, rep_period_ns);
  if (r < 0.0) r += rep_period_ns;
  if (r >= rep_period_ns) r = 0.0;
  return r;
}

/// Bin index for an arrival time already folded into the window.
inline std::size_t window_bin(double folded_ns, double t0_ps, double bin_width_ps, std::size_t n_bins) {
  const double pos = (folded_ns * 1000.0 - t0_ps) / bin_width_ps;
  auto b = static_cast<std::int64_t>(std::floor(pos));
  const auto n = static_cast<std::int64_t>(n_bins);
  b %= n;
  if (b < 0) b += n;
  return static_cast<std::size_t>(b);
}

/// Full echo travel time (ns) for a facet seen from one wall spot, including
/// the fixed source and detector legs.
inline double echo_time_ns(const Scene& scene, const Point3& patch_center, const Point3& observed_spot) {
  return time_of_flight(scene.laser_leg + path_length(scene.laser_spot, patch_center, observed_spot) +
                        scene.detector_to_wall_distance);
}

/// Noiseless, pre-IRF transient of a facet set seen by the pixel whose wall
/// spot is observed_spot + pixel_offset. Each facet deposits its whole
/// weight in one bin.
inline TemporalHistogram ideal_transient(const Scene& scene, const PatchSet& patches, const DetectorSpec& detector,
                                         const Vec3& pixel_offset, double emitted_energy) {
  if (patches.empty()) throw std::invalid_argument("ideal_transient: empty patch set");
  const std::size_t n_bins = detector.n_bins();
  TemporalHistogram h(n_bins, detector.bin_width_ps);
  const Point3 observed = scene.observed_spot + pixel_offset;
  for (const auto& p : patches) {
    const double w = radiometric_weight(p, scene.laser_spot, observed, emitted_energy, detector.calibration_k);
    if (w == 0.0) continue;
    const double t = fold_to_window(echo_time_ns(scene, p.center, observed), detector.rep_period_ns);
    h.counts[window_bin(t, h.t0_ps, h.bin_width_ps, n_bins)] += w;
  }
  return h;
}

inline TemporalHistogram ideal_transient(const Scene& scene, const PatchSet& patches, const DetectorSpec& detector,
                                         const Vec3& pixel_offset = {}) {
  return ideal_transient(scene, patches, detector, pixel_offset, detector.pulses_per_acquisition);
}

/// Unit-sum Gaussian kernel sampled at integer bin offsets −half..half.
inline std::vector<double> gaussian_kernel(double fwhm_ps, double bin_width_ps) {
  const double sigma = fwhm_ps / (2.0 * std::sqrt(2.0 * std::log(2.0))) / bin_width_ps;
  const auto half = static_cast<int>(std::ceil(6.0 * sigma));
  std::vector<double> k(2 * half + 1);
  double sum = 0.0;
  for (int j = -half; j <= half; ++j) sum += k[j + half] = std::exp(-0.5 * (j / sigma) * (j / sigma));
  for (auto& v : k) v /= sum;
  return k;
}

/// Circular convolution with a unit-sum Gaussian of the given FWHM; the
/// window is periodic, so mass leaving one edge re-enters at the other.
inline TemporalHistogram convolve_irf(const TemporalHistogram& h, double fwhm_ps) {
  if (!(fwhm_ps >= 0.0)) throw std::invalid_argument("convolve_irf: fwhm must be non-negative");
  if (fwhm_ps == 0.0 || h.n_bins() == 0) return h;
  const auto kernel = gaussian_kernel(fwhm_ps, h.bin_width_ps);
  const auto half = static_cast<std::int64_t>(kernel.size() / 2);
  const auto n = static_cast<std::int64_t>(h.n_bins());
  TemporalHistogram out(h.n_bins(), h.bin_width_ps, h.t0_ps);
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = h.counts[i];
    if (v == 0.0) continue;
    for (std::int64_t j = -half; j <= half; ++j) {
      auto t = (i + j) % n;
      if (t < 0) t += n;
      out.counts[t] += v * kernel[j + half];
    }
  }
  return out;
}

/// Independent Poisson draw per bin; bin i uses the stream split(i) of `seed`.
inline TemporalHistogram sample_poisson(const TemporalHistogram& expected, std::uint64_t seed) {
  TemporalHistogram out(expected.n_bins(), expected.bin_width_ps, expected.t0_ps);
  const CounterRng root(seed);
  for (std::size_t i = 0; i < expected.n_bins(); ++i) {
    const double lambda = expected.counts[i];
    if (!std::isfinite(lambda) || lambda < 0.0)
      throw std::invalid_argument("sample_poisson: expectations must be finite and non-negative");
    if (lambda == 0.0) continue;
    auto rng = root.split(i);
    out.counts[i] = static_cast<double>(poisson(rng, lambda));
  }
  return out;
}

/// Sensor hot-pixel layout: exactly round(fraction·N) pixels, chosen by a
/// seeded shuffle.
inline std::vector<std::uint8_t> hot_pixel_layout(const DetectorSpec& d) {
  const std::size_t n = d.pixel_count();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(derive_seed(d.hot_pixel_seed, "hot-pixels"));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n_hot = static_cast<std::size_t>(std::llround(d.hot_pixel_fraction * static_cast<double>(n)));
  std::vector<std::uint8_t> mask(n, 0);
  for (std::size_t i = 0; i < n_hot; ++i) mask[order[i]] = 1;
  return mask;
}

/// Centre of pixel (row, col)'s footprint relative to the observed spot, in
/// the wall plane. Rows run downward, columns along the wall's horizontal axis.
inline Vec3 pixel_footprint_offset(const Scene& scene, const DetectorSpec& d, int row, int col, double du = 0.5,
                                   double dv = 0.5) {
  const Vec3 up{0.0, 1.0, 0.0};
  const Vec3 horizontal = normalized(cross(up, scene.wall_normal));
  const double side = scene.observed_area_side;
  const double u = ((col + du) / d.cols - 0.5) * side;
  const double v = (0.5 - (row + dv) / d.rows) * side;
  return horizontal * u + up * v;
}

struct SimulationOptions {
  bool noiseless = false;
  ClothingMode clothing_mode = ClothingMode::different;
  unsigned threads = 0;
};

/// Placement of the person for one acquisition: nominal anchor plus a seeded
/// horizontal offset, and a relative laser power factor.
struct AcquisitionPose {
  Point3 anchor;
  double power = 1.0;
};

inline AcquisitionPose acquisition_pose(const Scene& scene, const Point3& nominal_anchor, std::uint64_t seed) {
  CounterRng rng(derive_seed(seed, "pose"));
  AcquisitionPose pose;
  pose.anchor = nominal_anchor;
  pose.anchor.x += scene.pose_jitter * rng.normal();
  pose.anchor.z += scene.pose_jitter * rng.normal();
  pose.power = std::max(0.5, 1.0 + scene.power_jitter * rng.normal());
  return pose;
}

/// Expected stationary background for one pixel: a smooth wall hump at the
/// laser-spot-to-observed-spot delay plus dark counts.
inline void add_background(TemporalHistogram& h, const Scene& scene, const DetectorSpec& d, const Point3& observed) {
  const double t_bg = fold_to_window(
      time_of_flight(scene.laser_leg + distance(scene.laser_spot, observed) + scene.detector_to_wall_distance),
      d.rep_period_ns);
  const double period_ps = d.rep_period_ns * 1000.0;
  const double sigma = d.background_width_ps / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  for (std::size_t i = 0; i < h.n_bins(); ++i) {
    const double center = h.t0_ps + (static_cast<double>(i) + 0.5) * h.bin_width_ps;
    double dt = std::abs(center - t_bg * 1000.0);
    dt = std::min(dt, period_ps - dt);
    h.counts[i] += d.background_amplitude * std::exp(-0.5 * (dt / sigma) * (dt / sigma)) + d.dark_rate_per_bin;
  }
}

/// Wall spot offset of pixel `idx` for a frame seeded with `seed`: a uniform
/// point inside the pixel's footprint.
inline Vec3 pixel_observed_offset(const Scene& scene, const DetectorSpec& d, std::uint64_t seed, std::size_t idx) {
  CounterRng rng(derive_seed(seed, static_cast<std::uint64_t>(idx)));
  const int row = static_cast<int>(idx) / d.cols;
  const int col = static_cast<int>(idx) % d.cols;
  const double du = rng.uniform();
  const double dv = rng.uniform();
  return pixel_footprint_offset(scene, d, row, col, du, dv);
}

/// Renders every pixel of a frame for an arbitrary facet set (empty = target
/// removed). Each pixel draws from its own stream derived from (seed, pixel
/// index), so the result does not depend on evaluation order.
inline void render_pixels(PixelArrayFrame& frame, const Scene& scene, const PatchSet& patches, double power,
                          const DetectorSpec& detector, std::uint64_t seed, const SimulationOptions& opts) {
  frame.rows = detector.rows;
  frame.cols = detector.cols;
  const std::size_t n_pix = detector.pixel_count();
  frame.histograms.assign(n_pix, TemporalHistogram{});
  frame.hot_mask = hot_pixel_layout(detector);
  const std::size_t n_bins = detector.n_bins();

  parallel_for(
      n_pix,
      [&](std::size_t idx) {
        const CounterRng pixel_rng(derive_seed(seed, static_cast<std::uint64_t>(idx)));
        const Vec3 offset = pixel_observed_offset(scene, detector, seed, idx);
        TemporalHistogram expected = patches.empty()
                                         ? TemporalHistogram(n_bins, detector.bin_width_ps)
                                         : ideal_transient(scene, patches, detector, offset,
                                                           detector.pulses_per_acquisition * power);
        add_background(expected, scene, detector, scene.observed_spot + offset);
        expected = convolve_irf(expected, detector.irf_fwhm_ps);

        if (opts.noiseless) {
          frame.histograms[idx] = std::move(expected);
          return;
        }
        auto sampled = sample_poisson(expected, pixel_rng.split(1).key());
        if (frame.hot_mask[idx]) {
          auto hot_rng = pixel_rng.split(2);
          const auto level = static_cast<std::uint64_t>(detector.hot_pixel_level);
          for (auto& c : sampled.counts) c = static_cast<double>(hot_rng.below(level + 1));
        }
        frame.histograms[idx] = std::move(sampled);
      },
      opts.threads);
}

/// Simulates one acquisition. With `person` unset this is the background
/// frame (target removed).
inline PixelArrayFrame simulate_frame(const Scene& scene, const std::optional<PersonSpec>& person,
                                      const std::optional<std::string>& position_name, const DetectorSpec& detector,
                                      int illumination_id, std::uint64_t seed, const SimulationOptions& opts = {}) {
  validate(scene);
  validate(detector);
  if (person.has_value() != position_name.has_value())
    throw std::invalid_argument("simulate_frame: a position is required exactly when a person is given");
  if (illumination_id < 1 || illumination_id > 255)
    throw std::invalid_argument("simulate_frame: illumination_id must be in 1..255");

  PatchSet patches;
  double power = 1.0;
  PixelArrayFrame frame;
  frame.meta.illumination_id = illumination_id;
  frame.meta.clothing_mode = opts.clothing_mode;
  frame.meta.seed = seed;
  frame.meta.noiseless = opts.noiseless;
  if (person) {
    const auto& pos = scene.position(*position_name);
    const auto pose = acquisition_pose(scene, pos.anchor, seed);
    patches = discretize_person(scene, *person, pose.anchor);
    power = pose.power;
    frame.meta.person_id = person->person_id;
    frame.meta.position_index = position_index(pos.name);
  }
  render_pixels(frame, scene, patches, power, detector, seed, opts);
  return frame;
}

/// Frame of an arbitrary facet set at nominal laser power (oracle tests).
inline PixelArrayFrame simulate_patch_frame(const Scene& scene, const PatchSet& patches, const DetectorSpec& detector,
                                            std::uint64_t seed, const SimulationOptions& opts = {}) {
  validate(scene);
  validate(detector);
  for (const auto& p : patches) validate(p);
  PixelArrayFrame frame;
  frame.meta.seed = seed;
  frame.meta.noiseless = opts.noiseless;
  render_pixels(frame, scene, patches, 1.0, detector, seed, opts);
  return frame;
}

}  // namespace nlosid
