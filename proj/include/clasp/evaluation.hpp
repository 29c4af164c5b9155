#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clasp/autodiff.hpp"
#include "clasp/data_io.hpp"
#include "clasp/model.hpp"

namespace clasp {

struct DetectedEvent {
  std::string video_id;
  std::uint32_t category = 0;
  std::uint32_t t_start = 0;
  std::uint32_t t_end = 0;  // inclusive
  double score = 0.0;

  friend bool operator==(const DetectedEvent&, const DetectedEvent&) = default;
};

inline constexpr double kDefaultClassThreshold = 0.5;
inline constexpr double kDefaultSegmentThreshold = 0.5;
inline constexpr std::array<double, 5> kTiouThresholds = {0.5, 0.6, 0.7, 0.8, 0.9};

// Maximal runs of valid timesteps with p[t,c] >= theta_seg, for each category
// whose video-level probability is >= theta_class. Output is ordered by
// category, then start.
std::vector<DetectedEvent> extract_intervals(const Tensor& probs, const Mask& valid,
                                             std::span<const double> video_probs, double theta_class,
                                             double theta_seg, const std::string& video_id = {});
// Same, with the video-level probability obtained by pooling `probs`.
std::vector<DetectedEvent> extract_intervals(const Tensor& probs, const Mask& valid, MilPool pool,
                                             double theta_class = kDefaultClassThreshold,
                                             double theta_seg = kDefaultSegmentThreshold,
                                             const std::string& video_id = {});

// Inclusive segment ranges.
double tiou(std::uint32_t a_start, std::uint32_t a_end, std::uint32_t b_start, std::uint32_t b_end);

struct VideoGroundTruth {
  std::string video_id;
  std::vector<EventInstance> events;
};

// Descending score, then earlier start, then ground-truth video order, then
// category. Detections of unknown videos sort last.
void sort_detections(std::vector<DetectedEvent>& dets, std::span<const VideoGroundTruth> gt);

// AP of one category at tIoU threshold tau, pooled over every video; nullopt
// when the category has no ground-truth instance. Detections of other
// categories are ignored.
std::optional<double> average_precision(std::span<const DetectedEvent> detections,
                                        std::span<const VideoGroundTruth> gt, std::uint32_t category, double tau);

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> map;  // per threshold
  double average = 0.0;     // mean of `map`
  // per_category[c][i]: AP of category c at thresholds[i]; nullopt when the
  // category has no ground truth.
  std::vector<std::vector<std::optional<double>>> per_category;
  std::size_t eligible_categories = 0;
};

EvalReport mean_ap(std::span<const DetectedEvent> detections, std::span<const VideoGroundTruth> gt,
                   std::size_t categories, std::span<const double> thresholds = kTiouThresholds);

}  // namespace clasp
