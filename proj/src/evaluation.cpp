#include "clasp/evaluation.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "clasp/errors.hpp"
#include "clasp/training.hpp"

namespace clasp {

std::vector<DetectedEvent> extract_intervals(const Tensor& probs, const Mask& valid,
                                             std::span<const double> video_probs, double theta_class,
                                             double theta_seg, const std::string& video_id) {
  if (valid.size() != probs.rows() || video_probs.size() != probs.cols()) {
    throw ShapeError("extract_intervals: probabilities " + shape_str(probs.shape()) + " with " +
                     std::to_string(valid.size()) + " mask entries and " + std::to_string(video_probs.size()) +
                     " video probabilities");
  }
  std::vector<DetectedEvent> out;
  const std::size_t steps = probs.rows();
  for (std::size_t c = 0; c < probs.cols(); ++c) {
    if (!(video_probs[c] >= theta_class)) continue;
    std::size_t t = 0;
    while (t < steps) {
      if (!valid[t] || !(probs(t, c) >= theta_seg)) {
        ++t;
        continue;
      }
      const std::size_t start = t;
      double total = 0.0;
      while (t < steps && valid[t] && probs(t, c) >= theta_seg) total += probs(t++, c);
      out.push_back({video_id, static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(start),
                     static_cast<std::uint32_t>(t - 1), total / static_cast<double>(t - start)});
    }
  }
  return out;
}

std::vector<DetectedEvent> extract_intervals(const Tensor& probs, const Mask& valid, MilPool pool,
                                             double theta_class, double theta_seg, const std::string& video_id) {
  const auto pooled = mil_pool(probs, valid, pool);
  return extract_intervals(probs, valid, pooled, theta_class, theta_seg, video_id);
}

double tiou(std::uint32_t a_start, std::uint32_t a_end, std::uint32_t b_start, std::uint32_t b_end) {
  const std::int64_t lo = std::max(a_start, b_start), hi = std::min(a_end, b_end);
  const std::int64_t inter = std::max<std::int64_t>(0, hi - lo + 1);
  const std::int64_t uni = (std::int64_t{a_end} - a_start + 1) + (std::int64_t{b_end} - b_start + 1) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

std::map<std::string, std::size_t, std::less<>> video_index(std::span<const VideoGroundTruth> gt) {
  std::map<std::string, std::size_t, std::less<>> out;
  for (std::size_t i = 0; i < gt.size(); ++i) out.emplace(gt[i].video_id, i);
  return out;
}

}  // namespace

void sort_detections(std::vector<DetectedEvent>& dets, std::span<const VideoGroundTruth> gt) {
  const auto index = video_index(gt);
  auto order_of = [&index](const std::string& id) {
    auto it = index.find(id);
    return it == index.end() ? index.size() : it->second;
  };
  std::stable_sort(dets.begin(), dets.end(), [&](const DetectedEvent& a, const DetectedEvent& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.t_start != b.t_start) return a.t_start < b.t_start;
    const auto va = order_of(a.video_id), vb = order_of(b.video_id);
    if (va != vb) return va < vb;
    return a.category < b.category;
  });
}

std::optional<double> average_precision(std::span<const DetectedEvent> detections,
                                        std::span<const VideoGroundTruth> gt, std::uint32_t category, double tau) {
  std::size_t positives = 0;
  for (const auto& v : gt)
    for (const auto& e : v.events) positives += e.category == category;
  if (positives == 0) return std::nullopt;

  std::vector<DetectedEvent> dets;
  for (const auto& d : detections)
    if (d.category == category) dets.push_back(d);
  sort_detections(dets, gt);

  const auto index = video_index(gt);
  std::vector<std::vector<std::uint8_t>> matched(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) matched[i].assign(gt[i].events.size(), 0);

  std::vector<std::uint8_t> is_tp(dets.size(), 0);
  std::vector<double> precision(dets.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& d = dets[i];
    if (auto it = index.find(d.video_id); it != index.end()) {
      const auto& events = gt[it->second].events;
      double best = -1.0;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < events.size(); ++j) {
        if (events[j].category != category || matched[it->second][j]) continue;
        const double o = tiou(d.t_start, d.t_end, events[j].start, events[j].end);
        if (o > best) {
          best = o;
          best_j = j;
        }
      }
      if (best >= tau) {
        matched[it->second][best_j] = 1;
        is_tp[i] = 1;
        ++tp;
      }
    }
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }

  // Recall rises by exactly 1/positives at each true positive, so the
  // all-point integral is the envelope summed over true positives.
  double envelope = 0.0, total = 0.0;
  std::vector<double> env(dets.size());
  for (std::size_t i = dets.size(); i-- > 0;) {
    envelope = std::max(envelope, precision[i]);
    env[i] = envelope;
  }
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (is_tp[i]) total += env[i];
  return total / static_cast<double>(positives);
}

EvalReport mean_ap(std::span<const DetectedEvent> detections, std::span<const VideoGroundTruth> gt,
                   std::size_t categories, std::span<const double> thresholds) {
  if (thresholds.empty()) throw ContractError("mean_ap: no thresholds");
  for (const auto& d : detections) {
    if (d.category >= categories) {
      throw IndexError("mean_ap: detection category " + std::to_string(d.category) + " with C=" +
                       std::to_string(categories));
    }
  }
  EvalReport report;
  report.thresholds.assign(thresholds.begin(), thresholds.end());
  report.per_category.assign(categories, std::vector<std::optional<double>>(thresholds.size()));
  for (std::size_t c = 0; c < categories; ++c)
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      report.per_category[c][i] = average_precision(detections, gt, static_cast<std::uint32_t>(c), thresholds[i]);

  for (std::size_t c = 0; c < categories; ++c) report.eligible_categories += report.per_category[c][0].has_value();
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < categories; ++c)
      if (report.per_category[c][i]) sum += *report.per_category[c][i];
    report.map.push_back(report.eligible_categories ? sum / static_cast<double>(report.eligible_categories) : 0.0);
  }
  report.average = std::accumulate(report.map.begin(), report.map.end(), 0.0) / static_cast<double>(report.map.size());
  return report;
}

}  // namespace clasp
