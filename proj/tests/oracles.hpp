#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary. Deliberately naive.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "clasp/autodiff.hpp"
#include "clasp/evaluation.hpp"

namespace clasp::testing {

// Four explicit Bernoulli terms per category, natural logs rescaled to bits.
inline double oracle_jsd(double p, double q) {
  const double m1 = (p + q) / 2.0, m0 = ((1.0 - p) + (1.0 - q)) / 2.0;
  const double terms = p * std::log(p / m1) + (1.0 - p) * std::log((1.0 - p) / m0) + q * std::log(q / m1) +
                       (1.0 - q) * std::log((1.0 - q) / m0);
  return terms / (2.0 * std::log(2.0));
}

// Full sort of (score desc, index asc) over valid steps in [lo, hi).
inline std::vector<std::size_t> sort_oracle(const std::vector<double>& s, const Mask& valid, std::size_t lo,
                                            std::size_t hi, std::size_t k) {
  std::vector<std::size_t> idx;
  for (std::size_t t = lo; t < hi; ++t)
    if (valid[t]) idx.push_back(t);
  std::sort(idx.begin(), idx.end(), [&s](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
  if (idx.size() > k) idx.resize(k);
  return idx;
}

// Brute-force oracle: rank, match, build the PR curve, integrate the
// interpolated precision at every recall step.
inline double oracle_ap(const std::vector<DetectedEvent>& all, const std::vector<VideoGroundTruth>& gt,
                        std::uint32_t c, double tau, bool* has_gt) {
  std::size_t n_gt = 0;
  for (const auto& v : gt)
    for (const auto& e : v.events) n_gt += e.category == c;
  *has_gt = n_gt > 0;
  if (!n_gt) return 0.0;

  auto video_pos = [&gt](const std::string& id) {
    for (std::size_t i = 0; i < gt.size(); ++i)
      if (gt[i].video_id == id) return i;
    return gt.size();
  };
  std::vector<std::tuple<double, std::uint32_t, std::size_t, std::uint32_t, std::size_t>> keys;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].category != c) continue;
    keys.emplace_back(-all[i].score, all[i].t_start, video_pos(all[i].video_id), all[i].category, i);
  }
  std::sort(keys.begin(), keys.end());

  std::vector<std::vector<bool>> used(gt.size());
  for (std::size_t v = 0; v < gt.size(); ++v) used[v].assign(gt[v].events.size(), false);
  std::vector<double> recall, precision;
  std::size_t tp = 0, rank = 0;
  std::vector<bool> hit;
  for (const auto& key : keys) {
    const DetectedEvent& d = all[std::get<4>(key)];
    ++rank;
    const std::size_t v = std::get<2>(key);
    bool ok = false;
    if (v < gt.size()) {
      double best = -1.0;
      std::size_t arg = 0;
      for (std::size_t j = 0; j < gt[v].events.size(); ++j) {
        const auto& e = gt[v].events[j];
        if (e.category != c || used[v][j]) continue;
        const double o = tiou(d.t_start, d.t_end, e.start, e.end);
        if (o > best) best = o, arg = j;
      }
      if (best >= tau) {
        used[v][arg] = true;
        ok = true;
        ++tp;
      }
    }
    hit.push_back(ok);
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(rank));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < hit.size(); ++i) {
    if (!hit[i]) continue;  // recall only moves on a hit
    double best = 0.0;
    for (std::size_t j = 0; j < precision.size(); ++j)
      if (recall[j] >= recall[i]) best = std::max(best, precision[j]);
    sum += best;
  }
  return sum / static_cast<double>(n_gt);
}

struct RandomCase {
  std::vector<DetectedEvent> dets;
  std::vector<VideoGroundTruth> gt;
  std::size_t categories = 0;
};

inline RandomCase random_case(std::mt19937_64& rng) {
  RandomCase rc;
  rc.categories = 1 + rng() % 4;
  const std::size_t videos = 1 + rng() % 5;
  auto interval = [&rng](std::uint32_t& s, std::uint32_t& e) {
    s = static_cast<std::uint32_t>(rng() % 30);
    e = s + static_cast<std::uint32_t>(rng() % 10);
  };
  for (std::size_t v = 0; v < videos; ++v) {
    VideoGroundTruth g;
    g.video_id = "vid" + std::to_string(v);
    const std::size_t n = rng() % 4;
    for (std::size_t i = 0; i < n; ++i) {
      EventInstance e;
      interval(e.start, e.end);
      e.category = static_cast<std::uint32_t>(rng() % rc.categories);
      g.events.push_back(e);
    }
    rc.gt.push_back(g);
    const std::size_t m = rng() % 6;
    for (std::size_t i = 0; i < m; ++i) {
      DetectedEvent d;
      d.video_id = rng() % 10 == 0 ? "stranger" : g.video_id;
      d.category = static_cast<std::uint32_t>(rng() % rc.categories);
      if (!g.events.empty() && rng() % 2) {
        // Near-miss of a real event.
        const auto& e = g.events[rng() % g.events.size()];
        d.category = e.category;
        d.t_start = e.start + static_cast<std::uint32_t>(rng() % 2);
        d.t_end = std::max(d.t_start, e.end - static_cast<std::uint32_t>(rng() % 3 == 0));
      } else {
        interval(d.t_start, d.t_end);
      }
      d.score = static_cast<double>(1 + rng() % 8) / 8.0;  // coarse, so ties happen
      rc.dets.push_back(d);
    }
  }
  return rc;
}

}  // namespace clasp::testing
