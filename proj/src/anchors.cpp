#include "clasp/anchors.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "clasp/errors.hpp"
#include "clasp/logging.hpp"

namespace clasp {

std::vector<Window> partition_windows(std::size_t steps, std::size_t count) {
  if (count == 0) throw ContractError("partition_windows: window count must be positive");
  const std::size_t width = steps / count;
  if (width == 0) {
    throw ContractError("partition_windows: " + std::to_string(count) + " windows over " + std::to_string(steps) +
                        " timesteps leaves empty windows");
  }
  std::vector<Window> out(count);
  for (std::size_t m = 0; m < count; ++m) out[m] = {m * width, (m + 1) * width};
  out.back().end = steps;
  return out;
}

std::vector<std::size_t> top_k_valid(std::span<const double> score, const Mask& valid, Window window,
                                     std::size_t count) {
  std::vector<std::size_t> candidates;
  candidates.reserve(window.size());
  for (std::size_t t = window.begin; t < window.end; ++t)
    if (valid[t]) candidates.push_back(t);
  const std::size_t take = std::min(count, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                    [&score](std::size_t a, std::size_t b) { return score[a] > score[b] || (score[a] == score[b] && a < b); });
  candidates.resize(take);
  return candidates;
}

namespace {

void check_inputs(std::span<const double> score, const Mask& valid, std::string_view op) {
  if (score.size() != valid.size()) {
    throw ShapeError(std::string(op) + ": " + std::to_string(score.size()) + " scores for mask of length " +
                     std::to_string(valid.size()));
  }
  if (std::none_of(valid.begin(), valid.end(), [](auto v) { return v != 0; })) {
    throw ContractError(std::string(op) + ": no valid timestep");
  }
}

}  // namespace

std::vector<std::size_t> identify_global_anchors(std::span<const double> score, const Mask& valid,
                                                 std::size_t count) {
  check_inputs(score, valid, "identify_global_anchors");
  if (count == 0) throw ContractError("identify_global_anchors: K must be positive");
  auto picked = top_k_valid(score, valid, {0, score.size()}, count);
  if (picked.size() < count) {
    log_warning_once("global-pad", "global anchors: " + std::to_string(picked.size()) + " valid timesteps for K=" +
                std::to_string(count) + ", repeating the last anchor");
    picked.resize(count, picked.back());
  }
  return picked;
}

std::vector<std::vector<std::size_t>> identify_local_anchors(std::span<const double> score, const Mask& valid,
                                                             std::size_t windows, std::size_t per_window) {
  check_inputs(score, valid, "identify_local_anchors");
  if (per_window == 0) throw ContractError("identify_local_anchors: k must be positive");
  const auto parts = partition_windows(score.size(), windows);
  std::vector<std::vector<std::size_t>> out;
  out.reserve(parts.size());
  std::size_t global_best = score.size();
  for (std::size_t m = 0; m < parts.size(); ++m) {
    auto picked = top_k_valid(score, valid, parts[m], per_window);
    if (picked.empty()) {
      if (global_best == score.size()) global_best = top_k_valid(score, valid, {0, score.size()}, 1).front();
      log_warning_once("local-empty", "local anchors: window " + std::to_string(m) + " has no valid timestep, borrowing t=" +
                  std::to_string(global_best));
      picked.assign(per_window, global_best);
    } else if (picked.size() < per_window) {
      log_warning_once("local-short", "local anchors: window " + std::to_string(m) + " has " + std::to_string(picked.size()) +
                  " valid timesteps for k=" + std::to_string(per_window) + ", repeating its best anchor");
      picked.resize(per_window, picked.front());
    }
    out.push_back(std::move(picked));
  }
  return out;
}

}  // namespace clasp
