#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "clasp/autodiff.hpp"

namespace clasp {

// Half-open timestep range [begin, end).
struct Window {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const Window&, const Window&) = default;
};

// Splits T timesteps into `count` windows of ⌊T/count⌋ steps; the remainder
// goes to the last window.
std::vector<Window> partition_windows(std::size_t steps, std::size_t count);

// The `count` valid timesteps in [window.begin, window.end) with the largest
// score, ordered by descending score then ascending index. Returns fewer than
// `count` when the window has fewer valid steps.
std::vector<std::size_t> top_k_valid(std::span<const double> score, const Mask& valid, Window window,
                                     std::size_t count);

// Global anchor identification: top-K valid timesteps over the whole video.
// With fewer than K valid timesteps the last selected index is repeated up
// to length K and a warning is logged.
std::vector<std::size_t> identify_global_anchors(std::span<const double> score, const Mask& valid,
                                                 std::size_t count);

// Local anchor identification: top-k per window, one row per window. A window
// with fewer than k valid steps is padded with its best index; a window with
// no valid step borrows the best valid index of the whole video.
std::vector<std::vector<std::size_t>> identify_local_anchors(std::span<const double> score, const Mask& valid,
                                                             std::size_t windows, std::size_t per_window);

}  // namespace clasp
