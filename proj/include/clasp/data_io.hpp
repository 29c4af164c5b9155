#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "clasp/features.hpp"
#include "clasp/tensor.hpp"

namespace clasp {

// One ground-truth event: inclusive segment range and category.
struct EventInstance {
  std::uint32_t start = 0;
  std::uint32_t end = 0;  // inclusive
  std::uint32_t category = 0;

  std::uint32_t length() const { return end - start + 1; }
  friend bool operator==(const EventInstance&, const EventInstance&) = default;
  friend auto operator<=>(const EventInstance&, const EventInstance&) = default;
};

struct VideoRecord {
  std::string id;
  Tensor audio;                     // T₀×d_a
  Tensor visual;                    // T₀×d_v
  std::vector<std::uint8_t> label;  // y, length C
  std::vector<EventInstance> events;
  // Set on files whose intervals were removed on purpose (labels kept); such
  // records may carry a positive label with no intervals.
  bool labels_only = false;

  std::size_t steps() const { return audio.rows(); }
  std::size_t categories() const { return label.size(); }
  friend bool operator==(const VideoRecord&, const VideoRecord&) = default;
};

// Video-level indicator vector of the categories present in `events`.
std::vector<std::uint8_t> labels_from_events(std::span<const EventInstance> events, std::size_t categories);

// Throws FormatError when the record breaks a structural invariant: shape
// agreement, interval bounds, category range, y matching the intervals.
void validate_record(const VideoRecord& rec);

// What training may see of a video: features and the video-level label.
struct TrainingExample {
  std::string id;
  VideoFeatures features;
  std::vector<double> label;
};

struct PaddedVideo {
  VideoFeatures features;
  std::vector<EventInstance> events;  // clipped to [0, T)
  // Indicator of `events` (the stored label for labels-only records). Equals
  // the stored label unless clipping dropped every event of a category.
  std::vector<std::uint8_t> label;
};

// Truncates to T (clipping intervals, dropping those that start at or after
// T) or zero-pads with valid=0.
PaddedVideo pad_or_clip(const VideoRecord& rec, std::size_t steps);
// Features and the stored video label; never looks at intervals, so a
// record and its labels-only copy give identical examples.
TrainingExample make_training_example(const VideoRecord& rec, std::size_t steps);

// Binary feature file, see README for the layout.
inline constexpr char kFeatureMagic[] = "CLSP";
inline constexpr std::uint16_t kFeatureVersion = 1;
inline constexpr std::uint16_t kFlagLabelsOnly = 0x1;

std::vector<std::uint8_t> write_feature_file(const VideoRecord& rec);
VideoRecord read_feature_file(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");

void save_record(const std::filesystem::path& path, const VideoRecord& rec);
VideoRecord load_record(const std::filesystem::path& path);

// Newline-delimited list of feature files (relative to the manifest's
// directory) plus a sidecar "<manifest>.header" naming C and the categories.
struct Manifest {
  std::filesystem::path path;
  std::vector<std::filesystem::path> files;  // resolved
  std::vector<std::string> categories;
};

std::filesystem::path manifest_header_path(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& relative_files,
                    const std::vector<std::string>& categories);
Manifest read_manifest(const std::filesystem::path& path);
// Loads every record and checks each against the header's C.
std::vector<VideoRecord> load_manifest_records(const Manifest& manifest);

}  // namespace clasp
