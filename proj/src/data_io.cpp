#include "clasp/data_io.hpp"

#include <algorithm>
#include <sstream>

#include "clasp/binary_io.hpp"
#include "clasp/errors.hpp"

namespace clasp {

std::vector<std::uint8_t> labels_from_events(std::span<const EventInstance> events, std::size_t categories) {
  std::vector<std::uint8_t> label(categories, 0);
  for (const auto& e : events) {
    if (e.category >= categories) throw FormatError("event category " + std::to_string(e.category) + " out of range");
    label[e.category] = 1;
  }
  return label;
}

void validate_record(const VideoRecord& rec) {
  const std::string where = "record '" + rec.id + "': ";
  if (rec.audio.rank() != 2 || rec.visual.rank() != 2) throw FormatError(where + "features must be matrices");
  if (rec.audio.rows() != rec.visual.rows()) throw FormatError(where + "audio and visual lengths differ");
  const std::size_t steps = rec.audio.rows();
  for (const auto& e : rec.events) {
    if (e.start > e.end || e.end >= steps) {
      throw FormatError(where + "interval [" + std::to_string(e.start) + ", " + std::to_string(e.end) +
                        "] outside [0, " + std::to_string(steps) + ")");
    }
    if (e.category >= rec.label.size()) throw FormatError(where + "event category out of range");
  }
  for (auto v : rec.label)
    if (v > 1) throw FormatError(where + "label entries must be 0 or 1");
  const auto implied = labels_from_events(rec.events, rec.label.size());
  if (rec.labels_only) {
    if (!rec.events.empty()) throw FormatError(where + "labels-only record carries intervals");
  } else if (implied != rec.label) {
    throw FormatError(where + "label does not match the categories of its intervals");
  }
}

PaddedVideo pad_or_clip(const VideoRecord& rec, std::size_t steps) {
  if (steps == 0) throw ContractError("pad_or_clip: T must be positive");
  const std::size_t have = rec.steps();
  const std::size_t keep = std::min(have, steps);
  PaddedVideo out;
  auto copy_rows = [&](const Tensor& src) {
    Tensor dst({steps, src.cols()});
    std::copy_n(src.data().begin(), keep * src.cols(), dst.data().begin());
    return dst;
  };
  out.features.audio = copy_rows(rec.audio);
  out.features.visual = copy_rows(rec.visual);
  out.features.valid.assign(steps, 0);
  std::fill_n(out.features.valid.begin(), keep, std::uint8_t{1});
  for (const auto& e : rec.events) {
    if (e.start >= steps) continue;
    EventInstance clipped = e;
    clipped.end = std::min<std::uint32_t>(e.end, static_cast<std::uint32_t>(steps - 1));
    out.events.push_back(clipped);
  }
  out.label = rec.labels_only ? rec.label : labels_from_events(out.events, rec.label.size());
  return out;
}

TrainingExample make_training_example(const VideoRecord& rec, std::size_t steps) {
  PaddedVideo padded = pad_or_clip(rec, steps);
  TrainingExample ex;
  ex.id = rec.id;
  ex.features = std::move(padded.features);
  ex.label.assign(rec.label.begin(), rec.label.end());
  return ex;
}

// ---------------------------------------------------------------------------
// Feature file

std::vector<std::uint8_t> write_feature_file(const VideoRecord& rec) {
  validate_record(rec);
  ByteWriter w;
  w.raw(std::string_view(kFeatureMagic, 4));
  w.u16(kFeatureVersion);
  w.u16(rec.labels_only ? kFlagLabelsOnly : 0);
  w.short_string(rec.id);
  w.u32(static_cast<std::uint32_t>(rec.steps()));
  w.u32(static_cast<std::uint32_t>(rec.audio.cols()));
  w.u32(static_cast<std::uint32_t>(rec.visual.cols()));
  w.u32(static_cast<std::uint32_t>(rec.label.size()));
  w.u32(static_cast<std::uint32_t>(rec.events.size()));
  for (double v : rec.audio.data()) w.f32(static_cast<float>(v));
  for (double v : rec.visual.data()) w.f32(static_cast<float>(v));
  for (auto v : rec.label) w.u8(v);
  for (const auto& e : rec.events) {
    w.u32(e.start);
    w.u32(e.end);
    w.u32(e.category);
  }
  w.finish_with_crc();
  return w.take();
}

VideoRecord read_feature_file(std::span<const std::uint8_t> bytes, const std::string& source) {
  check_magic(bytes, std::string_view(kFeatureMagic, 4), source);
  ByteReader r(bytes, source);
  r.raw(4);
  const std::uint16_t version = r.u16();
  if (version != kFeatureVersion) {
    throw VersionError(source + ": feature file version " + std::to_string(version) + ", expected " +
                       std::to_string(kFeatureVersion));
  }
  const std::uint16_t flags = r.u16();
  VideoRecord rec;
  rec.labels_only = (flags & kFlagLabelsOnly) != 0;
  rec.id = r.short_string();
  const std::uint32_t steps = r.u32(), audio_dim = r.u32(), visual_dim = r.u32(), categories = r.u32(),
                      n_events = r.u32();
  const std::uint64_t payload = 4ull * steps * audio_dim + 4ull * steps * visual_dim + categories + 12ull * n_events;
  if (r.remaining() < payload + 4) {
    throw TruncatedError(source + ": truncated payload, header announces " + std::to_string(payload + 4) +
                         " more bytes, " + std::to_string(r.remaining()) + " present");
  }
  if (r.remaining() > payload + 4) throw FormatError(source + ": trailing bytes after checksum");
  check_crc_trailer(bytes, source);

  rec.audio = Tensor({steps, audio_dim});
  for (double& v : rec.audio.data()) v = r.f32();
  rec.visual = Tensor({steps, visual_dim});
  for (double& v : rec.visual.data()) v = r.f32();
  rec.label.resize(categories);
  for (auto& v : rec.label) v = r.u8();
  rec.events.resize(n_events);
  for (auto& e : rec.events) {
    e.start = r.u32();
    e.end = r.u32();
    e.category = r.u32();
  }
  validate_record(rec);
  return rec;
}

void save_record(const std::filesystem::path& path, const VideoRecord& rec) {
  write_file_bytes(path, write_feature_file(rec));
}

VideoRecord load_record(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return read_feature_file(bytes, path.string());
}

// ---------------------------------------------------------------------------
// Manifest

std::filesystem::path manifest_header_path(const std::filesystem::path& manifest) {
  return std::filesystem::path(manifest.string() + ".header");
}

void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& relative_files,
                    const std::vector<std::string>& categories) {
  std::string body;
  for (const auto& f : relative_files) body += f + "\n";
  write_text_file(path, body);
  std::string header = "num_categories=" + std::to_string(categories.size()) + "\n";
  for (const auto& c : categories) header += "category=" + c + "\n";
  write_text_file(manifest_header_path(path), header);
}

Manifest read_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("manifest not found: " + path.string());
  Manifest m;
  m.path = path;
  const auto base = path.parent_path();
  {
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      const std::filesystem::path p(line);
      m.files.push_back(p.is_absolute() ? p : base / p);
    }
  }
  const auto header_path = manifest_header_path(path);
  std::istringstream in(read_text_file(header_path));
  std::string line;
  std::size_t line_no = 0, declared = 0;
  bool have_count = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(header_path.string(), line_no, "expected key=value");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "num_categories") {
      try {
        declared = std::stoul(value);
      } catch (const std::exception&) {
        throw ParseError(header_path.string(), line_no, "bad category count '" + value + "'");
      }
      have_count = true;
    } else if (key == "category") {
      m.categories.push_back(value);
    } else {
      throw ParseError(header_path.string(), line_no, "unknown key '" + key + "'");
    }
  }
  if (!have_count) throw ParseError(header_path.string(), line_no, "missing num_categories");
  if (declared != m.categories.size()) {
    throw ParseError(header_path.string(), line_no,
                     "num_categories=" + std::to_string(declared) + " but " + std::to_string(m.categories.size()) +
                         " category lines");
  }
  return m;
}

std::vector<VideoRecord> load_manifest_records(const Manifest& manifest) {
  std::vector<VideoRecord> records;
  records.reserve(manifest.files.size());
  for (const auto& f : manifest.files) {
    records.push_back(load_record(f));
    if (records.back().categories() != manifest.categories.size()) {
      throw FormatError(f.string() + ": " + std::to_string(records.back().categories()) +
                        " categories, manifest declares " + std::to_string(manifest.categories.size()));
    }
  }
  return records;
}

}  // namespace clasp
