#include "clasp/csv_io.hpp"

#include <charconv>
#include <cstdlib>

#include "clasp/config.hpp"
#include "clasp/errors.hpp"

namespace clasp {

namespace {

constexpr std::string_view kPredictionsHeader = "video_id,category,t_start,t_end,score";
constexpr std::string_view kAnchorsHeader = "video_id,rank,t,s";

void check_id(const std::string& id) {
  if (id.find_first_of(",\n\r") != std::string::npos) throw FormatError("video id '" + id + "' contains a comma or newline");
}

std::string threshold_label(double tau) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", tau);
  return buf;
}

// Calls fn(fields, line_no) for each data row after checking the header.
template <typename Fn>
void for_each_row(std::string_view text, const std::string& source, std::string_view header, std::size_t columns,
                  Fn fn) {
  std::size_t line_no = 0;
  bool seen_header = false;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!seen_header) {
      if (line != header) throw ParseError(source, line_no, "expected header '" + std::string(header) + "'");
      seen_header = true;
      continue;
    }
    auto fields = split_csv_line(line);
    if (fields.size() != columns) {
      throw ParseError(source, line_no, "expected " + std::to_string(columns) + " fields, got " +
                                            std::to_string(fields.size()));
    }
    fn(fields, line_no);
  }
  if (!seen_header) throw ParseError(source, line_no == 0 ? 1 : line_no, "missing header row");
}

template <typename Int>
Int parse_int(const std::string& s, const std::string& source, std::size_t line, const char* what) {
  Int out{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw ParseError(source, line, std::string("bad ") + what + " '" + s + "'");
  }
  return out;
}

double parse_real(const std::string& s, const std::string& source, std::size_t line, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ParseError(source, line, std::string("bad ") + what + " '" + s + "'");
  return v;
}

}  // namespace

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string format_predictions_csv(const std::vector<DetectedEvent>& dets) {
  std::string out(kPredictionsHeader);
  out += '\n';
  for (const auto& d : dets) {
    check_id(d.video_id);
    out += d.video_id + "," + std::to_string(d.category) + "," + std::to_string(d.t_start) + "," +
           std::to_string(d.t_end) + "," + format_double(d.score) + "\n";
  }
  return out;
}

std::vector<DetectedEvent> parse_predictions_csv(std::string_view text, const std::string& source) {
  std::vector<DetectedEvent> out;
  for_each_row(text, source, kPredictionsHeader, 5, [&](const std::vector<std::string>& f, std::size_t line) {
    DetectedEvent d;
    d.video_id = f[0];
    if (d.video_id.empty()) throw ParseError(source, line, "empty video_id");
    d.category = parse_int<std::uint32_t>(f[1], source, line, "category");
    d.t_start = parse_int<std::uint32_t>(f[2], source, line, "t_start");
    d.t_end = parse_int<std::uint32_t>(f[3], source, line, "t_end");
    d.score = parse_real(f[4], source, line, "score");
    if (d.t_end < d.t_start) throw ParseError(source, line, "t_end before t_start");
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw ParseError(source, line, "score outside [0,1]");
    out.push_back(std::move(d));
  });
  return out;
}

std::string format_anchors_csv(const std::vector<AnchorRow>& rows) {
  std::string out(kAnchorsHeader);
  out += '\n';
  for (const auto& r : rows) {
    check_id(r.video_id);
    out += r.video_id + "," + std::to_string(r.rank) + "," + std::to_string(r.t) + "," + format_double(r.score) + "\n";
  }
  return out;
}

std::vector<AnchorRow> parse_anchors_csv(std::string_view text, const std::string& source) {
  std::vector<AnchorRow> out;
  for_each_row(text, source, kAnchorsHeader, 4, [&](const std::vector<std::string>& f, std::size_t line) {
    out.push_back({f[0], parse_int<std::size_t>(f[1], source, line, "rank"),
                   parse_int<std::size_t>(f[2], source, line, "t"), parse_real(f[3], source, line, "s")});
  });
  return out;
}

std::string format_report_csv(const EvalReport& report) {
  std::string out = "metric";
  for (double tau : report.thresholds) out += "," + threshold_label(tau);
  out += ",Avg.\nmAP";
  for (double v : report.map) out += "," + format_double(v);
  out += "," + format_double(report.average) + "\n";
  return out;
}

std::string format_category_ap_csv(const EvalReport& report, const std::vector<std::string>& names) {
  std::string out = "category";
  for (double tau : report.thresholds) out += "," + threshold_label(tau);
  out += ",Avg.\n";
  for (std::size_t c = 0; c < report.per_category.size(); ++c) {
    out += c < names.size() ? names[c] : std::to_string(c);
    double sum = 0.0;
    bool eligible = true;
    for (const auto& ap : report.per_category[c]) {
      if (!ap) {
        eligible = false;
        out += ",n/a";
        continue;
      }
      sum += *ap;
      out += "," + format_double(*ap);
    }
    out += eligible ? "," + format_double(sum / static_cast<double>(report.per_category[c].size())) : ",n/a";
    out += "\n";
  }
  return out;
}

std::string format_loss_csv(const std::vector<double>& per_epoch) {
  std::string out = "epoch,mean_loss\n";
  for (std::size_t i = 0; i < per_epoch.size(); ++i) out += std::to_string(i + 1) + "," + format_double(per_epoch[i]) + "\n";
  return out;
}

}  // namespace clasp
