#include "clasp/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>

#include "clasp/binary_io.hpp"
#include "clasp/errors.hpp"

namespace clasp {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("bad value '" + std::string(value) + "' for " + std::string(key) + ": expected " +
                    std::string(expected));
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) bad_value(key, v, "a number");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

using Setter = std::function<void(std::string_view key, std::string_view value)>;

std::map<std::string, Setter, std::less<>> model_setters(HyperParams& hp) {
  std::map<std::string, Setter, std::less<>> s;
  auto size_field = [&s](const char* name, std::size_t& field) {
    s[name] = [&field](auto k, auto v) { field = to_size(k, v); };
  };
  auto bool_field = [&s](const char* name, bool& field) {
    s[name] = [&field](auto k, auto v) { field = to_bool(k, v); };
  };
  size_field("max_steps", hp.max_steps);
  size_field("channels", hp.channels);
  size_field("categories", hp.categories);
  size_field("audio_dim", hp.audio_dim);
  size_field("visual_dim", hp.visual_dim);
  size_field("global_anchors", hp.global_anchors);
  size_field("local_anchors", hp.local_anchors);
  size_field("windows", hp.windows);
  size_field("heads", hp.heads);
  size_field("conv_kernel", hp.conv_kernel);
  s["leaky_slope"] = [&hp](auto k, auto v) { hp.leaky_slope = to_double(k, v); };
  bool_field("projection_bias", hp.projection_bias);
  bool_field("positional_encoding", hp.positional_encoding);
  s["jsd_variant"] = [&hp](auto k, auto v) {
    if (v == "standard") hp.jsd_variant = JsdVariant::standard;
    else if (v == "as_written") hp.jsd_variant = JsdVariant::as_written;
    else bad_value(k, v, "standard or as_written");
  };
  s["mil_pool"] = [&hp](auto k, auto v) {
    if (v == "mean") hp.mil_pool = MilPool::mean;
    else if (v == "max") hp.mil_pool = MilPool::max;
    else bad_value(k, v, "mean or max");
  };
  bool_field("use_global_anchors", hp.use_global_anchors);
  bool_field("use_local_anchors", hp.use_local_anchors);
  bool_field("bypass_anchors", hp.bypass_anchors);
  s["anchor_modality"] = [&hp](auto k, auto v) {
    if (v == "both") hp.anchor_modality = AnchorModality::both;
    else if (v == "audio") hp.anchor_modality = AnchorModality::audio;
    else if (v == "visual") hp.anchor_modality = AnchorModality::visual;
    else bad_value(k, v, "both, audio or visual");
  };
  s["agreement_source"] = [&hp](auto k, auto v) {
    if (v == "projected") hp.agreement_source = AgreementSource::projected;
    else if (v == "encoded") hp.agreement_source = AgreementSource::encoded;
    else bad_value(k, v, "projected or encoded");
  };
  return s;
}

std::map<std::string, Setter, std::less<>> train_setters(TrainConfig& t) {
  std::map<std::string, Setter, std::less<>> s;
  s["epochs"] = [&t](auto k, auto v) { t.epochs = to_size(k, v); };
  s["batch_size"] = [&t](auto k, auto v) { t.batch_size = to_size(k, v); };
  s["learning_rate"] = [&t](auto k, auto v) { t.learning_rate = to_double(k, v); };
  s["adam_beta1"] = [&t](auto k, auto v) { t.adam_beta1 = to_double(k, v); };
  s["adam_beta2"] = [&t](auto k, auto v) { t.adam_beta2 = to_double(k, v); };
  s["adam_eps"] = [&t](auto k, auto v) { t.adam_eps = to_double(k, v); };
  s["weight_av"] = [&t](auto k, auto v) { t.weight_av = to_double(k, v); };
  s["weight_a"] = [&t](auto k, auto v) { t.weight_a = to_double(k, v); };
  s["weight_v"] = [&t](auto k, auto v) { t.weight_v = to_double(k, v); };
  s["seed"] = [&t](auto k, auto v) { t.seed = to_u64(k, v); };
  s["checkpoint_every"] = [&t](auto k, auto v) { t.checkpoint_every = to_size(k, v); };
  s["workers"] = [&t](auto k, auto v) { t.workers = to_size(k, v); };
  return s;
}

std::map<std::string, Setter, std::less<>> synth_setters(SynthConfig& c) {
  std::map<std::string, Setter, std::less<>> s;
  auto size_field = [&s](const char* name, std::size_t& field) {
    s[name] = [&field](auto k, auto v) { field = to_size(k, v); };
  };
  size_field("num_videos", c.num_videos);
  size_field("min_steps", c.min_steps);
  size_field("max_steps", c.max_steps);
  size_field("categories", c.categories);
  size_field("audio_dim", c.audio_dim);
  size_field("visual_dim", c.visual_dim);
  size_field("min_events", c.min_events);
  size_field("max_events", c.max_events);
  size_field("min_event_length", c.min_event_length);
  size_field("max_event_length", c.max_event_length);
  s["distractor_rate"] = [&c](auto k, auto v) { c.distractor_rate = to_double(k, v); };
  s["noise_std"] = [&c](auto k, auto v) { c.noise_std = to_double(k, v); };
  s["prototype_separation"] = [&c](auto k, auto v) { c.prototype_separation = to_double(k, v); };
  s["seed"] = [&c](auto k, auto v) { c.seed = to_u64(k, v); };
  return s;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

KeyValues parse_key_values(std::string_view text, const std::string& source) {
  KeyValues out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, line_no, "expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(source, line_no, "empty key");
    out.emplace_back(std::string(key), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_key_values(read_text_file(path), path.string());
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

void apply_key_values(HyperParams& hp, const KeyValues& kv) {
  auto setters = model_setters(hp);
  for (const auto& [k, v] : kv) {
    auto it = setters.find(k);
    if (it == setters.end()) throw ConfigError("unknown model key: " + k);
    it->second(k, v);
  }
}

void apply_key_values(RunConfig& cfg, const KeyValues& kv) {
  auto model = model_setters(cfg.model);
  auto train = train_setters(cfg.train);
  auto synth = synth_setters(cfg.synth);
  for (const auto& [key, value] : kv) {
    if (key == "seed") {
      cfg.train.seed = to_u64(key, value);
      cfg.synth.seed = cfg.train.seed;
      continue;
    }
    const auto dot = key.find('.');
    const std::string_view section = dot == std::string::npos ? std::string_view{} : std::string_view(key).substr(0, dot);
    const std::string_view field = dot == std::string::npos ? std::string_view{} : std::string_view(key).substr(dot + 1);
    auto* table = section == "model" ? &model : section == "train" ? &train : section == "synth" ? &synth : nullptr;
    if (!table) throw ConfigError("unknown config key: " + key + " (expected model.*, train.*, synth.* or seed)");
    auto it = table->find(field);
    if (it == table->end()) throw ConfigError("unknown config key: " + key);
    it->second(key, value);
  }
}

KeyValues to_key_values(const HyperParams& hp) {
  auto n = [](std::size_t v) { return std::to_string(v); };
  const char* pool = hp.mil_pool == MilPool::mean ? "mean" : "max";
  const char* jsd = hp.jsd_variant == JsdVariant::standard ? "standard" : "as_written";
  const char* modality = hp.anchor_modality == AnchorModality::both    ? "both"
                         : hp.anchor_modality == AnchorModality::audio ? "audio"
                                                                       : "visual";
  const char* source = hp.agreement_source == AgreementSource::projected ? "projected" : "encoded";
  return {{"max_steps", n(hp.max_steps)},
          {"channels", n(hp.channels)},
          {"categories", n(hp.categories)},
          {"audio_dim", n(hp.audio_dim)},
          {"visual_dim", n(hp.visual_dim)},
          {"global_anchors", n(hp.global_anchors)},
          {"local_anchors", n(hp.local_anchors)},
          {"windows", n(hp.windows)},
          {"heads", n(hp.heads)},
          {"conv_kernel", n(hp.conv_kernel)},
          {"leaky_slope", format_double(hp.leaky_slope)},
          {"projection_bias", bool_str(hp.projection_bias)},
          {"positional_encoding", bool_str(hp.positional_encoding)},
          {"jsd_variant", jsd},
          {"mil_pool", pool},
          {"use_global_anchors", bool_str(hp.use_global_anchors)},
          {"use_local_anchors", bool_str(hp.use_local_anchors)},
          {"bypass_anchors", bool_str(hp.bypass_anchors)},
          {"anchor_modality", modality},
          {"agreement_source", source}};
}

KeyValues to_key_values(const TrainConfig& c) {
  auto n = [](std::size_t v) { return std::to_string(v); };
  return {{"epochs", n(c.epochs)},
          {"batch_size", n(c.batch_size)},
          {"learning_rate", format_double(c.learning_rate)},
          {"adam_beta1", format_double(c.adam_beta1)},
          {"adam_beta2", format_double(c.adam_beta2)},
          {"adam_eps", format_double(c.adam_eps)},
          {"weight_av", format_double(c.weight_av)},
          {"weight_a", format_double(c.weight_a)},
          {"weight_v", format_double(c.weight_v)},
          {"seed", std::to_string(c.seed)},
          {"checkpoint_every", n(c.checkpoint_every)},
          {"workers", n(c.workers)}};
}

KeyValues to_key_values(const SynthConfig& c) {
  auto n = [](std::size_t v) { return std::to_string(v); };
  return {{"num_videos", n(c.num_videos)},
          {"min_steps", n(c.min_steps)},
          {"max_steps", n(c.max_steps)},
          {"categories", n(c.categories)},
          {"audio_dim", n(c.audio_dim)},
          {"visual_dim", n(c.visual_dim)},
          {"min_events", n(c.min_events)},
          {"max_events", n(c.max_events)},
          {"min_event_length", n(c.min_event_length)},
          {"max_event_length", n(c.max_event_length)},
          {"distractor_rate", format_double(c.distractor_rate)},
          {"noise_std", format_double(c.noise_std)},
          {"prototype_separation", format_double(c.prototype_separation)},
          {"seed", std::to_string(c.seed)}};
}

KeyValues to_key_values(const RunConfig& cfg) {
  KeyValues out;
  for (auto [prefix, kv] : {std::pair{"model.", to_key_values(cfg.model)}, std::pair{"train.", to_key_values(cfg.train)},
                            std::pair{"synth.", to_key_values(cfg.synth)}}) {
    for (auto& [k, v] : kv) out.emplace_back(prefix + k, v);
  }
  return out;
}

}  // namespace clasp
