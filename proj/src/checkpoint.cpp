#include "clasp/checkpoint.hpp"

#include <bit>
#include <limits>

#include "clasp/binary_io.hpp"
#include "clasp/errors.hpp"

namespace clasp {

namespace {

void write_blob(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.short_string(name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.data()) w.f32(static_cast<float>(v));
}

std::pair<std::string, Tensor> read_blob(ByteReader& r) {
  std::string name = r.short_string();
  const std::size_t rank = r.u8();
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  const std::size_t n = shape_numel(shape);
  if (r.remaining() < 4 * n) throw TruncatedError(r.source() + ": truncated payload in blob " + name);
  Tensor t(shape);
  for (double& v : t.data()) v = r.f32();
  return {std::move(name), std::move(t)};
}

}  // namespace

std::vector<std::uint8_t> write_checkpoint(const Checkpoint& ckpt) {
  const TrainState& s = ckpt.state;
  check_parameters(s.params, ckpt.hp);
  ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u16(kCheckpointVersion);
  w.u16(ckpt.has_optimizer ? kFlagHasOptimizer : 0);

  KeyValues meta;
  for (auto& [k, v] : to_key_values(ckpt.hp)) meta.emplace_back("model." + k, v);
  meta.emplace_back("init", kInitScheme);
  meta.insert(meta.end(), ckpt.metadata.begin(), ckpt.metadata.end());
  const std::string text = format_key_values(meta);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text);

  w.u64(s.optimizer.step);
  w.u64(s.epochs_done);
  w.u32(static_cast<std::uint32_t>(s.loss_curve.size()));
  for (double v : s.loss_curve) w.u64(std::bit_cast<std::uint64_t>(v));

  const auto& names = s.params.names();
  const std::size_t blobs = names.size() * (ckpt.has_optimizer ? 3 : 1);
  w.u32(static_cast<std::uint32_t>(blobs));
  for (std::size_t i = 0; i < names.size(); ++i) write_blob(w, names[i], s.params.tensors()[i]);
  if (ckpt.has_optimizer) {
    if (s.optimizer.first_moment.size() != names.size() || s.optimizer.second_moment.size() != names.size()) {
      throw ShapeError("write_checkpoint: optimizer state does not match the parameters");
    }
    for (std::size_t i = 0; i < names.size(); ++i) write_blob(w, "adam.m/" + names[i], s.optimizer.first_moment[i]);
    for (std::size_t i = 0; i < names.size(); ++i) write_blob(w, "adam.v/" + names[i], s.optimizer.second_moment[i]);
  }
  w.finish_with_crc();
  return w.take();
}

Checkpoint read_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
  check_magic(bytes, std::string_view(kCheckpointMagic, 4), source);
  if (bytes.size() < 12) throw TruncatedError(source + ": truncated payload, header incomplete");
  ByteReader r(bytes.first(bytes.size() - 4), source);
  r.raw(4);
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw VersionError(source + ": checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  check_crc_trailer(bytes, source);
  const std::uint16_t flags = r.u16();

  Checkpoint ckpt;
  ckpt.has_optimizer = (flags & kFlagHasOptimizer) != 0;
  const KeyValues meta = parse_key_values(r.raw(r.u32()), source + " metadata");
  KeyValues model;
  for (const auto& [k, v] : meta) {
    if (k.starts_with("model.")) model.emplace_back(k.substr(6), v);
    else if (k != "init") ckpt.metadata.emplace_back(k, v);
  }
  apply_key_values(ckpt.hp, model);
  ckpt.hp.validate();

  TrainState& s = ckpt.state;
  s.optimizer.step = r.u64();
  s.epochs_done = r.u64();
  s.loss_curve.resize(r.u32());
  for (double& v : s.loss_curve) v = std::bit_cast<double>(r.u64());

  const std::size_t blobs = r.u32();
  const auto layout = parameter_layout(ckpt.hp);
  const std::size_t expected = layout.size() * (ckpt.has_optimizer ? 3 : 1);
  if (blobs != expected) {
    throw FormatError(source + ": " + std::to_string(blobs) + " blobs, expected " + std::to_string(expected));
  }
  for (const auto& [name, shape] : layout) {
    auto [got, t] = read_blob(r);
    if (got != name) throw FormatError(source + ": blob " + got + " where " + name + " was expected");
    s.params.add(got, std::move(t));
  }
  check_parameters(s.params, ckpt.hp);
  if (ckpt.has_optimizer) {
    for (auto* buffers : {&s.optimizer.first_moment, &s.optimizer.second_moment}) {
      const std::string prefix = buffers == &s.optimizer.first_moment ? "adam.m/" : "adam.v/";
      for (const auto& [name, shape] : layout) {
        auto [got, t] = read_blob(r);
        if (got != prefix + name) throw FormatError(source + ": blob " + got + " where " + prefix + name + " was expected");
        if (t.shape() != shape) throw ShapeError(source + ": blob " + got + " has shape " + shape_str(t.shape()));
        buffers->push_back(std::move(t));
      }
    }
  } else {
    const std::uint64_t step = s.optimizer.step;
    s.optimizer = OptimizerState::zeros_like(s.params);
    s.optimizer.step = step;
  }
  if (r.remaining() != 0) throw FormatError(source + ": trailing bytes after the last blob");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, write_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return read_checkpoint(bytes, path.string());
}

}  // namespace clasp
