#include "protoaudit/audit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace protoaudit::audit {

namespace {

using numerics::Tensor;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void tensor(const std::string& name, const Tensor& t) {
    text(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) f32(v);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1, "byte");
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text() {
    const std::uint32_t n = u32();
    need(n, "string");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = text();
    const std::uint32_t rank = u32();
    if (rank == 0 || rank > 8) throw CheckpointError("checkpoint: tensor '" + name + "' has bad rank");
    numerics::Shape shape;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = u32();
      if (d == 0) throw CheckpointError("checkpoint: tensor '" + name + "' has a zero dimension");
      shape.push_back(d);
      count *= d;
    }
    need(count * 4, "tensor payload");
    std::vector<float> data(count);
    for (auto& v : data) v = f32();
    return {std::move(name), Tensor(std::move(shape), std::move(data))};
  }
  void magic() {
    need(4, "magic");
    if (std::memcmp(bytes_.data(), kCheckpointMagic, 4) != 0) {
      throw CheckpointError("checkpoint: bad magic, not a PRP1 file");
    }
    pos_ += 4;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint: truncated while reading ") + what);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string param_name(const char* net, std::size_t layer, const char* part) {
  return std::string(net) + "." + std::to_string(layer) + "." + part;
}

void write_network(Writer& w, const char* net, const numerics::Network<float>& n) {
  for (std::size_t i = 0; i < n.params().size(); ++i) {
    const auto& p = n.params()[i];
    if (!p.weight.empty()) w.tensor(param_name(net, i, "weight"), p.weight);
    if (!p.bias.empty()) w.tensor(param_name(net, i, "bias"), p.bias);
  }
}

std::size_t tensor_count(const numerics::Network<float>& n) {
  std::size_t count = 0;
  for (const auto& p : n.params()) count += (p.weight.empty() ? 0 : 1) + (p.bias.empty() ? 0 : 1);
  return count;
}

void expect_tensor(Reader& r, const std::string& name, Tensor& slot) {
  auto [got, t] = r.tensor();
  if (got != name) throw CheckpointError("checkpoint: expected tensor '" + name + "', found '" + got + "'");
  if (t.shape() != slot.shape()) {
    throw CheckpointError("checkpoint: tensor '" + name + "' has shape " + numerics::shape_to_string(t.shape()) +
                          ", architecture needs " + numerics::shape_to_string(slot.shape()));
  }
  slot = std::move(t);
}

void read_network(Reader& r, const char* net, numerics::Network<float>& n) {
  for (std::size_t i = 0; i < n.params().size(); ++i) {
    auto& p = n.params()[i];
    if (!p.weight.empty()) expect_tensor(r, param_name(net, i, "weight"), p.weight);
    if (!p.bias.empty()) expect_tensor(r, param_name(net, i, "bias"), p.bias);
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ProtoNetModel& model,
                                               const CheckpointMetadata& metadata) {
  Writer w;
  for (char c : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.text(model.architecture().to_text());
  w.u32(static_cast<std::uint32_t>(tensor_count(model.backbone()) + tensor_count(model.addon()) + 2));
  write_network(w, "backbone", model.backbone());
  write_network(w, "addon", model.addon());
  w.tensor("prototypes", model.prototypes().vectors);
  w.tensor("last_layer", model.last_layer());
  const auto& bank = model.prototypes();
  w.u32(static_cast<std::uint32_t>(bank.size()));
  for (std::size_t m = 0; m < bank.size(); ++m) {
    w.i32(bank.owner_class[m]);
    const auto& src = bank.source[m];
    w.u8(src ? 1 : 0);
    w.u64(src ? src->image_id : 0);
    w.u32(src ? src->h : 0);
    w.u32(src ? src->w : 0);
    w.f64(src ? src->distance : 0.0);
  }
  w.i32(metadata.x);
  w.u64(metadata.seed);
  w.u64(metadata.epoch);
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  protonet::Architecture arch;
  try {
    arch = protonet::Architecture::from_text(r.text());
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad architecture descriptor: ") + e.what());
  }
  numerics::Network<float> backbone(arch.backbone_layers(), arch.input_shape());
  numerics::Network<float> addon(arch.addon_layers(), backbone.output_shape());
  const std::size_t expected = tensor_count(backbone) + tensor_count(addon) + 2;
  const std::uint32_t count = r.u32();
  if (count != expected) {
    throw CheckpointError("checkpoint: " + std::to_string(count) + " tensors, architecture needs " +
                          std::to_string(expected));
  }
  read_network(r, "backbone", backbone);
  read_network(r, "addon", addon);
  protonet::PrototypeBank<float> bank;
  bank.vectors = Tensor({arch.num_prototypes(), arch.prototype_depth});
  expect_tensor(r, "prototypes", bank.vectors);
  Tensor last({arch.num_classes, arch.num_prototypes()});
  expect_tensor(r, "last_layer", last);
  const std::uint32_t n = r.u32();
  if (n != arch.num_prototypes()) throw CheckpointError("checkpoint: prototype record count mismatch");
  for (std::uint32_t m = 0; m < n; ++m) {
    bank.owner_class.push_back(r.i32());
    const bool has = r.u8() != 0;
    protonet::PrototypeSource src;
    src.image_id = r.u64();
    src.h = r.u32();
    src.w = r.u32();
    src.distance = r.f64();
    bank.source.push_back(has ? std::optional(src) : std::nullopt);
  }
  Checkpoint out;
  out.metadata.x = r.i32();
  out.metadata.seed = r.u64();
  out.metadata.epoch = r.u64();
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes after metadata");
  try {
    out.model = ProtoNetModel(arch, std::move(backbone), std::move(addon), std::move(bank), std::move(last));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: inconsistent model: ") + e.what());
  }
  return out;
}

void save_checkpoint(const ProtoNetModel& model, const CheckpointMetadata& metadata,
                     const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model, metadata);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace protoaudit::audit
