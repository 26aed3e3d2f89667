#include "tta/checkpoint.hpp"

#include "binary_io.hpp"
#include "tta/error.hpp"

namespace tta {
namespace {

constexpr std::string_view kMagic = "TTCK";
constexpr std::string_view kImportanceTag = "THTE";
constexpr std::uint32_t kMaxNameLength = 4096;

void write_tensor(binary::Writer& w, const Tensor& t) {
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
  w.f32s(t.values());
}

Tensor read_tensor(binary::Reader& r) {
  const std::uint8_t rank = r.u8("tensor rank");
  if (rank == 0 || rank > 5) throw CorruptHeaderError("tensor rank " + std::to_string(rank) + " is out of range");
  Shape shape(rank);
  std::size_t numel = 1;
  for (auto& e : shape) {
    e = r.u32("tensor extent");
    numel *= e;
    if (numel > r.remaining()) r.need(numel * 4, "tensor payload");
  }
  std::vector<float> values(numel);
  r.f32s(values, "tensor payload");
  return Tensor(std::move(shape), std::move(values));
}

std::size_t expected_tensor_count(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv3d: return 2;
    case LayerKind::BatchNorm: return 4;
    case LayerKind::Concat: return 1;
    default: return 0;
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Network& net) {
  binary::Writer w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(net.num_layers()));
  for (const Layer& l : net.layers()) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.u32(static_cast<std::uint32_t>(l.name.size()));
    w.bytes(l.name);
    switch (l.kind) {
      case LayerKind::Conv3d:
        w.u32(2);
        write_tensor(w, l.param("weight"));
        write_tensor(w, l.param("bias"));
        break;
      case LayerKind::BatchNorm:
        w.u32(4);
        write_tensor(w, l.param("weight"));
        write_tensor(w, l.param("bias"));
        write_tensor(w, l.buffer("running_mean"));
        write_tensor(w, l.buffer("running_var"));
        break;
      case LayerKind::Concat:
        w.u32(1);
        write_tensor(w, Tensor({1}, {static_cast<float>(l.skip_from)}));
        break;
      default:
        w.u32(0);
        break;
    }
  }
  if (const auto& imp = net.source_importance()) {
    w.bytes(kImportanceTag);
    w.u32(static_cast<std::uint32_t>(imp->size()));
    w.f32s(*imp);
  }
  return std::move(w.buffer());
}

Network deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes);
  r.need(kMagic.size(), "magic");
  if (!r.peek_tag(kMagic)) throw BadMagicError("not a checkpoint file (magic bytes are not 'TTCK')");
  r.skip(kMagic.size());
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.u32("layer count");
  if (count == 0) throw CorruptHeaderError("checkpoint declares zero layers");

  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t tag = r.u8("layer kind");
    if (tag > static_cast<std::uint8_t>(LayerKind::Concat)) {
      throw UnknownLayerError("unknown layer kind tag " + std::to_string(tag) + " at layer " + std::to_string(i));
    }
    const auto kind = static_cast<LayerKind>(tag);
    const std::uint32_t name_len = r.u32("layer name length");
    if (name_len > kMaxNameLength) throw CorruptHeaderError("layer name length " + std::to_string(name_len));
    std::string name = r.str(name_len, "layer name");
    const std::uint32_t tensors = r.u32("tensor count");
    if (tensors != expected_tensor_count(kind)) {
      throw CorruptHeaderError("layer '" + name + "' of kind " + to_string(kind) + " has " +
                               std::to_string(tensors) + " tensors");
    }
    Layer l;
    l.kind = kind;
    l.name = std::move(name);
    switch (kind) {
      case LayerKind::Conv3d:
        l.params.push_back({"weight", read_tensor(r)});
        l.params.push_back({"bias", read_tensor(r)});
        break;
      case LayerKind::BatchNorm:
        l.params.push_back({"weight", read_tensor(r)});
        l.params.push_back({"bias", read_tensor(r)});
        l.buffers.push_back({"running_mean", read_tensor(r)});
        l.buffers.push_back({"running_var", read_tensor(r)});
        break;
      case LayerKind::Concat: {
        const Tensor t = read_tensor(r);
        if (t.size() != 1) throw CorruptHeaderError("concat layer '" + l.name + "' skip index is malformed");
        l.skip_from = static_cast<int>(t[0]);
        break;
      }
      default: break;
    }
    layers.push_back(std::move(l));
  }

  std::optional<std::vector<float>> importance;
  if (!r.at_end()) {
    if (!r.peek_tag(kImportanceTag)) throw CorruptHeaderError("unexpected trailing data after layers");
    r.skip(kImportanceTag.size());
    const std::uint32_t n = r.u32("importance count");
    std::vector<float> values(n);
    r.f32s(values, "importance payload");
    if (!r.at_end()) throw CorruptHeaderError("unexpected data after importance block");
    importance = std::move(values);
  }

  Network net;
  try {
    net = Network(std::move(layers));
    if (importance) net.set_source_importance(std::move(*importance));
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw CorruptHeaderError(std::string("checkpoint describes an invalid network: ") + e.what());
  }
  return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  binary::write_file(path, serialize_checkpoint(net));
}

Network load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(binary::read_file(path)); }

}  // namespace tta
