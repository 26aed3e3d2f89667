#include "tta/volume.hpp"

#include "binary_io.hpp"
#include "tta/error.hpp"

namespace tta {
namespace {

constexpr std::string_view kMagic = "TVOL";
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeU8 = 1;

void write_header(binary::Writer& w, std::uint8_t dtype, const Dims& dims, float voxel_mm) {
  w.bytes(kMagic);
  w.u32(kVolumeFileVersion);
  w.u8(dtype);
  w.u32(static_cast<std::uint32_t>(dims.d));
  w.u32(static_cast<std::uint32_t>(dims.h));
  w.u32(static_cast<std::uint32_t>(dims.w));
  w.f32(voxel_mm);
}

struct Header {
  std::uint8_t dtype;
  Dims dims;
  float voxel_mm;
};

Header read_header(binary::Reader& r) {
  r.need(kMagic.size(), "magic");
  if (!r.peek_tag(kMagic)) throw BadMagicError("not a volume file (magic bytes are not 'TVOL')");
  r.skip(kMagic.size());
  const std::uint32_t version = r.u32("version");
  if (version != kVolumeFileVersion) {
    throw VersionError("volume file version " + std::to_string(version) + " is not supported");
  }
  Header h{};
  h.dtype = r.u8("dtype");
  if (h.dtype != kDtypeF32 && h.dtype != kDtypeU8) {
    throw CorruptHeaderError("unknown volume dtype tag " + std::to_string(h.dtype));
  }
  h.dims.d = r.u32("depth");
  h.dims.h = r.u32("height");
  h.dims.w = r.u32("width");
  h.voxel_mm = r.f32("voxel size");
  if (!(h.voxel_mm > 0.0f)) throw CorruptHeaderError("voxel size must be positive");
  return h;
}

void expect_payload(const binary::Reader& r, std::size_t bytes) {
  if (r.remaining() < bytes) {
    throw TruncatedError("volume payload truncated: expected " + std::to_string(bytes) + " bytes, found " +
                         std::to_string(r.remaining()));
  }
  if (r.remaining() > bytes) throw CorruptHeaderError("volume file has trailing bytes after the payload");
}

}  // namespace

Tensor to_batch(std::span<const Volume> volumes) {
  if (volumes.empty()) throw ShapeError("cannot batch zero volumes");
  const Dims dims = volumes.front().dims;
  std::vector<float> data;
  data.reserve(volumes.size() * dims.count());
  for (const Volume& v : volumes) {
    if (v.dims != dims) throw ShapeError("volumes in a batch must share extents");
    data.insert(data.end(), v.values.begin(), v.values.end());
  }
  return Tensor({volumes.size(), 1, dims.d, dims.h, dims.w}, std::move(data));
}

Tensor to_batch(const Volume& volume) { return to_batch(std::span<const Volume>(&volume, 1)); }

std::vector<std::uint8_t> serialize_volume(const Volume& v) {
  binary::Writer w;
  write_header(w, kDtypeF32, v.dims, v.voxel_size_mm);
  w.f32s(v.values);
  return std::move(w.buffer());
}

std::vector<std::uint8_t> serialize_label_map(const LabelMap& labels) {
  binary::Writer w;
  write_header(w, kDtypeU8, labels.dims, labels.voxel_size_mm);
  w.u8s(labels.values);
  return std::move(w.buffer());
}

Volume deserialize_volume(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes);
  const Header h = read_header(r);
  if (h.dtype != kDtypeF32) throw FormatError("file holds a label map, not an intensity volume");
  expect_payload(r, h.dims.count() * 4);
  Volume v(h.dims, h.voxel_mm);
  r.f32s(v.values, "payload");
  return v;
}

LabelMap deserialize_label_map(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes);
  const Header h = read_header(r);
  if (h.dtype != kDtypeU8) throw FormatError("file holds an intensity volume, not a label map");
  expect_payload(r, h.dims.count());
  LabelMap l(h.dims, h.voxel_mm);
  r.u8s(l.values, "payload");
  return l;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  binary::write_file(path, serialize_volume(v));
}

void save_label_map(const LabelMap& labels, const std::filesystem::path& path) {
  binary::write_file(path, serialize_label_map(labels));
}

Volume load_volume(const std::filesystem::path& path) { return deserialize_volume(binary::read_file(path)); }

LabelMap load_label_map(const std::filesystem::path& path) {
  return deserialize_label_map(binary::read_file(path));
}

}  // namespace tta
