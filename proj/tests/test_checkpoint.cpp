#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "tta/checkpoint.hpp"
#include "tta/error.hpp"
#include "tta/network.hpp"
#include "tta/rng.hpp"

using namespace tta;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "tta_checkpoint_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Network trained_looking_network() {
  Network net = Network::reference(5, 31);
  Rng r(4);
  for (const auto& name : net.parameter_names()) {
    for (float& v : net.parameter(name).values()) v += static_cast<float>(r.uniform(-0.1, 0.1));
  }
  Tensor x({2, 1, 4, 4, 4});
  for (float& v : x.values()) v = static_cast<float>(r.uniform());
  net.forward(x, true);
  return net;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const Network net = trained_looking_network();
  const auto path = temp_file("round_trip.ttck");
  save_checkpoint(net, path);
  const Network loaded = load_checkpoint(path);
  EXPECT_TRUE(loaded.same_parameters(net));
  EXPECT_EQ(loaded.layers(), net.layers());
  EXPECT_FALSE(loaded.source_importance().has_value());
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  Network net = trained_looking_network();
  net.set_source_importance({0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f});
  const auto a = temp_file("first.ttck"), b = temp_file("second.ttck");
  save_checkpoint(net, a);
  save_checkpoint(load_checkpoint(a), b);
  EXPECT_EQ(read_bytes(a), read_bytes(b));
}

TEST(Checkpoint, ImportanceRoundTrip) {
  Network net = trained_looking_network();
  const std::vector<float> theta{0.05f, 0.5f, 0.25f, 0.125f, 0.0f, 0.75f, 0.3f};
  net.set_source_importance(theta);
  const Network loaded = deserialize_checkpoint(serialize_checkpoint(net));
  ASSERT_TRUE(loaded.source_importance().has_value());
  EXPECT_EQ(*loaded.source_importance(), theta);
}

TEST(Checkpoint, ImportanceMustMatchTunableLayers) {
  Network net = Network::reference(5, 1);
  EXPECT_THROW(net.set_source_importance({1.0f, 2.0f}), ShapeError);
}

TEST(Checkpoint, WrongMagicIsRejected) {
  auto bytes = serialize_checkpoint(Network::reference(5, 1));
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bytes), BadMagicError);
}

TEST(Checkpoint, VersionMismatchIsRejected) {
  auto bytes = serialize_checkpoint(Network::reference(5, 1));
  bytes[4] = 2;
  EXPECT_THROW(deserialize_checkpoint(bytes), VersionError);
}

TEST(Checkpoint, TruncatedPayloadIsRejected) {
  auto bytes = serialize_checkpoint(Network::reference(5, 1));
  for (std::size_t keep : {std::size_t{6}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_THROW(deserialize_checkpoint(cut), TruncatedError) << "kept " << keep << " bytes";
  }
}

TEST(Checkpoint, UnknownLayerKindIsRejected) {
  auto bytes = serialize_checkpoint(Network::reference(5, 1));
  bytes[12] = 42;  // kind tag of the first layer
  EXPECT_THROW(deserialize_checkpoint(bytes), UnknownLayerError);
}

TEST(Checkpoint, CorruptHeaderIsRejected) {
  auto bytes = serialize_checkpoint(Network::reference(5, 1));
  bytes[8] = bytes[9] = bytes[10] = bytes[11] = 0;  // zero layers
  EXPECT_THROW(deserialize_checkpoint(bytes), CorruptHeaderError);
  auto trailing = serialize_checkpoint(Network::reference(5, 1));
  trailing.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(trailing), CorruptHeaderError);
}

TEST(Checkpoint, MissingFileIsReported) {
  EXPECT_THROW(load_checkpoint(temp_file("does_not_exist.ttck")), Error);
}
