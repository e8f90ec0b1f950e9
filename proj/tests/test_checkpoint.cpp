#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <unistd.h>

#include "pdx/checkpoint.hpp"
#include "pdx/rng.hpp"

using namespace pdx;

namespace {

Checkpoint sample_checkpoint() {
  SeededRng rng(1);
  Checkpoint c;
  c.meta = {{"kind", "test"}, {"step", 7}};
  c.tensors.push_back({"a.weight", {3, 4}, {}});
  c.tensors.push_back({"a.bias", {4}, {}});
  c.tensors.push_back({"scalar", {1}, {}});
  for (auto& t : c.tensors) {
    std::size_t n = 1;
    for (std::size_t d : t.shape) n *= d;
    t.values.resize(n);
    for (double& v : t.values) v = rng.normal();
  }
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pdx_ckpt_" + name + "_" + std::to_string(::getpid()) + ".pdx");
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteExact) {
  const Checkpoint c = sample_checkpoint();
  const auto bytes = checkpoint_bytes(c);
  const Checkpoint back = checkpoint_parse(bytes);
  EXPECT_EQ(checkpoint_bytes(back), bytes);
  ASSERT_EQ(back.tensors.size(), 3u);
  EXPECT_EQ(back.get("a.weight").values, c.tensors[0].values);
  EXPECT_EQ(back.get("a.bias").shape, (Shape{4}));
  EXPECT_EQ(back.meta["step"], 7);

  const auto path = temp_file("rt");
  checkpoint_save(c, path);
  EXPECT_EQ(checkpoint_bytes(checkpoint_load(path)), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, EmptyTensorListIsValid) {
  Checkpoint c;
  const Checkpoint back = checkpoint_parse(checkpoint_bytes(c));
  EXPECT_TRUE(back.tensors.empty());
}

TEST(Checkpoint, DuplicateNamesRefused) {
  Checkpoint c = sample_checkpoint();
  c.tensors.push_back(c.tensors[0]);
  EXPECT_ANY_THROW(checkpoint_bytes(c));
}

TEST(Checkpoint, FlippedByteFailsCrc) {
  auto bytes = checkpoint_bytes(sample_checkpoint());
  bytes[bytes.size() / 2] ^= 0x10;
  try {
    checkpoint_parse(bytes);
    FAIL() << "expected CorruptionError";
  } catch (const CorruptionError& e) {
    EXPECT_NE(std::string(e.what()).find("CRC"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, TruncationDetected) {
  const auto bytes = checkpoint_bytes(sample_checkpoint());
  for (std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() - 1}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_THROW(checkpoint_parse(cut), CorruptionError) << keep;
  }
}

TEST(Checkpoint, BadMagicAndVersionDetected) {
  auto bytes = checkpoint_bytes(sample_checkpoint());
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(checkpoint_parse(magic), CorruptionError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(checkpoint_parse(version), CorruptionError);
}

TEST(Checkpoint, MissingFileIsAnIoProblem) {
  EXPECT_ANY_THROW(checkpoint_load("/nonexistent/dir/model.pdx"));
}

TEST(Checkpoint, Float32StorageIsFlaggedAndClose) {
  const Checkpoint c = sample_checkpoint();
  const Checkpoint back = checkpoint_parse(checkpoint_bytes(c, StorageType::f32));
  EXPECT_EQ(back.meta["storage"], "f32");
  for (std::size_t t = 0; t < c.tensors.size(); ++t) {
    for (std::size_t i = 0; i < c.tensors[t].values.size(); ++i) {
      const double v = c.tensors[t].values[i];
      EXPECT_EQ(back.tensors[t].values[i], static_cast<double>(static_cast<float>(v)));
      EXPECT_LE(std::abs(back.tensors[t].values[i] - v), std::abs(v) * std::numeric_limits<float>::epsilon());
    }
  }
  EXPECT_EQ(checkpoint_parse(checkpoint_bytes(c)).meta["storage"], "f64");
}

TEST(Checkpoint, LoadIntoStoreChecksNamesAndShapes) {
  ParamStore store;
  store.add("a.weight", {3, 4});
  store.add("a.bias", {4});
  store.add("scalar", {1});
  const Checkpoint c = sample_checkpoint();
  load_into(store, c);
  EXPECT_EQ(store.get("a.bias").value, c.tensors[1].values);
  Checkpoint wrong = c;
  wrong.tensors[1].shape = {2, 2};
  EXPECT_ANY_THROW(load_into(store, wrong));
  Checkpoint missing = c;
  missing.tensors.pop_back();
  EXPECT_ANY_THROW(load_into(store, missing));
  const auto round = tensors_from(store);
  ASSERT_EQ(round.size(), 3u);
  EXPECT_EQ(round[0].name, "a.weight");
}
