#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "ttnlab/checkpoint.hpp"
#include "ttnlab/error.hpp"

using namespace ttnlab;

namespace {

ErrorKind decode_error(const std::string& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorKind::io;
}

void expect_same(const ModelCheckpoint& a, const ModelCheckpoint& b) {
  EXPECT_EQ(a.input_shape, b.input_shape);
  EXPECT_EQ(a.layers, b.layers);
  EXPECT_EQ(a.class_count, b.class_count);
  EXPECT_EQ(a.epsilon, b.epsilon);
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_EQ(a.bn_source_stats, b.bn_source_stats);
  ASSERT_EQ(a.parameters.size(), b.parameters.size());
  for (const auto& [name, t] : a.parameters) EXPECT_TRUE(t.identical(b.parameters.at(name))) << name;
}

}  // namespace

TEST(Checkpoint, SaveLoadIsIdentity) {
  const ModelCheckpoint model = testkit::random_model(4);
  const auto path = testkit::scratch_dir("ckpt") / "model.ttn";
  save_checkpoint(model, path);
  const ModelCheckpoint loaded = load_checkpoint(path);
  expect_same(model, loaded);
  EXPECT_EQ(encode_checkpoint(loaded), testkit::read_bytes(path));
  EXPECT_EQ(checkpoint_digest(model), checkpoint_digest(loaded));
}

TEST(Checkpoint, LayoutStartsWithMagicAndHeaderLength) {
  const std::string bytes = encode_checkpoint(testkit::random_model(4));
  ASSERT_GT(bytes.size(), 12u);
  EXPECT_EQ(bytes.substr(0, 8), "TTNLAB01");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= std::uint32_t(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  ASSERT_LT(12u + len, bytes.size());
  EXPECT_EQ(bytes[12], '{');
  EXPECT_EQ(bytes[12 + len - 1], '}');
}

TEST(Checkpoint, CorruptedMagicIsBadFormat) {
  std::string bytes = encode_checkpoint(testkit::random_model(4));
  bytes[3] = 'X';
  EXPECT_EQ(decode_error(bytes), ErrorKind::bad_format);
  EXPECT_EQ(decode_error("TTN"), ErrorKind::bad_format);
}

TEST(Checkpoint, PayloadShorterOrLongerThanManifestIsTruncated) {
  const std::string bytes = encode_checkpoint(testkit::random_model(4));
  EXPECT_EQ(decode_error(bytes.substr(0, bytes.size() - 4)), ErrorKind::truncated);
  EXPECT_EQ(decode_error(bytes + "xxxx"), ErrorKind::truncated);
  EXPECT_EQ(decode_error(bytes.substr(0, 10)), ErrorKind::truncated);
  EXPECT_EQ(decode_error(bytes.substr(0, 40)), ErrorKind::truncated);
}

TEST(Checkpoint, UnknownFormatVersionIsRejected) {
  std::string bytes = encode_checkpoint(testkit::random_model(4));
  const auto at = bytes.find("\"format_version\":1");
  ASSERT_NE(at, std::string::npos);
  bytes[at + 17] = '9';
  EXPECT_EQ(decode_error(bytes), ErrorKind::unsupported_version);
}

TEST(Checkpoint, DigestChangesWithAnyParameter) {
  ModelCheckpoint model = testkit::random_model(4);
  const auto digest = checkpoint_digest(model);
  model.parameter(0, "bias")[0] += 1.0f;
  EXPECT_NE(checkpoint_digest(model), digest);
}

TEST(Checkpoint, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Checkpoint, MissingFileIsIoError) {
  try {
    load_checkpoint(testkit::scratch_dir("missing") / "nope.ttn");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}
