#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"

using namespace cellinr;

TEST(Config, SerializeRoundTrip) {
  TrainConfig c = support::tiny_config();
  c.lambda_tv = 0.1 + 0.2;  // not exactly representable in short decimal form
  c.signal_loss_mode = SignalLossMode::rectified;
  c.structure_amplification = false;
  c.seed = 0xFFFFFFFFFFFFull;
  const TrainConfig back = parse_config(serialize(c));
  EXPECT_EQ(serialize(back), serialize(c));
  EXPECT_EQ(back.lambda_tv, c.lambda_tv);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, ParsesCommentsAndOverridesBase) {
  const auto c = parse_config("# comment\nmax_iters = 77\n\nlambda_tv=0.5\nblind_spot = false\n", support::tiny_config());
  EXPECT_EQ(c.max_iters, 77);
  EXPECT_EQ(c.lambda_tv, 0.5);
  EXPECT_FALSE(c.blind_spot);
  EXPECT_EQ(c.hidden_width, 16);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config("learning_rate = 1\n"), PreconditionError);
  EXPECT_THROW(parse_config("max_iters = ten\n"), PreconditionError);
  EXPECT_THROW(parse_config("blind_spot = maybe\n"), PreconditionError);
  EXPECT_THROW(parse_config("signal_loss_mode = l1\n"), PreconditionError);
  EXPECT_THROW(load_config("/nonexistent/cellinr.cfg"), IoError);
}

TEST(Config, ValidationBounds) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  EXPECT_NO_THROW(TrainConfig{}.validate());
  EXPECT_THROW(bad([](TrainConfig& c) { c.max_iters = kMaxItersCap + 1; }).validate(), PreconditionError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.d_ex = 1.0; }).validate(), PreconditionError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.lambda_tv = -0.1; }).validate(), PreconditionError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.kernel_inject_layer = 9; }).validate(), PreconditionError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.lr_end = 1.0; }).validate(), PreconditionError);
}

TEST(Config, HashIgnoresWorkersOnly) {
  TrainConfig a;
  TrainConfig b = a;
  b.workers = 8;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  TrainConfig c = a;
  c.tv_source = TvSource::center;
  EXPECT_NE(config_hash(a), config_hash(c));
}

namespace {

Checkpoint sample_checkpoint() {
  const auto raw = support::noisy_phantom(16);
  TrainConfig c = support::tiny_config();
  c.max_iters = 4;
  Trainer tr(raw, c);
  while (!tr.finished()) tr.step_once();
  return tr.checkpoint();
}

}  // namespace

TEST(Checkpoint, EncodeDecodeRoundTrip) {
  const auto c = sample_checkpoint();
  const auto bytes = encode_checkpoint(c);
  const auto d = decode_checkpoint(bytes);
  EXPECT_EQ(d.step, 4);
  EXPECT_EQ(d.fingerprint, c.fingerprint);
  EXPECT_EQ(serialize(d.config), serialize(c.config));
  EXPECT_EQ(d.nets.fine.layers[1].weight, c.nets.fine.layers[1].weight);
  EXPECT_EQ(d.adam.m, c.adam.m);
  EXPECT_EQ(d.adam.step, c.adam.step);
  ASSERT_EQ(d.history.size(), c.history.size());
  EXPECT_EQ(d.history.back().total, c.history.back().total);
  EXPECT_EQ(encode_checkpoint(d), bytes);
}

TEST(Checkpoint, DetectsCorruptionAndTruncation) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(flipped), FormatError);
  EXPECT_THROW(decode_checkpoint(std::vector<char>(bytes.begin(), bytes.begin() + 40)), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), FormatError);
  EXPECT_THROW(decode_checkpoint({}), FormatError);
}

TEST(Checkpoint, FileRoundTrip) {
  support::TempDir dir("ckpt");
  const auto c = sample_checkpoint();
  save_checkpoint(c, dir.file("a.ckpt"));
  EXPECT_FALSE(std::filesystem::exists(dir.file("a.ckpt.tmp")));
  EXPECT_EQ(encode_checkpoint(load_checkpoint(dir.file("a.ckpt"))), encode_checkpoint(c));
  EXPECT_THROW(load_checkpoint(dir.file("missing.ckpt")), IoError);
}
