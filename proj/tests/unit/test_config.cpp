#include <gtest/gtest.h>

#include <filesystem>

#include "mdmo/checkpoint.hpp"
#include "mdmo/config.hpp"
#include "mdmo/error.hpp"

using namespace mdmo;

namespace {

const char* kMinimal = R"({"version": 1, "T": 3})";

std::string config_error_field(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<none>";
}

RunConfig small_config() {
  RunConfig c = parse_config(R"({"version": 1, "T": 2,
    "task": {"kind": "pair-copy", "N": 6, "prompt_len": 2, "vocab_size": 3},
    "nets": {"denoiser": {"hidden_dim": 4, "num_layers": 1, "num_heads": 2, "mlp_dim": 8},
             "selector": {"hidden_dim": 4, "num_layers": 1, "num_heads": 2, "mlp_dim": 8},
             "score": {"hidden_dim": 4, "num_layers": 1, "num_heads": 2, "mlp_dim": 8}}})");
  return c;
}

}  // namespace

TEST(Config, Defaults) {
  const RunConfig c = parse_config(kMinimal);
  EXPECT_EQ(c.T, 3);
  EXPECT_EQ(c.k_rloo, 8);
  EXPECT_EQ(c.value_decoding, ValueDecoding::kGreedy);
  EXPECT_EQ(c.scale_mode, ScaleMode::kUnbiasedT);
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_EQ(config_error_field(R"({"version": 1})"), "T");
  EXPECT_EQ(config_error_field(R"({"T": 3})"), "version");
  EXPECT_EQ(config_error_field(R"({"version": 2, "T": 3})"), "version");
  EXPECT_EQ(config_error_field(R"({"version": 1, "T": 3, "lrr": 0.1})"), "lrr");
  EXPECT_EQ(config_error_field(R"({"version": 1, "T": 3, "task": {"kind": "pair-copy", "size": 3}})"), "task.size");
  EXPECT_EQ(config_error_field(R"({"version": 1, "T": "three"})"), "T");
  EXPECT_EQ(config_error_field(R"({"version": 1, "T": 3, "train": ["omega"]})"), "train");
  EXPECT_THROW(parse_config("{not json"), Error);
}

TEST(Config, RoundTrip) {
  RunConfig c = small_config();
  c.tau = 0.25;
  c.train_psi = false;
  c.value_decoding = ValueDecoding::kSample;
  const std::string text = format_config(c);
  EXPECT_EQ(format_config(parse_config(text)), text);
}

TEST(Config, InvalidValues) {
  EXPECT_THROW(parse_config(R"({"version": 1, "T": 0})"), Error);
  EXPECT_THROW(parse_config(R"({"version": 1, "T": 3, "tau": -1})"), Error);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  Checkpoint ck;
  ck.config = small_config();
  ck.model = build_model(ck.config);
  const std::string bytes = serialize_checkpoint(ck);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  for (std::size_t i = 0; i < ck.model.denoiser.params.size(); ++i) {
    EXPECT_EQ(back.model.denoiser.params.values()[i], ck.model.denoiser.params.values()[i]);
  }
  const auto path = std::filesystem::temp_directory_path() / "mdmo_ckpt_test.ckpt";
  save_checkpoint(ck, path.string());
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(path.string())), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionDetected) {
  Checkpoint ck;
  ck.config = small_config();
  ck.model = build_model(ck.config);
  std::string bytes = serialize_checkpoint(ck);
  bytes[bytes.size() / 2] ^= 0x01;
  try {
    deserialize_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kChecksum);
  }
  try {
    deserialize_checkpoint(bytes.substr(0, 20));
    FAIL();
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::kParse || e.code() == ErrorCode::kChecksum);
  }
  try {
    load_checkpoint("/nonexistent/model.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}
