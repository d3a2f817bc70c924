#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "posttrain/checkpoint.h"
#include "posttrain/error.h"
#include "synthetic.h"

namespace posttrain {
namespace {

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    config_ = ModelConfig::from_preset("tiny");
    config_.num_layers = 1;
    config_.hidden_size = 16;
    config_.feedforward_size = 32;
    config_.vocab_size = vocab_.size();
    config_.max_positions = 32;
    meta_.config = config_;
    meta_.vocab_digest = vocab_.digest();
    meta_.step = 42;
    meta_.seed = 7;
  }

  template <typename T>
  static bool same(const ModelParameters<T>& a, const ModelParameters<T>& b) {
    const auto x = a.named();
    const auto y = b.named();
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].first != y[i].first || x[i].second.shape() != y[i].second.shape()) return false;
      const auto p = x[i].second.data();
      const auto q = y[i].second.data();
      if (!std::equal(p.begin(), p.end(), q.begin())) return false;
    }
    return true;
  }

  const Vocabulary vocab_ = synthetic::vocabulary();
  ModelConfig config_;
  CheckpointMeta meta_;
};

TEST_F(CheckpointTest, BytesRoundTrip) {
  const auto params = ModelParameters<float>::init(config_, 1);
  const std::string bytes = serialize_checkpoint(meta_, params);
  EXPECT_EQ(bytes.substr(0, 4), "PTCK");
  const auto ck = parse_checkpoint<float>(bytes, vocab_.digest());
  EXPECT_TRUE(same(ck.params, params));
  EXPECT_EQ(ck.meta.config, config_);
  EXPECT_EQ(ck.meta.step, 42u);
  EXPECT_EQ(ck.meta.dtype, "f32");
  EXPECT_FALSE(ck.adam.has_value());
  EXPECT_EQ(serialize_checkpoint(ck.meta, ck.params), bytes);
}

TEST_F(CheckpointTest, AdamStateRoundTrip) {
  const auto params = ModelParameters<double>::init(config_, 2);
  AdamState<double> state;
  state.step = 5;
  for (const auto& t : params.all()) {
    state.first_moment.emplace_back(t.numel(), 0.25);
    state.second_moment.emplace_back(t.numel(), 0.5);
  }
  const std::string bytes = serialize_checkpoint(meta_, params, &state);
  const auto ck = parse_checkpoint<double>(bytes, std::nullopt);
  ASSERT_TRUE(ck.adam.has_value());
  EXPECT_EQ(ck.adam->step, 5);
  EXPECT_EQ(ck.adam->first_moment, state.first_moment);
  EXPECT_EQ(ck.adam->second_moment, state.second_moment);
  EXPECT_EQ(serialize_checkpoint(ck.meta, ck.params, &*ck.adam), bytes);

  AdamState<double> wrong = state;
  wrong.first_moment.pop_back();
  EXPECT_THROW(serialize_checkpoint(meta_, params, &wrong), InvalidArgument);
}

TEST_F(CheckpointTest, WrongDigestIsRejected) {
  const std::string bytes = serialize_checkpoint(meta_, ModelParameters<float>::init(config_, 1));
  Digest other = vocab_.digest();
  other[0] ^= 1;
  try {
    parse_checkpoint<float>(bytes, other);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "vocabulary digest mismatch");
  }
}

TEST_F(CheckpointTest, PrecisionConversion) {
  const auto params = ModelParameters<float>::init(config_, 3);
  const auto ck = parse_checkpoint<double>(serialize_checkpoint(meta_, params), std::nullopt);
  EXPECT_EQ(ck.meta.dtype, "f32");
  const auto a = params.named();
  const auto b = ck.params.named();
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].second.numel(); ++k) {
      EXPECT_EQ(static_cast<double>(a[i].second.data()[k]), b[i].second.data()[k]);
    }
  }
}

TEST_F(CheckpointTest, CorruptBytesAreDataErrors) {
  const std::string bytes = serialize_checkpoint(meta_, ModelParameters<float>::init(config_, 1));
  std::string bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(parse_checkpoint<float>(bad, std::nullopt), DataError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(parse_checkpoint<float>(bad, std::nullopt), DataError);
  EXPECT_THROW(parse_checkpoint<float>(bytes.substr(0, bytes.size() - 1), std::nullopt),
               DataError);
  EXPECT_THROW(parse_checkpoint<float>(bytes + "z", std::nullopt), DataError);
}

TEST_F(CheckpointTest, FileRoundTripAndMeta) {
  const auto dir = std::filesystem::temp_directory_path() / "posttrain_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.ptck").string();
  const auto params = ModelParameters<float>::init(config_, 4);
  save_checkpoint(path, meta_, params);
  EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
  const auto meta = read_checkpoint_meta(path);
  EXPECT_EQ(meta.step, 42u);
  EXPECT_EQ(meta.vocab_digest, vocab_.digest());
  EXPECT_TRUE(same(load_checkpoint<float>(path, vocab_.digest()).params, params));
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_checkpoint<float>(path, std::nullopt), DataError);
}

}  // namespace
}  // namespace posttrain
