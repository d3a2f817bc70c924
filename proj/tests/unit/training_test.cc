#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "posttrain/checkpoint.h"
#include "posttrain/error.h"
#include "posttrain/training.h"
#include "synthetic.h"

namespace posttrain {
namespace {

class TrainingTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    vocab_ = new Vocabulary(synthetic::vocabulary());
    config_.num_layers = 1;
    config_.hidden_size = 16;
    config_.num_heads = 2;
    config_.feedforward_size = 32;
    config_.vocab_size = vocab_->size();
    config_.max_positions = 48;
    DkOptions o;
    o.max_len = 40;
    o.duplicate_factor = 1;
    o.seed = 2;
    dk_ = new std::vector<DkExample>(make_dk_examples(synthetic::reviews(24, 7), *vocab_, o));
    mrc_ = new std::vector<MrcFeature>(
        featurize_mrc(*vocab_, synthetic::general_questions(24, 8), 40));
  }
  static void TearDownTestSuite() {
    delete vocab_;
    delete dk_;
    delete mrc_;
  }

  static std::vector<const DkExample*> dk_batch(std::size_t n) {
    std::vector<const DkExample*> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(&(*dk_)[i]);
    return out;
  }
  static std::vector<const MrcFeature*> mrc_batch(std::size_t n) {
    std::vector<const MrcFeature*> out;
    for (const auto& f : *mrc_) {
      if (f.has_answer && out.size() < n) out.push_back(&f);
    }
    return out;
  }

  static inline Vocabulary* vocab_ = nullptr;
  static inline ModelConfig config_;
  static inline std::vector<DkExample>* dk_ = nullptr;
  static inline std::vector<MrcFeature>* mrc_ = nullptr;
};

TEST_F(TrainingTest, UniformHeadsGiveClosedFormDkLoss) {
  auto p = ModelParameters<double>::init(config_, 1);
  for (auto* t : {&p.mlm_w, &p.pair_w}) {
    for (auto& v : t->data()) v = 0;
  }
  const auto batch = dk_batch(6);
  const auto loss = dk_loss(p, config_, std::span<const DkExample* const>(batch));
  EXPECT_NEAR(loss.mlm.item(), std::log(static_cast<double>(vocab_->size())), 1e-9);
  EXPECT_NEAR(loss.nsp.item(), std::log(2.0), 1e-9);
  EXPECT_NEAR(loss.total.item(), loss.mlm.item() + loss.nsp.item(), 1e-12);
  std::size_t masked = 0;
  for (const auto* ex : batch) masked += ex->targets.size();
  EXPECT_EQ(loss.masked, masked);
}

TEST_F(TrainingTest, MlmNormalizerDividesTheSum) {
  const auto p = ModelParameters<double>::init(config_, 2);
  const auto batch = dk_batch(4);
  const std::span<const DkExample* const> s(batch);
  const auto mean = dk_loss(p, config_, s);
  const auto scaled = dk_loss(p, config_, s, {}, 2.0 * static_cast<double>(mean.masked));
  EXPECT_NEAR(scaled.mlm.item(), mean.mlm.item() / 2, 1e-12);
}

TEST_F(TrainingTest, NothingMaskedDropsMlm) {
  auto ex = (*dk_)[0];
  ex.targets.clear();
  const std::vector<const DkExample*> batch = {&ex};
  const auto loss = dk_loss(ModelParameters<double>::init(config_, 3), config_,
                            std::span<const DkExample* const>(batch));
  EXPECT_FALSE(loss.mlm.defined());
  EXPECT_EQ(loss.masked, 0u);
  EXPECT_EQ(loss.total.item(), loss.nsp.item());
}

TEST_F(TrainingTest, LossPreconditions) {
  const auto p = ModelParameters<double>::init(config_, 3);
  EXPECT_THROW(dk_loss(p, config_, std::span<const DkExample* const>()), InvalidArgument);
  MrcFeature f = *mrc_batch(1)[0];
  f.has_answer = false;
  const std::vector<const MrcFeature*> bad = {&f};
  EXPECT_THROW(mrc_loss(p, config_, std::span<const MrcFeature* const>(bad)), InvalidArgument);
}

TEST_F(TrainingTest, SubBatchGradientsMatchFullBatch) {
  const auto dk = dk_batch(8);
  const auto mrc = mrc_batch(8);
  auto grads = [&](std::size_t u) {
    auto p = ModelParameters<double>::init(config_, 4);
    p.visit([](const std::string&, Tensor<double>& t) { t.set_requires_grad(true); });
    accumulate_joint_gradients(p, config_, std::span<const DkExample* const>(dk),
                               std::span<const MrcFeature* const>(mrc), u, {1, 0, true});
    std::vector<double> out;
    for (const auto& t : p.all()) {
      if (t.has_grad()) out.insert(out.end(), t.grad().begin(), t.grad().end());
      else out.insert(out.end(), t.numel(), 0.0);
    }
    return out;
  };
  const auto one = grads(1);
  for (std::size_t u : {2u, 4u, 8u}) {
    const auto many = grads(u);
    ASSERT_EQ(many.size(), one.size());
    double worst = 0;
    for (std::size_t i = 0; i < one.size(); ++i) worst = std::max(worst, std::abs(one[i] - many[i]));
    EXPECT_LT(worst, 1e-12) << "u=" << u;
  }
  auto p = ModelParameters<double>::init(config_, 4);
  EXPECT_THROW(accumulate_joint_gradients(p, config_, std::span<const DkExample* const>(dk),
                                          std::span<const MrcFeature* const>(mrc), 3,
                                          {1, 0, true}),
               InvalidArgument);
}

TEST_F(TrainingTest, PostTrainConfigValidation) {
  PostTrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.sub_batches = 3;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.total_steps = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST_F(TrainingTest, PostTrainRunLogsCheckpointsAndResumes) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "posttrain_run_test";
  fs::remove_all(dir);
  PostTrainConfig c;
  c.max_len = 40;
  c.batch_per_knowledge = 4;
  c.sub_batches = 2;
  c.learning_rate = 1e-3;
  c.total_steps = 4;
  c.checkpoint_every = 2;
  c.seed = 5;

  // Four steps straight through.
  TrainingState<double> straight{ModelParameters<double>::init(config_, 6), std::nullopt, 0};
  std::vector<StepReport> reports;
  const auto final_path =
      posttrain_run(c, config_, vocab_->digest(), straight, *dk_, *mrc_, (dir / "a").string(),
                    [&](const StepReport& r) { reports.push_back(r); });
  ASSERT_EQ(reports.size(), 4u);
  EXPECT_EQ(reports.back().step, 4u);
  EXPECT_TRUE(fs::exists(dir / "a" / "checkpoint-2.ptck"));
  EXPECT_TRUE(fs::exists(dir / "a" / "checkpoint-4.ptck"));
  EXPECT_EQ(read_checkpoint_meta(final_path).step, 4u);

  std::ifstream log(dir / "a" / "train_log.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "l_dk", "l_mlm", "l_nsp", "l_mrc", "lr", "seconds"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    EXPECT_TRUE(std::isfinite(j["l_dk"].get<double>()));
    ++lines;
  }
  EXPECT_EQ(lines, 4u);

  // Two steps, reload from the checkpoint, two more.
  c.total_steps = 2;
  TrainingState<double> first{ModelParameters<double>::init(config_, 6), std::nullopt, 0};
  const auto mid = posttrain_run(c, config_, vocab_->digest(), first, *dk_, *mrc_,
                                 (dir / "b").string());
  auto ck = load_checkpoint<double>(mid, vocab_->digest());
  TrainingState<double> resumed{ck.params, ck.adam, ck.meta.step};
  posttrain_run(c, config_, vocab_->digest(), resumed, *dk_, *mrc_, (dir / "b").string());
  EXPECT_EQ(resumed.step, 4u);
  const auto a = straight.params.named();
  const auto b = resumed.params.named();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a[i].second.data();
    const auto y = b[i].second.data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << a[i].first;
  }
  fs::remove_all(dir);
}

TEST_F(TrainingTest, PostTrainingLeavesTaskHeadsAlone) {
  TrainingState<double> s{ModelParameters<double>::init(config_, 7), std::nullopt, 0};
  const auto before = s.params.clone();
  PostTrainConfig c;
  c.max_len = 40;
  c.batch_per_knowledge = 2;
  c.sub_batches = 1;
  c.learning_rate = 1e-2;
  c.total_steps = 1;
  const auto dir = std::filesystem::temp_directory_path() / "posttrain_heads_test";
  posttrain_run(c, config_, vocab_->digest(), s, *dk_, *mrc_, dir.string());
  std::filesystem::remove_all(dir);
  auto equal = [](const Tensor<double>& x, const Tensor<double>& y) {
    return std::equal(x.data().begin(), x.data().end(), y.data().begin());
  };
  EXPECT_TRUE(equal(s.params.tag_w, before.tag_w));
  EXPECT_TRUE(equal(s.params.class_w, before.class_w));
  EXPECT_FALSE(equal(s.params.span_start_w, before.span_start_w));
  EXPECT_FALSE(equal(s.params.mlm_w, before.mlm_w));
}

TEST_F(TrainingTest, StepLogLine) {
  StepReport r;
  r.step = 3;
  r.l_mrc = 1.5;
  r.mlm_omitted = true;
  const auto j = nlohmann::json::parse(step_log_line(r, 0.25));
  EXPECT_EQ(j["step"], 3);
  EXPECT_EQ(j["l_mrc"], 1.5);
  EXPECT_EQ(j["seconds"], 0.25);
  EXPECT_EQ(j["mlm_omitted"], true);
}

TEST_F(TrainingTest, TaskNamesAndParameters) {
  for (auto t : {Task::kRrc, Task::kAe, Task::kAsc}) EXPECT_EQ(parse_task(to_string(t)), t);
  EXPECT_FALSE(parse_task("nsp"));
  const auto p = ModelParameters<double>::init(config_, 1);
  const auto encoder = p.all().size() - 12;  // every head tensor
  EXPECT_EQ(task_parameters(p, Task::kRrc).size(), encoder + 4);
  EXPECT_EQ(task_parameters(p, Task::kAe).size(), encoder + 2);
  EXPECT_EQ(task_parameters(p, Task::kAsc).size(), encoder + 2);
}

TEST_F(TrainingTest, FineTuneKeepsBestEpochAndStopsEarly) {
  TaskData train, valid;
  train.asc = synthetic::aspect_polarities(12, 1);
  valid.asc = train.asc;
  FineTuneConfig c;
  c.task = Task::kAsc;
  c.max_epochs = 3;
  c.batch_size = 4;
  c.learning_rate = 1e-3;
  c.max_len = 32;
  std::vector<EpochReport> seen;
  const auto r = finetune(c, config_, *vocab_, ModelParameters<double>::init(config_, 2), train,
                          valid, [&](const EpochReport& e) { seen.push_back(e); });
  ASSERT_EQ(r.epochs.size(), 3u);
  EXPECT_EQ(seen.size(), 3u);
  EXPECT_EQ(r.steps, 9u);
  double best = -1;
  for (const auto& e : r.epochs) best = std::max(best, e.valid.primary);
  EXPECT_EQ(r.best.primary, best);
  // The returned parameters are the best epoch's.
  EXPECT_EQ(evaluate_task(Task::kAsc, r.params, config_, *vocab_, valid, 32).primary, best);

  c.stop_at_metric = -1.0;
  EXPECT_EQ(finetune(c, config_, *vocab_, ModelParameters<double>::init(config_, 2), train, valid)
                .epochs.size(),
            1u);
  TaskData empty;
  EXPECT_THROW(finetune(c, config_, *vocab_, ModelParameters<double>::init(config_, 2), empty,
                        valid),
               InvalidArgument);
}

TEST(Summaries, MeanAndSampleStdev) {
  std::vector<EvalReport> runs(3);
  const double f1[] = {10, 20, 30};
  for (std::size_t i = 0; i < 3; ++i) runs[i].metrics = {{"f1", f1[i]}, {"exact_match", 5}};
  const auto s = summarize_reports(runs);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].name, "f1");
  EXPECT_DOUBLE_EQ(s[0].mean, 20.0);
  EXPECT_DOUBLE_EQ(s[0].stdev, 10.0);
  EXPECT_DOUBLE_EQ(s[1].stdev, 0.0);
  EXPECT_TRUE(summarize_reports({}).empty());
}

}  // namespace
}  // namespace posttrain
