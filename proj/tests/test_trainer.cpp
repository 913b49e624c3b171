#include <filesystem>

#include <gtest/gtest.h>

#include "dtsp/checkpoint.hpp"
#include "dtsp/rollout.hpp"
#include "dtsp/trainer.hpp"
#include "fixtures.hpp"

using namespace dtsp;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model(int d = 16, int heads = 2) {
  ModelConfig m;
  m.d_model = d;
  m.n_heads = heads;
  m.enc_layers = 1;
  m.dec_layers = 1;
  return m;
}

TrainConfig quick(int epochs, double lr = 1e-3, int batch = 8) {
  TrainConfig t;
  t.lr = lr;
  t.batch_size = batch;
  t.max_epochs = epochs;
  t.seed = 42;
  return t;
}

bool params_equal(const ModelParams<float>& a, const ModelParams<float>& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].first != tb[i].first || *ta[i].second != *tb[i].second) return false;
  }
  return true;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArg;
}

}  // namespace

TEST(Train, OverfitsSmallSet) {
  const Dataset ds = fixture::make_dataset(5, 32, 1);
  ModelConfig m = tiny_model(32, 4);
  m.enc_layers = m.dec_layers = 2;
  const auto res = train(ds, ds, m, quick(200, 1e-3, 32));
  ASSERT_EQ(res.report.epochs.size(), 200U);
  const double first = res.report.epochs.front().train.total;
  const double last = res.report.epochs.back().train.total;
  EXPECT_LT(last, 0.1 * first) << first << " -> " << last;
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  const Dataset ds = fixture::make_dataset(6, 10, 2);
  ModelConfig m = tiny_model();
  m.context_len = 6;
  const auto init = ModelParams<float>::init(m, 5);
  auto cfg = quick(1, 0.0, 4);
  const auto res = train(ds, ds, m, cfg, {}, init);
  EXPECT_TRUE(params_equal(res.best.params, init));
}

TEST(Train, Deterministic) {
  const Dataset ds = fixture::make_dataset(6, 20, 3);
  const Dataset val = fixture::make_dataset(6, 8, 4);
  auto cfg = quick(3);
  cfg.augment = true;
  const auto a = train(ds, val, tiny_model(), cfg);
  const auto b = train(ds, val, tiny_model(), cfg);
  ASSERT_EQ(a.report.epochs.size(), b.report.epochs.size());
  for (std::size_t i = 0; i < a.report.epochs.size(); ++i) {
    EXPECT_EQ(a.report.epochs[i].train.total, b.report.epochs[i].train.total);
    EXPECT_EQ(a.report.epochs[i].train.ce, b.report.epochs[i].train.ce);
    EXPECT_EQ(a.report.epochs[i].val_total, b.report.epochs[i].val_total);
  }
  EXPECT_EQ(a.report.best_epoch, b.report.best_epoch);
  EXPECT_TRUE(params_equal(a.best.params, b.best.params));
}

TEST(Train, BestEpochIsArgminOfValidation) {
  const Dataset ds = fixture::make_dataset(6, 20, 5);
  const Dataset val = fixture::make_dataset(6, 8, 6);
  const auto res = train(ds, val, tiny_model(), quick(6, 5e-3));
  std::size_t arg = 0;
  for (std::size_t i = 1; i < res.report.epochs.size(); ++i)
    if (res.report.epochs[i].val_total < res.report.epochs[arg].val_total) arg = i;
  EXPECT_EQ(res.report.best_epoch, static_cast<int>(arg) + 1);
  EXPECT_EQ(res.report.best_val, res.report.epochs[arg].val_total);
  EXPECT_EQ(validate(res.best, val), res.report.best_val);
}

TEST(Train, Mismatch) {
  const Dataset a = fixture::make_dataset(6, 4, 1);
  const Dataset b = fixture::make_dataset(7, 4, 1);
  Dataset empty = a;
  empty.records.clear();
  EXPECT_EQ(code_of([&] { train(a, b, tiny_model(), quick(1)); }), ErrorCode::DatasetMismatch);
  EXPECT_EQ(code_of([&] { train(a, empty, tiny_model(), quick(1)); }), ErrorCode::DatasetMismatch);
  const auto res = train(a, a, tiny_model(), quick(1));
  EXPECT_EQ(code_of([&] { validate(res.best, empty); }), ErrorCode::DatasetMismatch);
  EXPECT_EQ(code_of([&] { validate(res.best, b); }), ErrorCode::DatasetMismatch);
}

TEST(Validate, PureAndShowsGeneralizationGap) {
  const Dataset ds = fixture::make_dataset(6, 16, 7);
  const Dataset val = fixture::make_dataset(6, 64, 8);
  // Selecting on the training set itself keeps the most overfit state.
  const auto res = train(ds, ds, tiny_model(32, 4), quick(150, 3e-3, 16));
  const double v1 = validate(res.best, val);
  EXPECT_EQ(v1, validate(res.best, val));
  EXPECT_LT(validate(res.best, ds), v1);
}

TEST(Train, DescentSanity) {
  const Dataset one = fixture::make_dataset(7, 1, 9);
  int failures = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto cfg = quick(1, 1e-4, 1);
    cfg.seed = seed;
    cfg.grad_clip = 0.0;
    const auto res = train(one, one, tiny_model(), cfg);
    // train.total is measured before the step, val_total after it.
    if (!(res.report.epochs[0].val_total < res.report.epochs[0].train.total)) ++failures;
  }
  EXPECT_LE(failures, 2);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const Dataset ds = fixture::make_dataset(6, 12, 10);
  const auto dir = fs::temp_directory_path() / "dtsp_ckpt_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto cfg = quick(2);
  cfg.checkpoint_dir = dir.string();
  const auto res = train(ds, ds, tiny_model(), cfg);
  const Checkpoint loaded = load_checkpoint(dir / "best.ckpt");
  EXPECT_EQ(loaded.model, res.best.model);
  EXPECT_TRUE(params_equal(loaded.params, res.best.params));
  EXPECT_EQ(validate(loaded, ds), validate(res.best, ds));
  EXPECT_EQ(serialize_checkpoint(loaded), serialize_checkpoint(res.best));
  EXPECT_TRUE(fs::exists(dir / "train_report.jsonl"));
  fs::remove_all(dir);
}

TEST(Checkpoint, RejectsCorruption) {
  const Dataset ds = fixture::make_dataset(5, 4, 1);
  const auto res = train(ds, ds, tiny_model(), quick(1));
  std::string bytes = serialize_checkpoint(res.best);
  EXPECT_EQ(code_of([&] { deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)); }), ErrorCode::ParseError);
  bytes[0] = 'X';
  EXPECT_EQ(code_of([&] { deserialize_checkpoint(bytes); }), ErrorCode::ParseError);
}

TEST(BehaviourCloning, NeverReadsRtg) {
  const Dataset ds = fixture::make_dataset(6, 12, 11);
  const TrajectorySet zeroed(ds, true);
  for (std::size_t i = 0; i < zeroed.size(); ++i)
    for (double r : zeroed.trajectory(i).rtg) EXPECT_EQ(r, 0.0);

  // A model fed the real RTG under bc loss options must score exactly like one
  // fed literal zeros.
  ModelConfig m = tiny_model();
  m.context_len = 6;
  const DecisionTransformer<float> model(m, ModelParams<float>::init(m, 3));
  LossOptions bc;
  bc.bc_mode = true;
  const TrajectorySet real(ds, false);
  LossOptions plain;
  plain.c = 0.0;
  EXPECT_EQ(evaluate_loss(model, real, bc).total, evaluate_loss(model, zeroed, plain).total);
  EXPECT_EQ(evaluate_loss(model, real, bc).expectile, 0.0);

  auto cfg = quick(2);
  cfg.bc_mode = true;
  const auto a = train(ds, ds, tiny_model(), cfg);
  EXPECT_TRUE(a.best.loss.bc_mode);
  const auto r = rollout(a.best, ds.records[0].instance, RtgMode::bc_zero());
  EXPECT_FALSE(validate_tour(ds.records[0].instance, r.tour));
}

TEST(ScheduleFree, TrainsAndIsDeterministic) {
  const Dataset ds = fixture::make_dataset(5, 32, 12);
  auto cfg = quick(60, 3e-3, 8);
  cfg.optimizer = "schedule_free_adamw";
  cfg.warmup_steps = 10;
  const auto a = train(ds, ds, tiny_model(32, 4), cfg);
  const auto b = train(ds, ds, tiny_model(32, 4), cfg);
  EXPECT_TRUE(params_equal(a.best.params, b.best.params));
  EXPECT_LT(a.report.best_val, 0.5 * a.report.epochs.front().val_total);
}

TEST(TrainConfig, Validation) {
  auto bad = quick(1);
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = quick(1);
  bad.c = -1;
  EXPECT_THROW(bad.validate(), Error);
  bad = quick(1);
  bad.optimizer = "sgd";
  const Dataset ds = fixture::make_dataset(5, 2, 1);
  EXPECT_THROW(train(ds, ds, tiny_model(), bad), Error);
  const TrainConfig defaults;
  EXPECT_EQ(defaults.lr, 0.0025);
  EXPECT_EQ(defaults.batch_size, 1000);
  EXPECT_EQ(defaults.max_epochs, 2000);
  EXPECT_EQ(defaults.c, 0.5);
  EXPECT_EQ(defaults.alpha, 0.99);
  EXPECT_EQ(defaults.weight_decay, 0.0);
}
