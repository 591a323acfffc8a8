#include <gtest/gtest.h>

#include <json.hpp>

#include "ndtsync/cnn.hpp"
#include "ndtsync/error.hpp"
#include "ndtsync/ingest.hpp"

using namespace ndtsync;

namespace {

struct Prepared {
  Normalizer norm;
  WindowedDataset train, val, test;
};

Prepared prepare(const TrafficSeries& s, std::size_t w, std::size_t h) {
  const auto parts = split(s, SplitSpec{});
  Prepared p{fit_normalizer(parts.train), {}, {}, {}};
  p.train = make_windows(parts.train, w, h, p.norm);
  p.val = make_windows(parts.val, w, h, p.norm);
  p.test = make_windows(parts.test, w, h, p.norm);
  return p;
}

CnnConfig small_config() {
  CnnConfig c;
  c.window_len = 12;
  c.conv_layers = 2;
  c.channels_per_layer = {8, 8};
  c.epochs = 15;
  c.learning_rate = 1e-3;
  return c;
}

TrafficSeries sine(std::size_t n) { return generate(SyntheticProfile::defaults(ProfileKind::kSine, 1), n); }

}  // namespace

TEST(Training, SineBeatsPersistence) {
  const auto cfg = small_config();
  const auto p = prepare(sine(600), cfg.window_len, 1);
  const auto r = train(cfg, p.norm, p.train, p.val);
  const auto model_err = evaluate(r.model, p.test);
  const auto naive = persistence_baseline(p.test, p.norm);
  EXPECT_LT(model_err.mae, naive.mae);
}

TEST(Training, SameSeedSameTrace) {
  auto cfg = small_config();
  cfg.epochs = 3;
  const auto p = prepare(generate(SyntheticProfile::defaults(ProfileKind::kVideo, 5), 300), cfg.window_len, 1);
  const auto a = train(cfg, p.norm, p.train, p.val);
  const auto b = train(cfg, p.norm, p.train, p.val);
  ASSERT_EQ(a.trace.size(), 3u);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].train_loss, b.trace[i].train_loss);
    EXPECT_EQ(a.trace[i].val_mae, b.trace[i].val_mae);
  }
  EXPECT_EQ(save_model(a.model), save_model(b.model));

  cfg.seed = 43;
  const auto c = train(cfg, p.norm, p.train, p.val);
  EXPECT_NE(a.trace[0].train_loss, c.trace[0].train_loss);
}

TEST(Training, LossDecreasesFromFirstEpoch) {
  const auto cfg = small_config();
  const auto p = prepare(sine(400), cfg.window_len, 1);
  const auto r = train(cfg, p.norm, p.train, p.val);
  double best = r.trace.front().train_loss;
  for (const auto& e : r.trace) best = std::min(best, e.train_loss);
  EXPECT_GE(r.trace.front().train_loss, best);
  EXPECT_LT(best, r.trace.front().train_loss);
  // Returned model is the best-validation epoch.
  double best_val = r.trace.front().val_mae;
  for (const auto& e : r.trace) best_val = std::min(best_val, e.val_mae);
  EXPECT_EQ(r.trace[r.best_epoch].val_mae, best_val);
  EXPECT_DOUBLE_EQ(evaluate(r.model, p.val).mae, best_val);
}

TEST(Training, MultiStepHorizon) {
  auto cfg = small_config();
  cfg.horizon = 3;
  cfg.epochs = 2;
  const auto p = prepare(sine(300), cfg.window_len, 3);
  const auto r = train(cfg, p.norm, p.train, p.val);
  const auto pred = predict(r.model, std::vector<double>(12, 100.0));
  EXPECT_EQ(pred.values.size(), 3u);
}

TEST(Training, EmptyAndMismatchedDatasets) {
  const auto cfg = small_config();
  const auto p = prepare(sine(300), cfg.window_len, 1);
  WindowedDataset empty;
  empty.window_len = 12;
  empty.horizon = 1;
  try {
    train(cfg, p.norm, empty, p.val);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kEmptyDataset);
  }
  auto other = cfg;
  other.window_len = 10;
  EXPECT_THROW(train(other, p.norm, p.train, p.val), Error);
}

TEST(Training, InvalidConfigRejected) {
  auto cfg = small_config();
  cfg.channels_per_layer = {8};
  EXPECT_THROW(cfg.validate(), Error);
  cfg = small_config();
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = small_config();
  cfg.window_len = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Evaluate, MatchesScalarLoop) {
  const auto cfg = small_config();
  const auto p = prepare(generate(SyntheticProfile::defaults(ProfileKind::kIperf, 9), 300), cfg.window_len, 1);
  const auto model = CnnModel::init(cfg, p.norm);
  const auto m = evaluate(model, p.test);
  double abs_sum = 0, sq_sum = 0;
  for (std::size_t i = 0; i < p.test.size(); ++i) {
    std::vector<double> raw(p.test.inputs[i].size());
    for (std::size_t t = 0; t < raw.size(); ++t) raw[t] = p.norm.inverse(p.test.inputs[i][t]);
    const double got = predict(model, raw).values[0];
    const double want = p.norm.inverse(p.test.targets[i][0]);
    abs_sum += std::abs(want - got);
    sq_sum += (want - got) * (want - got);
  }
  EXPECT_NEAR(m.mae, abs_sum / p.test.size(), 1e-9);
  EXPECT_NEAR(m.rmse, std::sqrt(sq_sum / p.test.size()), 1e-9);
  EXPECT_EQ(m.count, p.test.size());
}

TEST(Persistence, HandComputed) {
  const std::vector<double> v{10, 20, 15, 30};
  const Normalizer n(0, 40);
  const auto ds = make_windows(v, 2, 1, n);
  // Windows [10,20]->15 and [20,15]->30: errors 5 and 15.
  const auto m = persistence_baseline(ds, n);
  EXPECT_NEAR(m.mae, 10.0, 1e-12);
  EXPECT_NEAR(m.rmse, std::sqrt(125.0), 1e-12);
}

TEST(ModelIo, RoundTripIsBitExact) {
  auto cfg = small_config();
  cfg.epochs = 2;
  const auto p = prepare(generate(SyntheticProfile::defaults(ProfileKind::kVideo, 2), 300), cfg.window_len, 1);
  const auto r = train(cfg, p.norm, p.train, p.val);
  const auto text = save_model(r.model);
  const auto back = load_model(text);
  EXPECT_EQ(save_model(back), text);
  EXPECT_EQ(back.config_hash(), r.model.config_hash());
  EXPECT_EQ(back.normalizer, r.model.normalizer);
  const auto a = r.model.parameters();
  const auto b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) EXPECT_EQ(a[k][i], b[k][i]);
  for (std::size_t l = 0; l < back.blocks.size(); ++l) {
    EXPECT_EQ(back.blocks[l].bn.running_mean, r.model.blocks[l].bn.running_mean);
    EXPECT_EQ(back.blocks[l].bn.running_var, r.model.blocks[l].bn.running_var);
  }
  for (std::size_t i = 0; i < p.test.size(); ++i) {
    std::vector<double> raw(cfg.window_len);
    for (std::size_t t = 0; t < raw.size(); ++t) raw[t] = p.norm.inverse(p.test.inputs[i][t]);
    EXPECT_EQ(predict(back, raw).values, predict(r.model, raw).values);
  }
}

TEST(ModelIo, TruncatedIsCorrupt) {
  const auto text = save_model(CnnModel::init(small_config(), Normalizer(0, 10)));
  for (std::size_t cut : {std::size_t{0}, std::size_t{10}, text.size() / 2, text.size() - 2}) {
    try {
      load_model(text.substr(0, cut));
      FAIL() << cut;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::kCorruptModel);
    }
  }
}

TEST(ModelIo, UnknownVersion) {
  auto doc = nlohmann::json::parse(save_model(CnnModel::init(small_config(), Normalizer(0, 10))));
  doc["format_version"] = 999;
  try {
    load_model(doc.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kVersionMismatch);
  }
}

TEST(ModelIo, ShapeDisagreementIsCorrupt) {
  auto doc = nlohmann::json::parse(save_model(CnnModel::init(small_config(), Normalizer(0, 10))));
  doc["layers"][0]["bias"].erase(0);
  try {
    load_model(doc.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kCorruptModel);
  }
}
