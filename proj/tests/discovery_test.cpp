#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cleardr/discovery.hpp"
#include "cleardr/error.hpp"
#include "cleardr/image.hpp"
#include "cleardr/ops.hpp"
#include "cleardr/oracle/dense.hpp"
#include "cleardr/synthetic.hpp"
#include "test_util.hpp"

namespace cleardr {
namespace {

using testing::random_tensor;
using testing::Rng;
using testing::toy_config;

LabeledDataset random_dataset(std::size_t n, std::size_t grades, Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  LabeledDataset d;
  d.grade_count = grades;
  for (std::size_t i = 0; i < n; ++i)
    d.samples.push_back({random_tensor(shape, rng, 0.0f, 1.0f), i % grades, "s" + std::to_string(i)});
  return d;
}

std::set<std::string> ids(const LabeledDataset& d) {
  std::set<std::string> out;
  for (const auto& s : d.samples) out.insert(s.id);
  return out;
}

TEST(Split, NinetyTen) {
  const auto [train, test] = split(random_dataset(10, 2, Shape{1, 1, 2, 2}, 1), 0.9, 3);
  EXPECT_EQ(train.data.size(), 9u);
  EXPECT_EQ(test.data.size(), 1u);
}

TEST(Split, SeededAndPartitioning) {
  const LabeledDataset d = random_dataset(37, 3, Shape{1, 1, 2, 2}, 2);
  for (double f : {0.1, 0.5, 0.9}) {
    const auto [a_train, a_test] = split(d, f, 11);
    const auto [b_train, b_test] = split(d, f, 11);
    EXPECT_EQ(ids(a_train.data), ids(b_train.data));
    EXPECT_EQ(a_train.data.size(), static_cast<std::size_t>(std::ceil(f * 37)));
    std::set<std::string> all = ids(a_train.data), t = ids(a_test.data);
    for (const auto& id : t) EXPECT_FALSE(all.count(id)) << id;
    all.insert(t.begin(), t.end());
    EXPECT_EQ(all, ids(d));
    EXPECT_EQ(a_train.data.grade_count, 3u);
  }
  EXPECT_NE(ids(split(d, 0.5, 1).first.data), ids(split(d, 0.5, 2).first.data));
}

TEST(Split, EmptyDatasetThrows) {
  LabeledDataset d;
  d.grade_count = 2;
  EXPECT_THROW(split(d, 0.9, 1), DomainError);
}

TEST(Augment, FlagsOffIsIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor(Shape{1, 3, 5, 4}, rng);
  for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_EQ(augment(x, {false, false}, seed), x);
}

TEST(Augment, DoubleFlipIsIdentityAndPreservesValues) {
  Rng rng(2);
  const Tensor x = random_tensor(Shape{1, 3, 5, 4}, rng);
  EXPECT_EQ(flip_horizontal(flip_horizontal(x)), x);
  EXPECT_EQ(flip_vertical(flip_vertical(x)), x);
  EXPECT_FLOAT_EQ(flip_horizontal(x).at(0, 1, 2, 0), x.at(0, 1, 2, 3));
  EXPECT_FLOAT_EQ(flip_vertical(x).at(0, 2, 0, 1), x.at(0, 2, 4, 1));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto a = augment(x, {true, true}, seed).values();
    auto b = x.values();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
}

TEST(Augment, EachFlipOccursAboutHalfTheTime) {
  Rng rng(3);
  const Tensor x = random_tensor(Shape{1, 1, 3, 3}, rng);
  const Tensor h = flip_horizontal(x), v = flip_vertical(x), hv = flip_vertical(flip_horizontal(x));
  int counts[4] = {};
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const Tensor y = augment(x, {true, true}, seed);
    ASSERT_TRUE(y == x || y == h || y == v || y == hv);
    ++counts[y == x ? 0 : y == h ? 1 : y == v ? 2 : 3];
  }
  for (int c : counts) EXPECT_NEAR(c, 100, 35);
}

TEST(Normalize, MeanImageMapsToZero) {
  const ChannelStats stats{{0.2f, 0.4f}, {0.1f, 2.0f}};
  Tensor x(Shape{1, 2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) x.plane(0, 0)[i] = 0.2f, x.plane(0, 1)[i] = 0.4f;
  const Tensor z = normalize_channels(x, stats);
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Normalize, ZeroStdThrows) {
  EXPECT_THROW(normalize_channels(Tensor(Shape{1, 1, 2, 2}), ChannelStats{{0.0f}, {0.0f}}), DomainError);
}

TEST(Normalize, TrainingSetIsStandardized) {
  const LabeledDataset d = random_dataset(30, 2, Shape{1, 3, 6, 6}, 4);
  const TrainSet train{d};
  const ChannelStats stats = channel_stats(train);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0, ss = 0.0, n = 0.0;
    for (const auto& smp : d.samples) {
      const Tensor z = normalize_channels(smp.image, stats);
      for (std::size_t i = 0; i < 36; ++i) {
        const double v = z.plane(0, c)[i];
        s += v, ss += v * v, n += 1;
      }
    }
    const double mean = s / n;
    EXPECT_LT(std::abs(mean), 1e-4);
    EXPECT_NEAR(std::sqrt(ss / n - mean * mean), 1.0, 1e-3);
  }
}

TEST(Normalize, Invertible) {
  Rng rng(5);
  const Tensor x = random_tensor(Shape{1, 3, 4, 4}, rng);
  const ChannelStats stats{{0.3f, -0.1f, 0.5f}, {0.2f, 1.5f, 0.7f}};
  const Tensor back = denormalize_channels(normalize_channels(x, stats), stats);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-6);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = -0.1f;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.split_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Backward, MatchesFiniteDifferencesOfNetworkLoss) {
  Rng rng(41);
  const SequencerConfig cfg = toy_config(2, 8, 3, false);
  SequencerModel m = initialize(cfg, 6);
  for (auto& b : m.banks)
    for (float& v : b.bias) v = std::uniform_real_distribution<float>(-0.3f, 0.3f)(rng);
  const Tensor x = random_tensor(cfg.input, rng);
  const std::size_t label = 1;
  const ForwardTrace t = forward(m, x);
  const auto grads = backward(m, t, softmax_cross_entropy(t.logits, label).grad);
  auto loss_at = [&](const SequencerModel& mm) {
    return oracle::cross_entropy(oracle::widen(forward(mm, x).logits.data()), label);
  };
  for (std::size_t b = 0; b < m.banks.size(); ++b) {
    for (std::size_t i = 0; i < m.banks[b].weights.size(); i += 3) {
      SequencerModel up = m, down = m;
      up.banks[b].weights[i] += 1e-3f;
      down.banks[b].weights[i] -= 1e-3f;
      const double h = static_cast<double>(up.banks[b].weights[i]) - down.banks[b].weights[i];
      const double fd = (loss_at(up) - loss_at(down)) / h;
      EXPECT_LE(oracle::relative_error(fd, grads[b].weights[i]), 1e-3) << "bank " << b << " weight " << i;
    }
    for (std::size_t i = 0; i < m.banks[b].bias.size(); ++i) {
      SequencerModel up = m, down = m;
      up.banks[b].bias[i] += 1e-3f;
      down.banks[b].bias[i] -= 1e-3f;
      const double h = static_cast<double>(up.banks[b].bias[i]) - down.banks[b].bias[i];
      const double fd = (loss_at(up) - loss_at(down)) / h;
      EXPECT_LE(oracle::relative_error(fd, grads[b].bias[i]), 1e-3) << "bank " << b << " bias " << i;
    }
  }
}

TEST(SgdStep, MomentumRecurrence) {
  std::vector<KernelBank> banks{KernelBank(Tensor(Shape{1, 1, 1, 1}, {1.0f}), {0.5f})};
  std::vector<KernelBank> vel{KernelBank(1, 1, 1, 1)};
  const std::vector<KernelBank> g{KernelBank(Tensor(Shape{1, 1, 1, 1}, {2.0f}), {-1.0f})};
  sgd_step(banks, vel, g, 0.1f, 0.9f);
  EXPECT_FLOAT_EQ(banks[0].weights[0], 0.8f);
  EXPECT_FLOAT_EQ(banks[0].bias[0], 0.6f);
  sgd_step(banks, vel, g, 0.1f, 0.9f);  // v = 0.9 * 2 + 2 = 3.8
  EXPECT_FLOAT_EQ(banks[0].weights[0], 0.42f);
}

TEST(Train, ZeroLearningRateLeavesWeights) {
  const SequencerConfig cfg = toy_config();
  const SequencerModel m = initialize(cfg, 1);
  TrainConfig tc;
  tc.learning_rate = 0.0f;
  tc.epochs = 2;
  tc.batch_size = 4;
  const TrainResult r = train(m, TrainSet{random_dataset(10, 3, cfg.input, 7)}, tc);
  EXPECT_EQ(r.model.banks, m.banks);
  EXPECT_EQ(r.metrics.size(), 2u);
  EXPECT_TRUE(std::isnan(r.metrics[0].test_accuracy));
}

TEST(Train, OneStepDecreasesSampleLoss) {
  const SequencerConfig cfg = toy_config();
  const SequencerModel m = initialize(cfg, 8);
  LabeledDataset d = random_dataset(1, 3, cfg.input, 9);
  d.samples[0].grade = 2;
  TrainConfig tc;
  tc.learning_rate = 1e-3f;
  tc.epochs = 1;
  tc.batch_size = 1;
  tc.augment = {false, false};
  const TrainResult r = train(m, TrainSet{d}, tc);
  auto loss = [&](const SequencerModel& mm) {
    const Tensor x = normalize_channels(d.samples[0].image, r.model.normalization);
    return softmax_cross_entropy(forward(mm, x).logits, 2).loss;
  };
  SequencerModel before = m;
  before.normalization = r.model.normalization;
  EXPECT_LT(loss(r.model), loss(before));
}

TEST(Train, DeterministicForFixedSeed) {
  const SequencerConfig cfg = toy_config();
  const SequencerModel m = initialize(cfg, 2);
  const LabeledDataset d = random_dataset(24, 3, cfg.input, 10);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 5;
  const TrainResult a = train(m, TrainSet{d}, tc), b = train(m, TrainSet{d}, tc);
  EXPECT_EQ(a.model, b.model);
  tc.seed = 8;
  EXPECT_NE(train(m, TrainSet{d}, tc).model, a.model);
}

TEST(Train, ProgressSinkSeesEveryEpoch) {
  const SequencerConfig cfg = toy_config();
  TrainConfig tc;
  tc.epochs = 3;
  std::vector<std::size_t> seen;
  const auto d = random_dataset(12, 3, cfg.input, 3);
  TestSet test{random_dataset(4, 3, cfg.input, 4)};
  train(initialize(cfg, 1), TrainSet{d}, tc, [&](const EpochMetrics& e) {
    seen.push_back(e.epoch);
    EXPECT_GE(e.test_accuracy, 0.0);
  }, &test);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
}

TEST(Train, DivergenceCarriesEpoch) {
  const SequencerConfig cfg = toy_config(2, 8, 3, false);
  TrainConfig tc;
  tc.learning_rate = 1e36f;
  tc.momentum = 0.9f;
  tc.epochs = 20;
  tc.batch_size = 2;
  try {
    train(initialize(cfg, 3), TrainSet{random_dataset(8, 3, cfg.input, 5)}, tc);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.epoch(), 1u);
    EXPECT_LE(e.epoch(), 20u);
  }
}

TEST(Train, GradeCountMismatchThrows) {
  TrainConfig tc;
  EXPECT_THROW(train(initialize(toy_config(), 1), TrainSet{random_dataset(4, 2, Shape{1, 2, 8, 8}, 1)}, tc),
               DomainError);
}

// Planted-lesion data, shipped seed: the loss must fall between epochs 1 and 5.
TEST(Train, SyntheticLossFallsByEpochFive) {
  synthetic::PlantedOptions o;
  const auto images = synthetic::generate(150, o);
  const LabeledDataset d = synthetic::to_dataset(images, o.classes);
  SequencerConfig cfg = SequencerConfig::desk_default(GradeSet::numbered(o.classes));
  TrainConfig tc;
  tc.epochs = 5;
  const TrainResult r = train(initialize(cfg, tc.seed), TrainSet{d}, tc);
  EXPECT_LT(r.metrics[4].mean_loss, r.metrics[0].mean_loss);
}

TEST(Evaluate, ConstantPredictorOnConstantSet) {
  const SequencerConfig cfg = toy_config();
  const SequencerModel m = initialize(cfg, 1);  // zero image -> zero logits -> grade 0
  LabeledDataset d;
  d.grade_count = 3;
  for (int i = 0; i < 6; ++i) d.samples.push_back({Tensor(cfg.input), 0, "z"});
  const Evaluation e = evaluate(m, TestSet{d});
  EXPECT_EQ(e.accuracy, 1.0);
  EXPECT_EQ(e.confusion[0][0], 6u);
}

TEST(Evaluate, ConfusionConsistency) {
  const SequencerConfig cfg = toy_config();
  const SequencerModel m = initialize(cfg, 4);
  const LabeledDataset d = random_dataset(50, 3, cfg.input, 12);
  const Evaluation e = evaluate(m, TestSet{d});
  std::size_t total = 0, trace = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    std::size_t row = 0;
    for (std::size_t p = 0; p < 3; ++p) row += e.confusion[t][p];
    const auto expected = static_cast<std::size_t>(
        std::count_if(d.samples.begin(), d.samples.end(), [&](const Sample& s) { return s.grade == t; }));
    EXPECT_EQ(row, expected);
    total += row;
    trace += e.confusion[t][t];
  }
  EXPECT_EQ(total, 50u);
  EXPECT_DOUBLE_EQ(e.accuracy, static_cast<double>(trace) / 50.0);
}

TEST(Evaluate, EmptySetThrows) {
  LabeledDataset d;
  d.grade_count = 3;
  EXPECT_THROW(evaluate(initialize(toy_config(), 1), TestSet{d}), DomainError);
}

TEST(Metrics, LineFormat) {
  EXPECT_EQ(format_metrics_line({3, 0.5, 0.75, 1.0}), "3,0.500000,0.750000,1.000000");
}

}  // namespace
}  // namespace cleardr
