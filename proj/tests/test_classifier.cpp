#include <doctest.h>

#include <cmath>

#include "retgate/classifier.hpp"
#include "retgate/error.hpp"
#include "retgate/mlp.hpp"
#include "retgate/synth.hpp"
#include "test_util.hpp"

using namespace retgate;
using retgate::testing::TempDir;

namespace {

std::vector<OutcomeLabel> labels_with_counts(std::array<std::size_t, 4> counts) {
  std::vector<OutcomeLabel> out;
  for (std::size_t c = 0; c < 4; ++c) out.insert(out.end(), counts[c], label_from_ordinal(static_cast<int>(c)));
  return out;
}

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig tc;
  tc.hidden_dims = {32, 16};
  tc.max_epochs = 30;
  tc.seed = seed;
  return tc;
}

SynthSpec blob_spec(double separation, std::uint64_t seed) {
  SynthSpec s;
  s.n_samples = 600;
  s.class_mix = {0.1, 0.25, 0.25, 0.4};
  s.d_t = 8;
  s.d_v = 6;
  s.n_patches = 4;
  s.separation = separation;
  s.seed = seed;
  return s;
}

// Unweighted mean cross-entropy computed straight from the logits.
double plain_cross_entropy(const Mlp& net, const Eigen::MatrixXd& x, const std::vector<int>& y) {
  const Eigen::MatrixXd z = net.forward(x);
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    double denom = 0.0;
    for (Eigen::Index k = 0; k < 4; ++k) denom += std::exp(z(k, i));
    total -= std::log(std::exp(z(y[static_cast<std::size_t>(i)], i)) / denom);
  }
  return total / static_cast<double>(z.cols());
}

}  // namespace

TEST_CASE("compute_class_weights") {
  const auto balanced = labels_with_counts({10, 10, 10, 10});
  CHECK(compute_class_weights(balanced, ClassWeightMode::inverse_frequency) == ClassWeights{1, 1, 1, 1});

  const auto skewed = labels_with_counts({40, 20, 20, 120});
  const auto w = compute_class_weights(skewed, ClassWeightMode::inverse_frequency);
  CHECK(w[0] == doctest::Approx(1.25).epsilon(1e-15));
  CHECK(w[1] == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(w[2] == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(w[3] == doctest::Approx(5.0 / 12.0).epsilon(1e-15));

  CHECK(compute_class_weights(skewed, ClassWeightMode::uniform) == ClassWeights{1, 1, 1, 1});
  CHECK(compute_class_weights(skewed, ClassWeightMode::explicit_weights, {0.5, 1, 2, 3}) == ClassWeights{0.5, 1, 2, 3});
  CHECK_THROWS_AS(compute_class_weights(skewed, ClassWeightMode::explicit_weights, {0, 1, 1, 1}), ValidationError);

  try {
    compute_class_weights(labels_with_counts({3, 0, 2, 1}), ClassWeightMode::inverse_frequency);
    FAIL("expected missing-class error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("S2") != std::string::npos);
  }
}

TEST_CASE("softmax is shift invariant and never NaN") {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    std::array<double, 4> z{};
    for (auto& v : z) v = rng.normal() * 20.0;
    const double c = rng.normal() * 100.0;
    const auto p = softmax(z);
    const auto q = softmax({z[0] + c, z[1] + c, z[2] + c, z[3] + c});
    double sum = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(std::abs(p[k] - q[k]) <= 1e-12);
      CHECK_FALSE(std::isnan(p[k]));
      sum += p[k];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    CHECK(argmax_label(p) == argmax_label(q));
    CHECK(argmax_label(p) == argmax_label(z));
  }
  // Exactly representable shifts leave the stabilized result bit-identical.
  for (int trial = 0; trial < 200; ++trial) {
    std::array<double, 4> z{};
    for (auto& v : z) v = static_cast<double>(static_cast<int>(rng.below(2001)) - 1000) / 64.0;
    const double c = static_cast<double>(static_cast<int>(rng.below(4001)) - 2000) / 8.0;
    CHECK(softmax(z) == softmax({z[0] + c, z[1] + c, z[2] + c, z[3] + c}));
  }
  const auto extreme = softmax({1e308, -1e308, 0.0, 1e308});
  CHECK(extreme[0] == 0.5);
  CHECK(extreme[3] == 0.5);
}

TEST_CASE("argmax ties go to the lowest ordinal") {
  CHECK(argmax_label({0.25, 0.25, 0.25, 0.25}) == OutcomeLabel::S1);
  CHECK(argmax_label({0.1, 0.4, 0.4, 0.1}) == OutcomeLabel::S2);
  CHECK(argmax_label({0.0, 0.0, 0.5, 0.5}) == OutcomeLabel::S3);
}

TEST_CASE("predict with analytic weights") {
  const auto record = testing::pair_record("r", true, true);
  const FeatureConfig text{Modality::text_only, Pooling::mean, false};

  SUBCASE("zero model is uniform") {
    const auto model = ClassifierModel::zeros(4, {3}, text);
    const auto p = predict(model, record);
    for (double v : p.probs) CHECK(v == 0.25);
    CHECK(p.label == OutcomeLabel::S1);
  }
  SUBCASE("crafted logits [0,0,10,0]") {
    auto model = ClassifierModel::zeros(4, {}, text);
    // input = [t1, t2] = [1, 2, 3, 4]; logit 2 = 10 * x0
    model.layers[0].w.data[2 * 4 + 0] = 10.0f;
    const auto p = predict(model, record);
    CHECK(p.label == OutcomeLabel::S3);
    CHECK(p.probs[2] > 0.999);
    CHECK(std::abs(p.probs[0] + p.probs[1] + p.probs[2] + p.probs[3] - 1.0) <= 1e-9);
    CHECK(model_logits(model, std::vector<double>{1, 2, 3, 4}) == std::array<double, 4>{0, 0, 10, 0});
  }
  SUBCASE("dimension mismatch") {
    const auto model = ClassifierModel::zeros(5, {}, text);
    CHECK_THROWS_AS(predict(model, record), ValidationError);
  }
}

TEST_CASE("weighted cross-entropy") {
  Rng rng(8);
  const std::vector<std::size_t> hidden{5};
  Mlp net = Mlp::init_uniform(6, hidden, 4, rng);
  Eigen::MatrixXd x(6, 7);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  std::vector<int> y{0, 1, 2, 3, 3, 2, 1};
  CHECK(std::abs(weighted_cross_entropy(net, x, y, {1, 1, 1, 1}) - plain_cross_entropy(net, x, y)) <= 1e-12);

  SUBCASE("zero inputs and weights: output bias gradient is (softmax - onehot) * w_y / B") {
    Mlp zero = Mlp::zeros(3, hidden, 4);
    Eigen::MatrixXd zx = Eigen::MatrixXd::Zero(3, 4);
    std::vector<int> zy{0, 2, 2, 3};
    ClassWeights w{2.0, 1.0, 0.5, 3.0};
    Mlp grad;
    weighted_cross_entropy(zero, zx, zy, w, &grad);
    std::array<double, 4> expected{};
    for (std::size_t i = 0; i < zy.size(); ++i) {
      for (int k = 0; k < 4; ++k) {
        const double onehot = k == zy[i] ? 1.0 : 0.0;
        expected[static_cast<std::size_t>(k)] += (0.25 - onehot) * w[static_cast<std::size_t>(zy[i])] / 4.0;
      }
    }
    for (int k = 0; k < 4; ++k) CHECK(grad.biases[1](k) == doctest::Approx(expected[static_cast<std::size_t>(k)]).epsilon(1e-14));
    CHECK(grad.weights[0].isZero());
    const auto report = gradient_check({3, hidden}, 1, 1e-5, 1e-4, 17);
    CHECK(report.passed);
  }
}

TEST_CASE("gradient_check") {
  const auto report = gradient_check({12, {8, 6}}, 100, 1e-5, 1e-4);
  CHECK(report.trials == 100);
  CHECK(report.parameters_checked == 100 * (12 * 8 + 8 + 8 * 6 + 6 + 6 * 4 + 4));
  CHECK(report.passed);
  CHECK(report.max_relative_error <= 1e-4);
  MESSAGE("max relative error " << report.max_relative_error);

  const auto strict = gradient_check({12, {8, 6}}, 5, 1e-5, 1e-12);
  CHECK_FALSE(strict.passed);
  CHECK(strict.max_relative_error > 1e-12);
}

TEST_CASE("stratified_split keeps class proportions") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<std::size_t, 4> counts{};
    for (auto& c : counts) c = rng.below(60);
    if (counts[0] + counts[1] + counts[2] + counts[3] < 2) continue;
    const auto labels = labels_with_counts(counts);
    const double frac = rng.uniform(0.05, 0.5);
    const auto split = stratified_split(labels, frac, trial);
    CHECK(split.train.size() + split.val.size() == labels.size());
    CHECK_FALSE(split.val.empty());
    std::array<std::size_t, 4> val_counts{};
    for (auto i : split.val) val_counts[static_cast<std::size_t>(ordinal(labels[i]))]++;
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(std::abs(static_cast<double>(val_counts[c]) - frac * static_cast<double>(counts[c])) <= 1.0);
    }
    CHECK(split.val == stratified_split(labels, frac, trial).val);
  }
}

TEST_CASE("training separates Gaussian blobs") {
  const auto records = generate(blob_spec(6.0, 3));
  const FeatureConfig config{};
  const auto result = fit(records, config, small_config(1));
  const auto& meta = result.model.train_meta;
  CHECK(meta.val_accuracy >= 0.95);
  CHECK(meta.n_train + meta.n_val == records.size());

  // Nearest-centroid reference on the same split.
  FeatureConfig raw = config;
  raw.normalize = false;
  std::array<std::vector<double>, 4> centroid;
  std::array<std::size_t, 4> counts{};
  for (auto i : result.split.train) {
    const auto f = assemble(records[i], raw).values;
    auto& c = centroid[static_cast<std::size_t>(ordinal(records[i].label()))];
    if (c.empty()) c.assign(f.size(), 0.0);
    for (std::size_t j = 0; j < f.size(); ++j) c[j] += f[j];
    counts[static_cast<std::size_t>(ordinal(records[i].label()))]++;
  }
  for (std::size_t k = 0; k < 4; ++k) {
    for (auto& v : centroid[k]) v /= static_cast<double>(counts[k]);
  }
  std::size_t hits = 0;
  for (auto i : result.split.val) {
    const auto f = assemble(records[i], raw).values;
    std::array<double, 4> neg_dist{};
    for (std::size_t k = 0; k < 4; ++k) {
      double d = 0.0;
      for (std::size_t j = 0; j < f.size(); ++j) d += (f[j] - centroid[k][j]) * (f[j] - centroid[k][j]);
      neg_dist[k] = -d;
    }
    if (argmax_label(neg_dist) == records[i].label()) ++hits;
  }
  CHECK(static_cast<double>(hits) / static_cast<double>(result.split.val.size()) >= 0.99);

  // Predictions through the record path agree with the training metric.
  std::size_t val_hits = 0;
  for (auto i : result.split.val) val_hits += predict(result.model, records[i]).label == records[i].label();
  CHECK(static_cast<double>(val_hits) / static_cast<double>(meta.n_val) == meta.val_accuracy);
}

TEST_CASE("uniform and inverse-frequency weights coincide on balanced data") {
  auto spec = blob_spec(2.0, 9);
  spec.n_samples = 160;
  spec.class_mix = {0.25, 0.25, 0.25, 0.25};
  spec.exact_counts = true;
  const auto records = generate(spec);
  auto tc = small_config(5);
  tc.max_epochs = 8;
  tc.class_weight_mode = ClassWeightMode::uniform;
  const auto a = train(records, {}, tc);
  tc.class_weight_mode = ClassWeightMode::inverse_frequency;
  const auto b = train(records, {}, tc);
  CHECK(b.class_weights == ClassWeights{1, 1, 1, 1});
  REQUIRE(a.train_meta.train_loss_history.size() == b.train_meta.train_loss_history.size());
  for (std::size_t e = 0; e < a.train_meta.train_loss_history.size(); ++e) {
    CHECK(std::abs(a.train_meta.train_loss_history[e] - b.train_meta.train_loss_history[e]) <= 1e-12);
    CHECK(std::abs(a.train_meta.val_loss_history[e] - b.train_meta.val_loss_history[e]) <= 1e-12);
  }
}

TEST_CASE("no separation gives roughly the majority-class rate") {
  auto spec = blob_spec(0.0, 10);
  spec.n_samples = 2000;
  const auto records = generate(spec);
  auto tc = small_config(2);
  tc.class_weight_mode = ClassWeightMode::uniform;
  tc.val_fraction = 0.25;
  const auto model = train(records, {}, tc);
  CHECK(std::abs(model.train_meta.val_accuracy - 0.4) <= 0.05);
}

TEST_CASE("training is deterministic and models round-trip") {
  TempDir dir;
  const auto records = generate(blob_spec(4.0, 12));
  auto tc = small_config(7);
  tc.max_epochs = 5;
  save_model(train(records, {}, tc), dir / "a.json");
  save_model(train(records, {}, tc), dir / "b.json");
  CHECK(testing::read_file(dir / "a.json") == testing::read_file(dir / "b.json"));
  tc.seed = 8;
  save_model(train(records, {}, tc), dir / "c.json");
  CHECK(testing::read_file(dir / "a.json") != testing::read_file(dir / "c.json"));

  const auto original = train(records, {}, small_config(7));
  save_model(original, dir / "m.json");
  const auto loaded = load_model(dir / "m.json");
  for (std::size_t l = 0; l < original.layers.size(); ++l) {
    CHECK(loaded.layers[l].w.bit_equal(original.layers[l].w));
    CHECK(loaded.layers[l].b.bit_equal(original.layers[l].b));
  }
  CHECK(loaded.norm_stats->mean == original.norm_stats->mean);
  CHECK(loaded.norm_stats->std == original.norm_stats->std);
  for (const auto& r : records) CHECK(predict(loaded, r).probs == predict(original, r).probs);
  CHECK(loaded.to_json() == original.to_json());
}

TEST_CASE("model loading rejects bad files") {
  TempDir dir;
  auto j = ClassifierModel::zeros(4, {3}, {}).to_json();
  SUBCASE("version") {
    j["version"] = 2;
    testing::write_file(dir / "v.json", j.dump());
    try {
      load_model(dir / "v.json");
      FAIL("expected version error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("unsupported model version 2") != std::string::npos);
    }
  }
  SUBCASE("broken dimension chain") {
    j["hidden_dims"] = {5};
    testing::write_file(dir / "c.json", j.dump());
    CHECK_THROWS_AS(load_model(dir / "c.json"), ValidationError);
  }
  SUBCASE("label order") {
    j["label_order"] = {"S2", "S1", "S3", "S4"};
    testing::write_file(dir / "l.json", j.dump());
    CHECK_THROWS_AS(load_model(dir / "l.json"), ValidationError);
  }
}

TEST_CASE("train rejects unusable inputs") {
  auto spec = blob_spec(4.0, 1);
  spec.n_samples = 7;
  CHECK_THROWS_AS(train(generate(spec), {}, small_config(1)), ValidationError);

  spec.n_samples = 40;
  spec.class_mix = {0, 0, 0, 1};
  CHECK_THROWS_WITH_AS(train(generate(spec), {}, small_config(1)), doctest::Contains("degenerate"), ValidationError);

  spec.class_mix = {0.25, 0.25, 0.25, 0.25};
  auto records = generate(spec);
  records[3].layer = 9;
  CHECK_THROWS_WITH_AS(train(records, {}, small_config(1)), doctest::Contains("mixed layer"), ValidationError);

  auto bad = small_config(1);
  bad.val_fraction = 1.0;
  CHECK_THROWS_AS(train(generate(spec), {}, bad), ValidationError);
}

TEST_CASE("train config json") {
  TrainConfig tc;
  tc.hidden_dims = {7};
  tc.class_weight_mode = ClassWeightMode::explicit_weights;
  tc.explicit_class_weights = {1, 2, 3, 4};
  tc.seed = 0xffffffffffffffffULL;
  const auto back = TrainConfig::from_json(tc.to_json());
  CHECK(back.to_json() == tc.to_json());
  CHECK(TrainConfig::from_json(nlohmann::json::object()).to_json() == TrainConfig{}.to_json());
}
