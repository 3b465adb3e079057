#include <doctest.h>

#include <cmath>

#include "retgate/assembly.hpp"
#include "retgate/error.hpp"
#include "test_util.hpp"

using namespace retgate;

namespace {

// Long-double reference for the column mean.
std::vector<long double> naive_column_mean(const Tensor& m) {
  std::vector<long double> out(m.cols(), 0.0L);
  for (std::size_t j = 0; j < m.cols(); ++j) {
    for (std::size_t i = 0; i < m.rows(); ++i) out[j] += static_cast<long double>(m.at(i, j));
    out[j] /= static_cast<long double>(m.rows());
  }
  return out;
}

FeatureRecord dims_record(std::size_t d_t, std::size_t d_v, std::size_t n_patches) {
  Rng rng(5);
  FeatureRecord r = testing::random_record(rng, "dims", d_t, d_v, n_patches);
  r.v2 = {VisionFeature::Kind::patches, testing::random_tensor(rng, {n_patches, d_v})};
  return r;
}

}  // namespace

TEST_CASE("mean_pool") {
  CHECK(mean_pool(Tensor::matrix(2, 2, {1, 2, 3, 4})) == std::vector<double>{2, 3});
  CHECK(mean_pool(Tensor::matrix(1, 3, {5, 6, 7})) == std::vector<double>{5, 6, 7});
  CHECK_THROWS_AS(mean_pool(Tensor::matrix(0, 3, {})), ValidationError);
  CHECK_THROWS_AS(mean_pool(Tensor::vector({1, 2})), ValidationError);

  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = testing::random_tensor(rng, {16, 8});
    const auto got = mean_pool(m);
    const auto want = naive_column_mean(m);
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(std::abs(got[j] - static_cast<double>(want[j])) <= 1e-12 * std::max(1.0, std::abs(static_cast<double>(want[j]))));
    }
  }
}

TEST_CASE("max_pool") {
  CHECK(max_pool(Tensor::matrix(2, 2, {1, 2, 3, 4})) == std::vector<double>{3, 4});
  const auto constant = Tensor::matrix(3, 2, {7, -1, 7, -1, 7, -1});
  CHECK(max_pool(constant) == std::vector<double>{7, -1});
  CHECK(max_pool(constant) == mean_pool(constant));
  CHECK_THROWS_AS(max_pool(Tensor::matrix(0, 2, {})), ValidationError);
}

TEST_CASE("max_pool dominates mean_pool, equal exactly on constant columns") {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    const std::size_t d = 1 + rng.below(10);
    auto m = testing::random_tensor(rng, {n, d});
    std::vector<bool> constant(d, n == 1);
    for (std::size_t j = 0; j < d; ++j) {
      if (rng.below(3) == 0) {
        constant[j] = true;
        for (std::size_t i = 0; i < n; ++i) m.data[i * d + j] = m.data[j];
      }
    }
    const auto mx = max_pool(m);
    const auto mn = mean_pool(m);
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(mx[j] >= mn[j]);
      CHECK((mx[j] == mn[j]) == constant[j]);
    }
  }
}

TEST_CASE("assemble layouts") {
  const auto r = dims_record(4, 3, 5);
  const auto multi = assemble(r, {Modality::multimodal, Pooling::mean, false});
  CHECK(multi.values.size() == 14);
  REQUIRE(multi.layout.size() == 4);
  CHECK(multi.layout[0] == Segment{SegmentName::T1, 0, 4});
  CHECK(multi.layout[1] == Segment{SegmentName::V1, 4, 3});
  CHECK(multi.layout[2] == Segment{SegmentName::T2, 7, 4});
  CHECK(multi.layout[3] == Segment{SegmentName::V2, 11, 3});

  const auto text = assemble(r, {Modality::text_only, Pooling::max, false});
  CHECK(text.values.size() == 8);
  REQUIRE(text.layout.size() == 2);
  CHECK(text.layout[0].name == SegmentName::T1);
  CHECK(text.layout[1].name == SegmentName::T2);

  const auto vision = assemble(r, {Modality::vision_only, Pooling::max, false});
  CHECK(vision.values.size() == 6);
  CHECK(std::vector<double>(vision.segment(SegmentName::V1).begin(), vision.segment(SegmentName::V1).end()) ==
        max_pool(r.v1.tensor));

  // Text segments of the multimodal feature equal the text_only feature.
  for (auto name : {SegmentName::T1, SegmentName::T2}) {
    const auto a = multi.segment(name);
    const auto b = text.segment(name);
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
}

TEST_CASE("assemble passes pooled vision through and normalizes") {
  auto r = testing::pair_record("p", true, true);
  const FeatureConfig raw{Modality::multimodal, Pooling::max, false};
  const auto f = assemble(r, raw);
  CHECK(f.values == std::vector<double>{1, 2, 0.5, 3, 4, 0.25});

  NormStats stats{f.values, std::vector<double>(6, 1.0)};
  const auto z = assemble(r, {Modality::multimodal, Pooling::max, true}, &stats);
  CHECK(z.values == std::vector<double>(6, 0.0));

  CHECK_THROWS_AS(assemble(r, {Modality::multimodal, Pooling::max, true}), ValidationError);
  NormStats short_stats{{0.0}, {1.0}};
  CHECK_THROWS_AS(assemble(r, {Modality::multimodal, Pooling::max, true}, &short_stats), ValidationError);
}

TEST_CASE("fit_norm_stats") {
  auto a = testing::pair_record("a", true, true);
  auto b = testing::pair_record("b", true, true);
  a.t1 = Tensor::vector({0, 0});
  b.t1 = Tensor::vector({2, 2});
  a.t2 = b.t2 = Tensor::vector({5, 5});
  const FeatureConfig text{Modality::text_only, Pooling::mean, true};
  const auto s = fit_norm_stats(std::vector{a, b}, text);
  CHECK(s.mean == std::vector<double>{1, 1, 5, 5});
  CHECK(s.std == std::vector<double>{1, 1, NormStats::kStdFloor, NormStats::kStdFloor});
  CHECK_THROWS_AS(fit_norm_stats(std::vector{a}, text), ValidationError);

  // Two-pass long-double reference on random data.
  Rng rng(21);
  std::vector<FeatureRecord> records;
  for (int i = 0; i < 50; ++i) records.push_back(testing::random_record(rng, std::to_string(i), 6, 4, 3));
  for (auto& r : records) r.v2 = {VisionFeature::Kind::patches, testing::random_tensor(rng, {2, 4})};
  const FeatureConfig multi{Modality::multimodal, Pooling::mean, true};
  const auto stats = fit_norm_stats(records, multi);
  FeatureConfig unnorm = multi;
  unnorm.normalize = false;
  std::vector<std::vector<double>> feats;
  for (const auto& r : records) feats.push_back(assemble(r, unnorm).values);
  for (std::size_t j = 0; j < stats.size(); ++j) {
    long double mean = 0;
    for (const auto& f : feats) mean += f[j];
    mean /= feats.size();
    long double var = 0;
    for (const auto& f : feats) var += (f[j] - mean) * (f[j] - mean);
    const double sd = std::sqrt(static_cast<double>(var / feats.size()));
    CHECK(std::abs(stats.mean[j] - static_cast<double>(mean)) <= 1e-10 * std::max(1.0, std::abs(static_cast<double>(mean))));
    CHECK(std::abs(stats.std[j] - sd) <= 1e-10 * std::max(1.0, sd));
  }

  // Normalizing the joint vector equals normalizing each segment with the
  // matching slice of the stats.
  const auto& rec = records.front();
  const auto joint = assemble(rec, multi, &stats);
  const auto raw_joint = assemble(rec, unnorm);
  for (const auto& seg : raw_joint.layout) {
    NormStats slice{{stats.mean.begin() + seg.offset, stats.mean.begin() + seg.offset + seg.length},
                    {stats.std.begin() + seg.offset, stats.std.begin() + seg.offset + seg.length}};
    std::vector<double> part(raw_joint.values.begin() + seg.offset, raw_joint.values.begin() + seg.offset + seg.length);
    normalize_in_place(part, slice);
    const auto got = joint.segment(seg.name);
    CHECK(std::equal(part.begin(), part.end(), got.begin(), got.end()));
  }
}

TEST_CASE("feature config serialization") {
  const FeatureConfig c{Modality::vision_only, Pooling::max, false};
  CHECK(c.to_json().dump() == R"({"modality":"vision_only","normalize":false,"pooling":"max"})");
  CHECK(FeatureConfig::from_json(c.to_json()) == c);
  CHECK_THROWS_AS(parse_modality("audio"), ParseError);
}
