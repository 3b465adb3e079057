#include <doctest.h>

#include <cstdint>
#include <limits>

#include "retgate/error.hpp"
#include "retgate/records.hpp"
#include "test_util.hpp"

using namespace retgate;
using retgate::testing::TempDir;

TEST_CASE("derive_label covers the four correctness pairs") {
  CHECK(derive_label(false, false) == OutcomeLabel::S1);
  CHECK(derive_label(true, false) == OutcomeLabel::S2);
  CHECK(derive_label(false, true) == OutcomeLabel::S3);
  CHECK(derive_label(true, true) == OutcomeLabel::S4);
  for (auto label : kAllLabels) {
    const auto [with, without] = correctness_of(label);
    CHECK(derive_label(with, without) == label);
  }
}

TEST_CASE("label encoding is fixed") {
  for (int i = 0; i < 4; ++i) {
    const auto label = label_from_ordinal(i);
    CHECK(ordinal(label) == i);
    CHECK(parse_label(to_string(label)) == label);
  }
  CHECK(to_string(OutcomeLabel::S3) == "S3");
  CHECK_THROWS_AS(parse_label("S5"), ParseError);
  CHECK_THROWS_AS(label_from_ordinal(4), ValidationError);
}

TEST_CASE("save/load round-trips records bit-exactly") {
  TempDir dir;
  Rng rng(99);
  std::vector<FeatureRecord> records;
  for (int i = 0; i < 100; ++i) records.push_back(testing::random_record(rng, "r" + std::to_string(i)));
  // Awkward payloads: signed zero, subnormal, extremes.
  records[0].t1.data[0] = -0.0f;
  records[0].t1.data[1] = std::numeric_limits<float>::denorm_min();
  records[0].t1.data[2] = std::numeric_limits<float>::max();
  records[1].extra["extractor"] = {{"version", "2.1"}, {"token_selector", "final_step"}};

  for (std::size_t threshold : {std::size_t{0}, std::size_t{6}, std::size_t{4096}, std::size_t{1} << 31}) {
    CAPTURE(threshold);
    const auto path = dir / "records.jsonl";
    save_records(records, path, threshold);
    CHECK(std::filesystem::exists(dir / "records.f32") == (threshold == 0 || threshold == 6));
    const auto loaded = load_records(path);
    REQUIRE(loaded.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) CHECK(bit_equal(loaded[i], records[i]));
    CHECK(std::signbit(loaded[0].t1.data[0]));
    std::filesystem::remove(dir / "records.f32");
  }
}

TEST_CASE("blob sidecar is raw little-endian float32") {
  TempDir dir;
  FeatureRecord r = testing::pair_record("a", true, false);
  r.t1 = Tensor::vector({1.0f, -2.0f});
  save_records(std::vector{r}, dir / "x.jsonl", 0);
  const std::string bytes = testing::read_file(dir / "x.f32");
  REQUIRE(bytes.size() == 4 * (2 + 2 + 1 + 1));
  // 1.0f = 0x3f800000, -2.0f = 0xc0000000
  CHECK(static_cast<unsigned char>(bytes[3]) == 0x3f);
  CHECK(static_cast<unsigned char>(bytes[2]) == 0x80);
  CHECK(static_cast<unsigned char>(bytes[7]) == 0xc0);
  const auto line = testing::read_file(dir / "x.jsonl");
  CHECK(line.find("\"blob\":{\"len\":8,\"offset\":0,\"path\":\"x.f32\"}") != std::string::npos);
}

TEST_CASE("load_records rejects duplicate ids by name") {
  TempDir dir;
  std::vector<FeatureRecord> records{testing::pair_record("dup-7", true, true), testing::pair_record("dup-7", false, true)};
  save_records(records, dir / "d.jsonl");
  try {
    load_records(dir / "d.jsonl");
    FAIL("expected duplicate id error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("dup-7") != std::string::npos);
  }
}

TEST_CASE("load_records rejects t1/t2 dimension mismatch") {
  TempDir dir;
  Rng rng(3);
  auto r = testing::random_record(rng, "mismatch", 8);
  r.t2 = testing::random_tensor(rng, {16});
  save_records(std::vector{r}, dir / "m.jsonl");
  try {
    load_records(dir / "m.jsonl");
    FAIL("expected mismatch error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("t1/t2 dimension mismatch") != std::string::npos);
    CHECK(msg.find("mismatch'") != std::string::npos);
  }
}

TEST_CASE("load_records reports parse errors with line numbers") {
  TempDir dir;
  const auto good = record_to_json(testing::pair_record("ok", true, true)).dump();
  testing::write_file(dir / "bad.jsonl", good + "\n\n{\"id\": oops}\n");
  try {
    load_records(dir / "bad.jsonl");
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("load_records names the failing field") {
  TempDir dir;
  auto j = record_to_json(testing::pair_record("nan-rec", true, true));
  j["v1"]["tensor"]["shape"] = {2};
  testing::write_file(dir / "f.jsonl", j.dump() + "\n");
  try {
    load_records(dir / "f.jsonl");
    FAIL("expected validation error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("nan-rec") != std::string::npos);
    CHECK(msg.find("v1") != std::string::npos);
  }
  j = record_to_json(testing::pair_record("no-layer", true, true));
  j.erase("layer");
  testing::write_file(dir / "g.jsonl", j.dump() + "\n");
  try {
    load_records(dir / "g.jsonl");
    FAIL("expected missing field error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("layer") != std::string::npos);
  }
}

TEST_CASE("short or missing blobs are errors") {
  TempDir dir;
  auto r = testing::pair_record("b", true, true);
  save_records(std::vector{r}, dir / "b.jsonl", 0);
  auto bytes = testing::read_file(dir / "b.f32");
  testing::write_file(dir / "b.f32", bytes.substr(0, bytes.size() - 2));
  CHECK_THROWS_AS(load_records(dir / "b.jsonl"), IoError);
  std::filesystem::remove(dir / "b.f32");
  CHECK_THROWS_AS(load_records(dir / "b.jsonl"), IoError);
}

TEST_CASE("non-finite values fail validation") {
  auto r = testing::pair_record("inf", true, true);
  r.t2.data[1] = std::numeric_limits<float>::infinity();
  const auto problems = check_record(r);
  REQUIRE(problems.size() == 1);
  CHECK(problems[0].find("t2") == 0);
}

TEST_CASE("validate summarizes and lists violations") {
  SUBCASE("one record per label") {
    std::vector<FeatureRecord> records{testing::pair_record("a", false, false), testing::pair_record("b", true, false),
                                       testing::pair_record("c", false, true), testing::pair_record("d", true, true)};
    const auto report = validate(records);
    CHECK(report.ok());
    CHECK(report.per_label == std::array<std::size_t, 4>{1, 1, 1, 1});
    CHECK(report.per_dataset.at("test") == 4);
    CHECK(report.text_dims == std::vector<std::size_t>{2});
  }
  SUBCASE("empty") {
    const auto report = validate({});
    CHECK(report.ok());
    CHECK(report.n_records == 0);
    CHECK(report.per_label == std::array<std::size_t, 4>{0, 0, 0, 0});
  }
  SUBCASE("mixed layers") {
    std::vector<FeatureRecord> records{testing::pair_record("a", true, true, 4), testing::pair_record("b", true, true, 6)};
    const auto report = validate(records);
    REQUIRE_FALSE(report.ok());
    CHECK(std::find(report.violations.begin(), report.violations.end(), "mixed layer indices") !=
          report.violations.end());
  }
  SUBCASE("every violation is reported") {
    auto bad = testing::pair_record("x", true, true);
    bad.t2 = Tensor::vector({1.0f});
    bad.v1 = {VisionFeature::Kind::patches, Tensor::vector({1.0f})};
    std::vector<FeatureRecord> records{bad, testing::pair_record("x", true, true)};
    const auto report = validate(records);
    CHECK(report.violations.size() == 3);  // t1/t2, v1 rank, duplicate id
  }
}

TEST_CASE("unknown fields survive a round trip") {
  auto j = record_to_json(testing::pair_record("u", true, false));
  j["extractor_meta"] = {{"prompt_tokens", 321}};
  const auto r = record_from_json(j);
  CHECK(r.extra.at("extractor_meta").at("prompt_tokens") == 321);
  CHECK(record_to_json(r) == j);
}
