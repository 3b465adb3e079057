#include "retgate/records.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "retgate/error.hpp"

namespace retgate {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::set<std::string> kKnownFields = {"id",      "dataset",        "backbone",        "layer",
                                            "t1",      "t2",             "v1",              "v2",
                                            "correct_with", "correct_without", "question", "answers"};

float load_le_float(const char* bytes) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, bytes, sizeof bits);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}

void append_le_float(std::string& out, float value) {
  auto bits = std::bit_cast<std::uint32_t>(value);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  char bytes[sizeof bits];
  std::memcpy(bytes, &bits, sizeof bits);
  out.append(bytes, sizeof bits);
}

// Reads sidecar blob files on first use; one instance per load call.
class BlobCache {
 public:
  explicit BlobCache(fs::path base) : base_(std::move(base)) {}

  std::vector<float> read(const std::string& rel, std::int64_t offset, std::int64_t len) {
    if (offset < 0 || len < 0) throw ValidationError("negative blob offset/len");
    if (len % 4 != 0) throw ValidationError("blob len " + std::to_string(len) + " is not a multiple of 4");
    const std::string& bytes = file(rel);
    const auto end = static_cast<std::uint64_t>(offset) + static_cast<std::uint64_t>(len);
    if (end > bytes.size()) {
      throw IoError("blob " + rel + " is short: need " + std::to_string(end) + " bytes, have " +
                    std::to_string(bytes.size()));
    }
    std::vector<float> values(static_cast<std::size_t>(len / 4));
    const char* p = bytes.data() + offset;
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = load_le_float(p + 4 * i);
    return values;
  }

 private:
  const std::string& file(const std::string& rel) {
    auto it = files_.find(rel);
    if (it != files_.end()) return it->second;
    const fs::path full = base_ / rel;
    std::ifstream in(full, std::ios::binary);
    if (!in) throw IoError("missing blob file " + full.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return files_.emplace(rel, std::move(bytes)).first->second;
  }

  fs::path base_;
  std::unordered_map<std::string, std::string> files_;
};

// Collects tensors to externalize during save.
class BlobWriter {
 public:
  BlobWriter(std::string rel_name, std::size_t threshold)
      : rel_name_(std::move(rel_name)), threshold_(threshold) {}

  json tensor(const Tensor& t) {
    if (t.data.size() <= threshold_) return tensor_to_json(t);
    const auto offset = static_cast<std::int64_t>(bytes_.size());
    for (float v : t.data) append_le_float(bytes_, v);
    json j;
    j["shape"] = t.shape;
    j["blob"] = {{"path", rel_name_},
                 {"offset", offset},
                 {"len", static_cast<std::int64_t>(t.data.size() * 4)}};
    return j;
  }

  const std::string& bytes() const { return bytes_; }

 private:
  std::string rel_name_;
  std::size_t threshold_;
  std::string bytes_;
};

Tensor parse_tensor(const json& j, BlobCache* blobs) {
  if (!j.is_object() || !j.contains("shape")) throw ParseError("tensor must be an object with a shape");
  Tensor t;
  for (const auto& dim : j.at("shape")) {
    if (!dim.is_number_integer() || dim.get<std::int64_t>() <= 0) {
      throw ValidationError("shape entries must be positive integers");
    }
    t.shape.push_back(dim.get<std::size_t>());
  }
  if (j.contains("data")) {
    const auto& data = j.at("data");
    if (!data.is_array()) throw ParseError("tensor data must be an array");
    t.data.reserve(data.size());
    for (const auto& v : data) {
      if (!v.is_number()) throw ParseError("tensor data must be numeric");
      t.data.push_back(static_cast<float>(v.get<double>()));
    }
  } else if (j.contains("blob")) {
    if (blobs == nullptr) throw ParseError("blob tensors need a file context");
    const auto& b = j.at("blob");
    t.data = blobs->read(b.at("path").get<std::string>(), b.at("offset").get<std::int64_t>(),
                         b.at("len").get<std::int64_t>());
  } else {
    throw ParseError("tensor needs either data or blob");
  }
  return t;
}

VisionFeature parse_vision(const json& j, BlobCache* blobs) {
  VisionFeature v;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "pooled") {
    v.kind = VisionFeature::Kind::pooled;
  } else if (kind == "patches") {
    v.kind = VisionFeature::Kind::patches;
  } else {
    throw ValidationError("unknown vision kind '" + kind + "'");
  }
  v.tensor = parse_tensor(j.at("tensor"), blobs);
  return v;
}

FeatureRecord parse_record(const json& j, BlobCache* blobs) {
  if (!j.is_object()) throw ParseError("record must be a JSON object");
  FeatureRecord r;
  r.id = j.at("id").get<std::string>();
  // Everything past the id gets the id in its error message.
  std::string field;
  try {
    field = "dataset";
    r.dataset = j.at("dataset").get<std::string>();
    field = "backbone";
    r.backbone = j.at("backbone").get<std::string>();
    field = "layer";
    const auto layer = j.at("layer").get<std::int64_t>();
    if (layer < 0) throw ValidationError("layer must be non-negative");
    r.layer = static_cast<int>(layer);
    field = "t1";
    r.t1 = parse_tensor(j.at("t1"), blobs);
    field = "t2";
    r.t2 = parse_tensor(j.at("t2"), blobs);
    field = "v1";
    r.v1 = parse_vision(j.at("v1"), blobs);
    field = "v2";
    r.v2 = parse_vision(j.at("v2"), blobs);
    field = "correct_with";
    r.correct_with = j.at("correct_with").get<bool>();
    field = "correct_without";
    r.correct_without = j.at("correct_without").get<bool>();
    field = "question";
    if (j.contains("question") && !j.at("question").is_null()) r.question = j.at("question").get<std::string>();
    field = "answers";
    if (j.contains("answers") && !j.at("answers").is_null()) {
      const auto& a = j.at("answers");
      if (!a.is_array() || a.size() != 2) throw ParseError("answers must be a pair of strings");
      r.answers.emplace(a[0].get<std::string>(), a[1].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ValidationError("record '" + r.id + "' field " + field + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError("record '" + r.id + "' field " + field + ": " + e.what());
  } catch (const Error& e) {
    throw ValidationError("record '" + r.id + "' field " + field + ": " + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    if (!kKnownFields.contains(key)) r.extra[key] = value;
  }
  return r;
}

json vision_json(const VisionFeature& v, json tensor) {
  return {{"kind", std::string(to_string(v.kind))}, {"tensor", std::move(tensor)}};
}

template <typename TensorFn>
json record_json(const FeatureRecord& r, TensorFn&& tensor) {
  json j = r.extra.is_object() ? r.extra : json::object();
  j["id"] = r.id;
  j["dataset"] = r.dataset;
  j["backbone"] = r.backbone;
  j["layer"] = r.layer;
  j["t1"] = tensor(r.t1);
  j["t2"] = tensor(r.t2);
  j["v1"] = vision_json(r.v1, tensor(r.v1.tensor));
  j["v2"] = vision_json(r.v2, tensor(r.v2.tensor));
  j["correct_with"] = r.correct_with;
  j["correct_without"] = r.correct_without;
  j["question"] = r.question ? json(*r.question) : json(nullptr);
  j["answers"] = r.answers ? json::array({r.answers->first, r.answers->second}) : json(nullptr);
  return j;
}

template <typename T>
void insert_sorted_unique(std::vector<T>& v, T value) {
  auto it = std::lower_bound(v.begin(), v.end(), value);
  if (it == v.end() || *it != value) v.insert(it, value);
}

}  // namespace

std::size_t Tensor::expected_size() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape == other.shape && data.size() == other.data.size() &&
         (data.empty() || std::memcmp(data.data(), other.data.data(), data.size() * sizeof(float)) == 0);
}

OutcomeLabel label_from_ordinal(int value) {
  if (value < 0 || value >= static_cast<int>(kNumLabels)) {
    throw ValidationError("label ordinal out of range: " + std::to_string(value));
  }
  return static_cast<OutcomeLabel>(value);
}

std::string_view to_string(OutcomeLabel label) {
  static constexpr std::array<std::string_view, kNumLabels> names = {"S1", "S2", "S3", "S4"};
  return names[static_cast<std::size_t>(ordinal(label))];
}

OutcomeLabel parse_label(std::string_view text) {
  for (auto label : kAllLabels) {
    if (to_string(label) == text) return label;
  }
  throw ParseError("unknown outcome label '" + std::string(text) + "'");
}

std::string_view to_string(VisionFeature::Kind kind) {
  return kind == VisionFeature::Kind::pooled ? "pooled" : "patches";
}

std::vector<std::string> check_record(const FeatureRecord& r) {
  std::vector<std::string> out;
  auto check_tensor = [&](const std::string& field, const Tensor& t) {
    if (t.shape.empty()) {
      out.push_back(field + ": empty shape");
      return;
    }
    if (std::any_of(t.shape.begin(), t.shape.end(), [](auto d) { return d == 0; })) {
      out.push_back(field + ": shape entries must be positive");
    }
    if (t.expected_size() != t.data.size()) {
      out.push_back(field + ": shape product " + std::to_string(t.expected_size()) + " != " +
                    std::to_string(t.data.size()) + " elements");
    }
    if (std::any_of(t.data.begin(), t.data.end(), [](float v) { return !std::isfinite(v); })) {
      out.push_back(field + ": non-finite value");
    }
  };
  check_tensor("t1", r.t1);
  check_tensor("t2", r.t2);
  check_tensor("v1", r.v1.tensor);
  check_tensor("v2", r.v2.tensor);
  if (r.t1.rank() != 1) out.push_back("t1: must be rank 1");
  if (r.t2.rank() != 1) out.push_back("t2: must be rank 1");
  if (r.t1.shape != r.t2.shape) out.push_back("t1/t2 dimension mismatch");
  for (const auto& [name, v] : {std::pair<const char*, const VisionFeature*>{"v1", &r.v1},
                                std::pair<const char*, const VisionFeature*>{"v2", &r.v2}}) {
    const std::size_t want = v->kind == VisionFeature::Kind::pooled ? 1 : 2;
    if (v->tensor.rank() != want) {
      out.push_back(std::string(name) + ": " + std::string(to_string(v->kind)) + " vision feature must be rank " +
                    std::to_string(want));
    }
  }
  if (r.v1.width() != r.v2.width()) out.push_back("v1/v2 dimension mismatch");
  if (r.id.empty()) out.push_back("id: empty");
  return out;
}

ValidationReport validate(std::span<const FeatureRecord> records) {
  ValidationReport report;
  report.n_records = records.size();
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    report.per_dataset[r.dataset]++;
    report.per_label[static_cast<std::size_t>(ordinal(r.label()))]++;
    insert_sorted_unique(report.layers, r.layer);
    if (!r.t1.shape.empty()) insert_sorted_unique(report.text_dims, r.t1.shape.back());
    if (!r.v1.tensor.shape.empty()) insert_sorted_unique(report.vision_dims, r.v1.width());
    for (const auto& v : check_record(r)) report.violations.push_back("record '" + r.id + "': " + v);
    if (!seen.insert(r.id).second) report.violations.push_back("record '" + r.id + "': duplicate id");
  }
  if (report.layers.size() > 1) report.violations.push_back("mixed layer indices");
  if (report.text_dims.size() > 1) report.violations.push_back("mixed text dimensions across records");
  if (report.vision_dims.size() > 1) report.violations.push_back("mixed vision dimensions across records");
  return report;
}

json ValidationReport::to_json() const {
  json labels = json::object();
  for (auto label : kAllLabels) labels[std::string(to_string(label))] = per_label[static_cast<std::size_t>(ordinal(label))];
  return {{"n_records", n_records}, {"per_dataset", per_dataset}, {"per_label", labels},
          {"layers", layers},       {"text_dims", text_dims},     {"vision_dims", vision_dims},
          {"violations", violations}, {"ok", ok()}};
}

std::vector<FeatureRecord> load_records(const fs::path& path, bool strict) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  BlobCache blobs(path.parent_path());
  std::vector<FeatureRecord> records;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    }
    FeatureRecord r;
    try {
      r = parse_record(j, &blobs);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
    const auto problems = strict ? check_record(r) : std::vector<std::string>{};
    if (!problems.empty()) throw ValidationError("record '" + r.id + "': " + problems.front());
    if (strict && !ids.insert(r.id).second) throw ValidationError("duplicate record id '" + r.id + "'");
    records.push_back(std::move(r));
  }
  return records;
}

void save_records(std::span<const FeatureRecord> records, const fs::path& path, std::size_t blob_threshold) {
  const fs::path blob_path = fs::path(path).replace_extension(".f32");
  BlobWriter blobs(blob_path.filename().string(), blob_threshold);
  std::ostringstream lines;
  for (const auto& r : records) {
    lines << record_json(r, [&](const Tensor& t) { return blobs.tensor(t); }).dump() << '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << lines.str();
  if (!out) throw IoError("write failed for " + path.string());
  if (!blobs.bytes().empty()) {
    std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
    if (!blob) throw IoError("cannot write " + blob_path.string());
    blob.write(blobs.bytes().data(), static_cast<std::streamsize>(blobs.bytes().size()));
    if (!blob) throw IoError("write failed for " + blob_path.string());
  }
}

json tensor_to_json(const Tensor& t) {
  json data = json::array();
  for (float v : t.data) data.push_back(static_cast<double>(v));
  return {{"shape", t.shape}, {"data", std::move(data)}};
}

Tensor tensor_from_json(const json& j) { return parse_tensor(j, nullptr); }

json record_to_json(const FeatureRecord& record) {
  return record_json(record, [](const Tensor& t) { return tensor_to_json(t); });
}

FeatureRecord record_from_json(const json& j) { return parse_record(j, nullptr); }

bool bit_equal(const FeatureRecord& a, const FeatureRecord& b) {
  return a.id == b.id && a.dataset == b.dataset && a.backbone == b.backbone && a.layer == b.layer &&
         a.t1.bit_equal(b.t1) && a.t2.bit_equal(b.t2) && a.v1.kind == b.v1.kind &&
         a.v1.tensor.bit_equal(b.v1.tensor) && a.v2.kind == b.v2.kind && a.v2.tensor.bit_equal(b.v2.tensor) &&
         a.correct_with == b.correct_with && a.correct_without == b.correct_without &&
         a.question == b.question && a.answers == b.answers && a.extra == b.extra;
}

}  // namespace retgate
