#include "retgate/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "retgate/error.hpp"
#include "retgate/mlp.hpp"
#include "retgate/rng.hpp"

namespace retgate {

using nlohmann::json;

namespace {

// Independent streams derived from the run seed.
constexpr std::uint64_t kSplitStream = 1;
constexpr std::uint64_t kInitStream = 2;
constexpr std::uint64_t kOrderStream = 3;

Eigen::MatrixXd feature_matrix(const std::vector<std::vector<double>>& features,
                               std::span<const std::size_t> index) {
  const auto dim = static_cast<Eigen::Index>(features.front().size());
  Eigen::MatrixXd x(dim, static_cast<Eigen::Index>(index.size()));
  for (std::size_t c = 0; c < index.size(); ++c) {
    x.col(static_cast<Eigen::Index>(c)) = Eigen::Map<const Eigen::VectorXd>(features[index[c]].data(), dim);
  }
  return x;
}

std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> index) {
  std::vector<int> out;
  out.reserve(index.size());
  for (auto i : index) out.push_back(labels[i]);
  return out;
}

// Rounds the binary64 network to the binary32 model layout.
std::vector<DenseLayer> to_layers(const Mlp& net) {
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& w = net.weights[l];
    DenseLayer layer;
    layer.w.shape = {static_cast<std::size_t>(w.rows()), static_cast<std::size_t>(w.cols())};
    layer.w.data.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) layer.w.data.push_back(static_cast<float>(w(r, c)));
    }
    layer.b.shape = {static_cast<std::size_t>(net.biases[l].size())};
    for (Eigen::Index r = 0; r < net.biases[l].size(); ++r) {
      layer.b.data.push_back(static_cast<float>(net.biases[l](r)));
    }
    layers.push_back(std::move(layer));
  }
  return layers;
}

Mlp from_layers(const std::vector<DenseLayer>& layers) {
  Mlp net;
  for (const auto& layer : layers) {
    const auto rows = static_cast<Eigen::Index>(layer.w.rows());
    const auto cols = static_cast<Eigen::Index>(layer.w.cols());
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = layer.w.data[static_cast<std::size_t>(r * cols + c)];
    }
    Eigen::VectorXd b(rows);
    for (Eigen::Index r = 0; r < rows; ++r) b(r) = layer.b.data[static_cast<std::size_t>(r)];
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  return net;
}

double accuracy(const Mlp& net, const Eigen::MatrixXd& x, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const Eigen::MatrixXd logits = net.forward(x);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    std::array<double, kNumLabels> z{};
    for (std::size_t k = 0; k < kNumLabels; ++k) z[k] = logits(static_cast<Eigen::Index>(k), i);
    if (ordinal(argmax_label(z)) == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay;
  Mlp m, v;
  std::size_t t = 0;

  Adam(const Mlp& shape, double lr_, double wd) : lr(lr_), weight_decay(wd), m(shape), v(shape) {
    for (auto& w : m.weights) w.setZero();
    for (auto& b : m.biases) b.setZero();
    v = m;
  }

  void step(Mlp& net, Mlp& grad) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    auto update = [&](auto& param, auto& g, auto& m1, auto& m2) {
      m1 = beta1 * m1 + (1.0 - beta1) * g;
      m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseProduct(g);
      param.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      if (weight_decay != 0.0) grad.weights[l] += weight_decay * net.weights[l];
      update(net.weights[l], grad.weights[l], m.weights[l], v.weights[l]);
      update(net.biases[l], grad.biases[l], m.biases[l], v.biases[l]);
    }
  }
};

}  // namespace

std::string_view to_string(ClassWeightMode mode) {
  switch (mode) {
    case ClassWeightMode::uniform: return "uniform";
    case ClassWeightMode::inverse_frequency: return "inverse_frequency";
    case ClassWeightMode::explicit_weights: return "explicit";
  }
  return "?";
}

ClassWeightMode parse_class_weight_mode(std::string_view text) {
  if (text == "uniform") return ClassWeightMode::uniform;
  if (text == "inverse_frequency") return ClassWeightMode::inverse_frequency;
  if (text == "explicit") return ClassWeightMode::explicit_weights;
  throw ParseError("unknown class weight mode '" + std::string(text) + "'");
}

void TrainConfig::check() const {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must be in (0,1)");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ValidationError("dropout_rate must be in [0,1)");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be non-negative");
  if (std::any_of(hidden_dims.begin(), hidden_dims.end(), [](auto d) { return d == 0; })) {
    throw ValidationError("hidden_dims entries must be positive");
  }
}

json TrainConfig::to_json() const {
  return {{"hidden_dims", hidden_dims},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"early_stop_patience", early_stop_patience},
          {"dropout_rate", dropout_rate},
          {"weight_decay", weight_decay},
          {"seed", seed},
          {"val_fraction", val_fraction},
          {"class_weight_mode", std::string(to_string(class_weight_mode))},
          {"explicit_class_weights", explicit_class_weights}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  if (j.contains("hidden_dims")) c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<std::size_t>();
  if (j.contains("early_stop_patience")) c.early_stop_patience = j.at("early_stop_patience").get<std::size_t>();
  if (j.contains("dropout_rate")) c.dropout_rate = j.at("dropout_rate").get<double>();
  if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("val_fraction")) c.val_fraction = j.at("val_fraction").get<double>();
  if (j.contains("class_weight_mode")) {
    c.class_weight_mode = parse_class_weight_mode(j.at("class_weight_mode").get<std::string>());
  }
  if (j.contains("explicit_class_weights")) {
    c.explicit_class_weights = j.at("explicit_class_weights").get<ClassWeights>();
  }
  return c;
}

ClassWeights compute_class_weights(std::span<const OutcomeLabel> labels, ClassWeightMode mode,
                                   const ClassWeights& explicit_weights) {
  switch (mode) {
    case ClassWeightMode::uniform: return {1.0, 1.0, 1.0, 1.0};
    case ClassWeightMode::explicit_weights:
      for (double w : explicit_weights) {
        if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("explicit class weights must be positive");
      }
      return explicit_weights;
    case ClassWeightMode::inverse_frequency: break;
  }
  std::array<std::size_t, kNumLabels> counts{};
  for (auto label : labels) counts[static_cast<std::size_t>(ordinal(label))]++;
  ClassWeights w{};
  const auto total = static_cast<double>(labels.size());
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    if (counts[c] == 0) {
      throw ValidationError("inverse_frequency class weights: class " +
                            std::string(to_string(label_from_ordinal(static_cast<int>(c)))) + " is absent");
    }
    w[c] = total / (static_cast<double>(kNumLabels) * static_cast<double>(counts[c]));
  }
  return w;
}

json TrainMeta::to_json() const {
  return {{"seed", seed},
          {"rng", rng},
          {"epochs_run", epochs_run},
          {"best_epoch", best_epoch},
          {"n_train", n_train},
          {"n_val", n_val},
          {"final_train_loss", final_train_loss},
          {"best_val_loss", best_val_loss},
          {"train_accuracy", train_accuracy},
          {"val_accuracy", val_accuracy},
          {"train_loss_history", train_loss_history},
          {"val_loss_history", val_loss_history}};
}

TrainMeta TrainMeta::from_json(const json& j) {
  TrainMeta m;
  m.seed = j.value("seed", std::uint64_t{0});
  m.rng = j.value("rng", std::string{});
  m.epochs_run = j.value("epochs_run", std::size_t{0});
  m.best_epoch = j.value("best_epoch", std::size_t{0});
  m.n_train = j.value("n_train", std::size_t{0});
  m.n_val = j.value("n_val", std::size_t{0});
  m.final_train_loss = j.value("final_train_loss", 0.0);
  m.best_val_loss = j.value("best_val_loss", 0.0);
  m.train_accuracy = j.value("train_accuracy", 0.0);
  m.val_accuracy = j.value("val_accuracy", 0.0);
  m.train_loss_history = j.value("train_loss_history", std::vector<double>{});
  m.val_loss_history = j.value("val_loss_history", std::vector<double>{});
  return m;
}

void ClassifierModel::check() const {
  if (layers.size() != hidden_dims.size() + 1) {
    throw ValidationError("model has " + std::to_string(layers.size()) + " layers but " +
                          std::to_string(hidden_dims.size()) + " hidden dims");
  }
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t out = l < hidden_dims.size() ? hidden_dims[l] : kNumLabels;
    const auto& layer = layers[l];
    if (layer.w.shape != std::vector<std::size_t>{out, in} || layer.w.data.size() != out * in) {
      throw ValidationError("layer " + std::to_string(l) + " weight shape breaks the dimension chain (expected " +
                            std::to_string(out) + "x" + std::to_string(in) + ")");
    }
    if (layer.b.shape != std::vector<std::size_t>{out} || layer.b.data.size() != out) {
      throw ValidationError("layer " + std::to_string(l) + " bias length breaks the dimension chain");
    }
    in = out;
  }
  for (double w : class_weights) {
    if (!(w > 0.0)) throw ValidationError("class weights must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ValidationError("dropout_rate must be in [0,1)");
  if (norm_stats && norm_stats->size() != input_dim) throw ValidationError("norm_stats length != input_dim");
  if (feature_config.normalize && !norm_stats) throw ValidationError("normalizing model without norm_stats");
}

json ClassifierModel::to_json() const {
  json layer_json = json::array();
  for (const auto& layer : layers) layer_json.push_back({{"w", tensor_to_json(layer.w)}, {"b", tensor_to_json(layer.b)}});
  return {{"version", kVersion},
          {"input_dim", input_dim},
          {"hidden_dims", hidden_dims},
          {"activation", "relu"},
          {"dropout_rate", dropout_rate},
          {"class_weights", class_weights},
          {"feature_config", feature_config.to_json()},
          {"norm_stats", norm_stats ? norm_stats->to_json() : json(nullptr)},
          {"label_order", {"S1", "S2", "S3", "S4"}},
          {"layers", std::move(layer_json)},
          {"train_meta", train_meta.to_json()}};
}

ClassifierModel ClassifierModel::from_json(const json& j) {
  try {
    const int version = j.at("version").get<int>();
    if (version != kVersion) {
      throw ValidationError("unsupported model version " + std::to_string(version) + " (expected " +
                            std::to_string(kVersion) + ")");
    }
    if (j.at("activation").get<std::string>() != "relu") throw ValidationError("unsupported activation");
    if (j.at("label_order") != json({"S1", "S2", "S3", "S4"})) throw ValidationError("unexpected label_order");
    ClassifierModel m;
    m.input_dim = j.at("input_dim").get<std::size_t>();
    m.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
    m.dropout_rate = j.at("dropout_rate").get<double>();
    m.class_weights = j.at("class_weights").get<ClassWeights>();
    m.feature_config = FeatureConfig::from_json(j.at("feature_config"));
    if (!j.at("norm_stats").is_null()) m.norm_stats = NormStats::from_json(j.at("norm_stats"));
    for (const auto& layer : j.at("layers")) {
      m.layers.push_back({tensor_from_json(layer.at("w")), tensor_from_json(layer.at("b"))});
    }
    if (j.contains("train_meta")) m.train_meta = TrainMeta::from_json(j.at("train_meta"));
    m.check();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
}

ClassifierModel ClassifierModel::zeros(std::size_t input_dim, std::vector<std::size_t> hidden_dims,
                                       FeatureConfig config) {
  ClassifierModel m;
  m.input_dim = input_dim;
  m.hidden_dims = std::move(hidden_dims);
  m.feature_config = config;
  m.feature_config.normalize = false;
  m.layers = to_layers(Mlp::zeros(input_dim, m.hidden_dims, kNumLabels));
  return m;
}

OutcomeLabel argmax_label(const std::array<double, kNumLabels>& values) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < kNumLabels; ++k) {
    if (values[k] > values[best]) best = k;
  }
  return label_from_ordinal(static_cast<int>(best));
}

std::array<double, kNumLabels> model_logits(const ClassifierModel& model, std::span<const double> features) {
  if (features.size() != model.input_dim) {
    throw ValidationError("feature dimension mismatch: record assembles to " + std::to_string(features.size()) +
                          ", model expects " + std::to_string(model.input_dim));
  }
  std::vector<double> a(features.begin(), features.end());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    const std::size_t out = layer.w.rows();
    const std::size_t in = layer.w.cols();
    std::vector<double> z(out);
    for (std::size_t r = 0; r < out; ++r) {
      double acc = layer.b.data[r];
      const float* w = layer.w.data.data() + r * in;
      for (std::size_t c = 0; c < in; ++c) acc += static_cast<double>(w[c]) * a[c];
      z[r] = (l + 1 < model.layers.size()) ? std::max(acc, 0.0) : acc;
    }
    a = std::move(z);
  }
  return {a[0], a[1], a[2], a[3]};
}

Prediction predict_features(const ClassifierModel& model, std::span<const double> features) {
  Prediction p;
  p.probs = softmax(model_logits(model, features));
  p.label = argmax_label(p.probs);
  return p;
}

Prediction predict(const ClassifierModel& model, const FeatureRecord& record) {
  const auto feature = assemble(record, model.feature_config, model.norm_stats ? &*model.norm_stats : nullptr);
  return predict_features(model, feature.values);
}

std::vector<Prediction> predict_all(const ClassifierModel& model, std::span<const FeatureRecord> records) {
  std::vector<Prediction> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(predict(model, r));
  return out;
}

Split stratified_split(std::span<const OutcomeLabel> labels, double val_fraction, std::uint64_t seed) {
  Rng rng(seed);
  std::array<std::vector<std::size_t>, kNumLabels> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(ordinal(labels[i]))].push_back(i);
  Split split;
  for (auto& members : by_class) {
    rng.shuffle(std::span<std::size_t>(members));
    auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(members.size()) * val_fraction));
    if (members.size() >= 2) n_val = std::min(n_val, members.size() - 1);
    else n_val = 0;
    split.val.insert(split.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.insert(split.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  // Tiny sets can round every class down to zero held-out samples.
  if (split.val.empty() && split.train.size() >= 2) {
    std::size_t largest = 0;
    for (std::size_t c = 1; c < kNumLabels; ++c) {
      if (by_class[c].size() > by_class[largest].size()) largest = c;
    }
    const std::size_t moved = by_class[largest].front();
    split.val.push_back(moved);
    split.train.erase(std::find(split.train.begin(), split.train.end(), moved));
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

TrainResult fit(std::span<const FeatureRecord> records, const FeatureConfig& feature_config,
                const TrainConfig& config) {
  config.check();
  if (records.size() < 8) throw ValidationError("training needs at least 8 records, got " + std::to_string(records.size()));
  for (const auto& r : records) {
    if (r.layer != records.front().layer) {
      throw ValidationError("mixed layer indices in training set (" + std::to_string(records.front().layer) + " and " +
                            std::to_string(r.layer) + ")");
    }
  }
  std::vector<OutcomeLabel> labels;
  std::vector<int> label_ids;
  for (const auto& r : records) {
    labels.push_back(r.label());
    label_ids.push_back(ordinal(r.label()));
  }
  if (std::all_of(labels.begin(), labels.end(), [&](auto l) { return l == labels.front(); })) {
    throw ValidationError("degenerate training data: every record has label " + std::string(to_string(labels.front())));
  }

  TrainResult result;
  result.split = stratified_split(labels, config.val_fraction, combine_seed(config.seed, kSplitStream));
  const auto& split = result.split;

  std::vector<OutcomeLabel> train_labels;
  for (auto i : split.train) train_labels.push_back(labels[i]);
  const ClassWeights class_weights =
      compute_class_weights(train_labels, config.class_weight_mode, config.explicit_class_weights);

  std::optional<NormStats> stats;
  if (feature_config.normalize) {
    std::vector<FeatureRecord> train_records;
    train_records.reserve(split.train.size());
    for (auto i : split.train) train_records.push_back(records[i]);
    stats = fit_norm_stats(train_records, feature_config);
  }

  std::vector<std::vector<double>> features;
  features.reserve(records.size());
  for (const auto& r : records) {
    features.push_back(assemble(r, feature_config, stats ? &*stats : nullptr).values);
    if (features.back().size() != features.front().size()) {
      throw ValidationError("record '" + r.id + "' assembles to a different feature length");
    }
  }
  const std::size_t input_dim = features.front().size();

  const Eigen::MatrixXd x_train = feature_matrix(features, split.train);
  const Eigen::MatrixXd x_val = feature_matrix(features, split.val);
  const std::vector<int> y_train = gather_labels(label_ids, split.train);
  const std::vector<int> y_val = gather_labels(label_ids, split.val);

  Rng init_rng(combine_seed(config.seed, kInitStream));
  Rng order_rng(combine_seed(config.seed, kOrderStream));
  Mlp net = Mlp::init_uniform(input_dim, config.hidden_dims, kNumLabels, init_rng);
  Adam adam(net, config.learning_rate, config.weight_decay);

  Mlp best = net;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t since_best = 0;
  TrainMeta meta;
  meta.seed = config.seed;
  meta.rng = Rng::kAlgorithm;

  std::vector<std::size_t> order(split.train.size());
  const double keep = 1.0 - config.dropout_rate;
  Mlp grad;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const auto b = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd xb(x_train.rows(), b);
      std::vector<int> yb;
      yb.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        xb.col(static_cast<Eigen::Index>(k - start)) = x_train.col(static_cast<Eigen::Index>(order[k]));
        yb.push_back(y_train[order[k]]);
      }
      DropoutMasks masks;
      if (config.dropout_rate > 0.0) {
        for (auto h : config.hidden_dims) {
          Eigen::MatrixXd mask(static_cast<Eigen::Index>(h), b);
          for (Eigen::Index c = 0; c < b; ++c) {
            for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = order_rng.uniform() < keep ? 1.0 / keep : 0.0;
          }
          masks.push_back(std::move(mask));
        }
      }
      const double loss = weighted_cross_entropy(net, xb, yb, class_weights, &grad,
                                                 config.dropout_rate > 0.0 ? &masks : nullptr);
      if (!std::isfinite(loss)) {
        throw Error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(n_batches + 1));
      }
      adam.step(net, grad);
      epoch_loss += loss;
      ++n_batches;
    }
    const double val_loss = weighted_cross_entropy(net, x_val, y_val, class_weights);
    if (!std::isfinite(val_loss)) throw Error("non-finite validation loss at epoch " + std::to_string(epoch));
    meta.train_loss_history.push_back(epoch_loss / static_cast<double>(n_batches));
    meta.val_loss_history.push_back(val_loss);
    meta.epochs_run = epoch;
    if (val_loss < best_val) {
      best_val = val_loss;
      best = net;
      best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.early_stop_patience) {
      break;
    }
  }

  ClassifierModel& model = result.model;
  model.input_dim = input_dim;
  model.hidden_dims = config.hidden_dims;
  model.dropout_rate = config.dropout_rate;
  model.layers = to_layers(best);
  model.class_weights = class_weights;
  model.norm_stats = stats;
  model.feature_config = feature_config;

  // Metrics use the binary32 weights that are actually shipped.
  const Mlp shipped = from_layers(model.layers);
  meta.best_epoch = best_epoch;
  meta.best_val_loss = best_val;
  meta.final_train_loss = meta.train_loss_history.back();
  meta.n_train = split.train.size();
  meta.n_val = split.val.size();
  meta.train_accuracy = accuracy(shipped, x_train, y_train);
  meta.val_accuracy = accuracy(shipped, x_val, y_val);
  model.train_meta = std::move(meta);
  model.check();
  return result;
}

void save_model(const ClassifierModel& model, const std::filesystem::path& path) {
  model.check();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << model.to_json().dump(1) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

ClassifierModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return ClassifierModel::from_json(j);
}

GradientCheckReport gradient_check(const MlpShape& shape, std::size_t n_trials, double step, double tolerance,
                                   std::uint64_t seed) {
  constexpr std::size_t kBatch = 4;
  constexpr double kKinkMargin = 1e-3;
  constexpr double kFloor = 1e-6;
  GradientCheckReport report;
  for (std::size_t trial = 0; trial < n_trials; ++trial) {
    Rng rng(combine_seed(seed, trial));
    Mlp net;
    Eigen::MatrixXd x;
    // Redraw until no hidden pre-activation sits within the kink margin,
    // where finite differences straddle the ReLU corner.
    for (;;) {
      net = Mlp::zeros(shape.input_dim, shape.hidden_dims, kNumLabels);
      net.for_each_parameter([&](double& p) { p = rng.normal() * 0.5; });
      x.resize(static_cast<Eigen::Index>(shape.input_dim), static_cast<Eigen::Index>(kBatch));
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
      bool near_kink = false;
      Eigen::MatrixXd a = x;
      for (std::size_t l = 0; l + 1 < net.num_layers(); ++l) {
        Eigen::MatrixXd z = net.weights[l] * a;
        z.colwise() += net.biases[l];
        if ((z.array().abs() < kKinkMargin).any()) near_kink = true;
        a = z.cwiseMax(0.0);
      }
      if (!near_kink) break;
      ++report.resampled;
    }
    std::vector<int> y(kBatch);
    for (auto& label : y) label = static_cast<int>(rng.below(kNumLabels));
    ClassWeights w{};
    for (auto& v : w) v = rng.uniform(0.5, 2.0);

    Mlp grad;
    weighted_cross_entropy(net, x, y, w, &grad);
    std::vector<double> analytic;
    grad.for_each_parameter([&](double& g) { analytic.push_back(g); });

    std::size_t k = 0;
    net.for_each_parameter([&](double& p) {
      const double saved = p;
      p = saved + step;
      const double plus = weighted_cross_entropy(net, x, y, w);
      p = saved - step;
      const double minus = weighted_cross_entropy(net, x, y, w);
      p = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[k++];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kFloor});
      report.max_relative_error = std::max(report.max_relative_error, rel);
    });
    report.parameters_checked += k;
    ++report.trials;
  }
  report.passed = report.max_relative_error <= tolerance;
  return report;
}

}  // namespace retgate
