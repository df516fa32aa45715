#pragma once

// Feedforward binary classifiers (ReLU hidden layers, sigmoid output) with
// hand-written backpropagation, mini-batch SGD, and frame-to-utterance
// decisions by mean probability.

#include "medstate/core.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <vector>

namespace medstate {

inline constexpr double kProbClamp = 1e-7;

struct DnnArchitecture {
  int input_dim = 0;
  std::vector<int> hidden;  // output layer (1 unit) is implicit

  std::size_t num_parameters() const {
    std::size_t n = 0;
    int prev = input_dim;
    for (int h : hidden) {
      n += static_cast<std::size_t>(prev) * h + h;
      prev = h;
    }
    return n + static_cast<std::size_t>(prev) + 1;
  }

  std::string describe() const {
    std::string s;
    for (int h : hidden) s += std::to_string(h) + ", ";
    return s + "1";
  }

  bool operator==(const DnnArchitecture&) const = default;
};

inline void validate_architecture(const DnnArchitecture& a) {
  require(a.input_dim >= 1, ErrorKind::kInvalidArgument, "input_dim must be positive");
  require(!a.hidden.empty() && a.hidden.size() <= 3, ErrorKind::kInvalidArgument, "1 to 3 hidden layers required");
  for (int h : a.hidden) require(h >= 1, ErrorKind::kInvalidArgument, "hidden widths must be positive");
}

struct DenseLayer {
  Eigen::MatrixXd weights;  // fan_in x fan_out
  Eigen::RowVectorXd bias;  // fan_out
};

struct DnnModel {
  DnnArchitecture architecture;
  std::vector<DenseLayer> layers;  // hidden layers then the output layer

  std::size_t num_parameters() const { return architecture.num_parameters(); }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weights.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }
};

// Same shape as the model's parameters.
using DnnGradient = std::vector<DenseLayer>;

inline DnnModel init_network(const DnnArchitecture& arch, std::uint64_t seed) {
  validate_architecture(arch);
  DnnModel m;
  m.architecture = arch;
  std::mt19937_64 rng(seed);
  int fan_in = arch.input_dim;
  std::vector<int> widths = arch.hidden;
  widths.push_back(1);
  for (int w : widths) {
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / fan_in));
    DenseLayer l;
    l.weights.resize(fan_in, w);
    for (Eigen::Index j = 0; j < l.weights.cols(); ++j)
      for (Eigen::Index i = 0; i < l.weights.rows(); ++i) l.weights(i, j) = nd(rng);
    l.bias = Eigen::RowVectorXd::Zero(w);
    m.layers.push_back(std::move(l));
    fan_in = w;
  }
  return m;
}

inline DnnModel zero_network(const DnnArchitecture& arch) {
  DnnModel m = init_network(arch, 0);
  for (auto& l : m.layers) {
    l.weights.setZero();
    l.bias.setZero();
  }
  return m;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace detail {

struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;  // input, then each hidden layer output
  std::vector<Eigen::MatrixXd> pre;          // hidden pre-activations
  Eigen::VectorXd logits;
};

template <typename Derived>
ForwardCache forward_cached(const DnnModel& m, const Eigen::MatrixBase<Derived>& batch) {
  require(batch.cols() == m.architecture.input_dim, ErrorKind::kDimensionMismatch,
          "network expects " + std::to_string(m.architecture.input_dim) + " inputs, got " + std::to_string(batch.cols()));
  ForwardCache c;
  c.activations.emplace_back(batch);
  for (std::size_t l = 0; l + 1 < m.layers.size(); ++l) {
    Eigen::MatrixXd z = c.activations.back() * m.layers[l].weights;
    z.rowwise() += m.layers[l].bias;
    c.activations.emplace_back(z.cwiseMax(0.0));
    c.pre.push_back(std::move(z));
  }
  const auto& out = m.layers.back();
  c.logits = (c.activations.back() * out.weights).col(0).array() + out.bias(0);
  return c;
}

}  // namespace detail

template <typename Derived>
Eigen::VectorXd forward(const DnnModel& m, const Eigen::MatrixBase<Derived>& batch) {
  auto c = detail::forward_cached(m, batch);
  return c.logits.unaryExpr([](double z) { return sigmoid(z); });
}

struct LossAndGrad {
  double loss = 0;
  DnnGradient grad;
};

// Mean (optionally sample-weighted) binary cross-entropy on clamped
// probabilities and its exact gradient.
template <typename Derived>
LossAndGrad loss_and_grad(const DnnModel& m, const Eigen::MatrixBase<Derived>& batch, const Eigen::VectorXd& labels,
                          const Eigen::VectorXd* sample_weights = nullptr) {
  require(labels.size() == batch.rows(), ErrorKind::kDimensionMismatch, "label count does not match batch");
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    require(labels(i) == 0.0 || labels(i) == 1.0, ErrorKind::kInvalidArgument, "labels must be 0 or 1");
  auto c = detail::forward_cached(m, batch);
  const Eigen::Index n = batch.rows();
  Eigen::VectorXd w = sample_weights ? *sample_weights : Eigen::VectorXd::Ones(n);
  const double wsum = w.sum();
  require(wsum > 0, ErrorKind::kInvalidArgument, "sample weights sum to zero");

  LossAndGrad r;
  Eigen::MatrixXd dz(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = sigmoid(c.logits(i));
    const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    const double y = labels(i);
    r.loss -= w(i) * (y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
    const bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
    dz(i, 0) = clamped ? 0.0 : w(i) * (p - y) / wsum;
  }
  r.loss /= wsum;

  r.grad.resize(m.layers.size());
  Eigen::MatrixXd delta = dz;
  for (std::size_t l = m.layers.size(); l-- > 0;) {
    const Eigen::MatrixXd& input = c.activations[l];
    r.grad[l].weights = input.transpose() * delta;
    r.grad[l].bias = delta.colwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = delta * m.layers[l].weights.transpose();
    delta = back.cwiseProduct((c.pre[l - 1].array() > 0.0).template cast<double>().matrix());
  }
  return r;
}

struct TrainConfig {
  double learning_rate = 0.003;
  int batch_size = 32;
  int max_epochs = 200;
  int patience = 20;
  std::uint64_t seed = 1;
  bool class_weighting = false;  // inverse-frequency sample weights
};

struct LabeledUtterance {
  Matrix frames;
  double label = 0;  // ON = 1, OFF = 0
};

struct TrainSet {
  Matrix frames;
  Eigen::VectorXd labels;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double dev_accuracy = 0;        // utterance level
  double dev_frame_accuracy = 0;
};

struct TrainResult {
  DnnModel model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_dev_accuracy = 0;
};

enum class OnOff { kOff = 0, kOn = 1 };

struct UtteranceDecision {
  double mean_prob = 0;
  OnOff label = OnOff::kOff;
  std::size_t frame_count = 0;
};

inline UtteranceDecision utterance_decision(std::span<const double> probs) {
  require(!probs.empty(), ErrorKind::kInvalidArgument, "no frame probabilities");
  UtteranceDecision d;
  d.frame_count = probs.size();
  d.mean_prob = std::accumulate(probs.begin(), probs.end(), 0.0) / static_cast<double>(probs.size());
  d.label = d.mean_prob > 0.5 ? OnOff::kOn : OnOff::kOff;
  return d;
}

// Row-at-a-time evaluation, so a frame's probability never depends on which
// other frames share its batch.
inline std::vector<double> predict_frames(const DnnModel& m, const Matrix& feat) {
  require(feat.cols() == m.architecture.input_dim, ErrorKind::kDimensionMismatch,
          "network expects " + std::to_string(m.architecture.input_dim) + " inputs, got " + std::to_string(feat.cols()));
  std::vector<double> out(static_cast<std::size_t>(feat.rows()));
  Eigen::RowVectorXd row;
  for (Eigen::Index t = 0; t < feat.rows(); ++t) {
    row = feat.row(t);
    out[static_cast<std::size_t>(t)] = forward(m, row)(0);
  }
  return out;
}

inline void sgd_step(DnnModel& m, const DnnGradient& g, double lr) {
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    m.layers[l].weights -= lr * g[l].weights;
    m.layers[l].bias -= lr * g[l].bias;
  }
}

inline TrainResult train(DnnModel model, const TrainSet& data, std::span<const LabeledUtterance> dev,
                         const TrainConfig& cfg) {
  const Eigen::Index n = data.frames.rows();
  require(n > 0 && data.labels.size() == n, ErrorKind::kInvalidArgument, "empty or inconsistent training set");
  require(!dev.empty(), ErrorKind::kInvalidArgument, "empty development set");
  require(cfg.batch_size >= 1 && cfg.learning_rate >= 0, ErrorKind::kInvalidArgument, "bad training config");
  const double positives = data.labels.sum();
  require(positives > 0 && positives < static_cast<double>(n), ErrorKind::kMissingData,
          "training data contains a single class");

  Eigen::VectorXd weights = Eigen::VectorXd::Ones(n);
  if (cfg.class_weighting) {
    const double w_on = static_cast<double>(n) / (2.0 * positives);
    const double w_off = static_cast<double>(n) / (2.0 * (static_cast<double>(n) - positives));
    for (Eigen::Index i = 0; i < n; ++i) weights(i) = data.labels(i) > 0.5 ? w_on : w_off;
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.model = model;
  result.best_dev_accuracy = -1;
  int since_best = 0;
  Eigen::MatrixXd batch;
  Eigen::VectorXd blabels, bweights;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, n - start);
      batch.resize(len, data.frames.cols());
      blabels.resize(len);
      bweights.resize(len);
      for (Eigen::Index i = 0; i < len; ++i) {
        const Eigen::Index src = order[static_cast<std::size_t>(start + i)];
        batch.row(i) = data.frames.row(src);
        blabels(i) = data.labels(src);
        bweights(i) = weights(src);
      }
      const auto lg = loss_and_grad(model, batch, blabels, &bweights);
      loss_sum += lg.loss * static_cast<double>(len);
      sgd_step(model, lg.grad, cfg.learning_rate);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    std::size_t correct = 0, frames_ok = 0, frames = 0;
    for (const auto& u : dev) {
      const auto probs = predict_frames(model, u.frames);
      const auto d = utterance_decision(probs);
      if ((d.label == OnOff::kOn) == (u.label > 0.5)) ++correct;
      for (double p : probs) frames_ok += ((p > 0.5) == (u.label > 0.5)) ? 1 : 0;
      frames += probs.size();
    }
    rec.dev_accuracy = static_cast<double>(correct) / static_cast<double>(dev.size());
    rec.dev_frame_accuracy = frames ? static_cast<double>(frames_ok) / static_cast<double>(frames) : 0.0;
    result.history.push_back(rec);

    if (rec.dev_accuracy > result.best_dev_accuracy) {
      result.best_dev_accuracy = rec.dev_accuracy;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

inline std::string serialize_dnn(const DnnModel& m, const TrainConfig* cfg = nullptr, double dev_accuracy = -1) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "medstate-dnn 1\n";
  os << "input_dim " << m.architecture.input_dim << "\n";
  os << "hidden " << m.architecture.hidden.size();
  for (int h : m.architecture.hidden) os << ' ' << h;
  os << "\n";
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& L = m.layers[l];
    os << "layer " << l << ' ' << L.weights.rows() << ' ' << L.weights.cols() << "\nweights";
    for (Eigen::Index i = 0; i < L.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < L.weights.cols(); ++j) os << ' ' << L.weights(i, j);
    os << "\nbias";
    for (Eigen::Index j = 0; j < L.bias.size(); ++j) os << ' ' << L.bias(j);
    os << "\n";
  }
  if (cfg)
    os << "train learning_rate " << cfg->learning_rate << " batch_size " << cfg->batch_size << " max_epochs "
       << cfg->max_epochs << " patience " << cfg->patience << " seed " << cfg->seed << " class_weighting "
       << (cfg->class_weighting ? 1 : 0) << "\n";
  if (dev_accuracy >= 0) os << "dev_accuracy " << dev_accuracy << "\n";
  return os.str();
}

inline DnnModel parse_dnn(std::istream& in) {
  auto expect = [&](const std::string& key) {
    std::string k;
    if (!(in >> k) || k != key) fail(ErrorKind::kFormat, "DNN file: expected '" + key + "'");
  };
  std::string magic;
  int version = 0;
  in >> magic >> version;
  require(magic == "medstate-dnn" && version == 1, ErrorKind::kFormat, "not a version-1 DNN file");
  DnnModel m;
  expect("input_dim");
  in >> m.architecture.input_dim;
  expect("hidden");
  std::size_t nh = 0;
  in >> nh;
  require(in && nh >= 1 && nh <= 3, ErrorKind::kFormat, "DNN file: bad hidden layer count");
  m.architecture.hidden.resize(nh);
  for (auto& h : m.architecture.hidden) in >> h;
  validate_architecture(m.architecture);
  for (std::size_t l = 0; l <= nh; ++l) {
    expect("layer");
    std::size_t idx = 0;
    Eigen::Index rows = 0, cols = 0;
    in >> idx >> rows >> cols;
    require(in && idx == l && rows > 0 && cols > 0, ErrorKind::kFormat, "DNN file: bad layer header");
    DenseLayer L;
    L.weights.resize(rows, cols);
    L.bias.resize(cols);
    expect("weights");
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) in >> L.weights(i, j);
    expect("bias");
    for (Eigen::Index j = 0; j < cols; ++j) in >> L.bias(j);
    m.layers.push_back(std::move(L));
  }
  require(static_cast<bool>(in), ErrorKind::kFormat, "DNN file truncated");
  int prev = m.architecture.input_dim;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const int want = l < nh ? m.architecture.hidden[l] : 1;
    require(m.layers[l].weights.rows() == prev && m.layers[l].weights.cols() == want, ErrorKind::kFormat,
            "DNN file: layer shapes do not match the architecture");
    prev = want;
  }
  return m;
}

inline void save_dnn(const std::filesystem::path& path, const DnnModel& m, const TrainConfig* cfg = nullptr,
                     double dev_accuracy = -1) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << serialize_dnn(m, cfg, dev_accuracy);
}

inline DnnModel load_dnn(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return parse_dnn(in);
}

}  // namespace medstate
