#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pairint/core/error.hpp"
#include "pairint/core/io.hpp"
#include "pairint/core/rng.hpp"
#include "pairint/core/types.hpp"

namespace pairint {

struct NreTrainConfig {
  std::vector<int> hidden_sizes{128, 64};
  int embedding_dim = 32;
  double step_size = 0.005;
  int epochs = 500;
  int batch_size = 1024;
  std::uint64_t seed = 0;
  /// Keep the parameters of the epoch with the best running classification accuracy.
  bool keep_best = true;

  void validate() const {
    for (int h : hidden_sizes)
      if (h < 1) throw ConfigError("NRE hidden sizes must be positive");
    if (embedding_dim < 1) throw ConfigError("NRE embedding_dim must be positive");
    if (!(step_size > 0.0)) throw ConfigError("NRE step_size must be positive");
    if (epochs < 1) throw ConfigError("NRE epochs must be positive");
    if (batch_size < 2) throw ConfigError("NRE batch_size must be at least 2");
  }
};

namespace detail {

template <typename S>
S softplus(S x) {
  return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename S>
S sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace detail

/// Encoder MLP (ReLU between layers, linear output) followed by a per-class
/// embedding: f(x, c) = encoder(x)^T W_c. All parameters live in one flat
/// vector so the optimizer and gradient checks see a single array.
template <typename S>
class ContrastiveNet {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  ContrastiveNet() = default;

  ContrastiveNet(int input_dim, std::vector<int> hidden, int embedding_dim, int n_classes)
      : n_classes_(n_classes) {
    sizes_.push_back(input_dim);
    for (int h : hidden) sizes_.push_back(h);
    sizes_.push_back(embedding_dim);
    Index off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      w_off_.push_back(off);
      off += static_cast<Index>(sizes_[l + 1]) * sizes_[l];
      b_off_.push_back(off);
      off += sizes_[l + 1];
    }
    e_off_ = off;
    off += static_cast<Index>(n_classes) * embedding_dim;
    params_ = Vec::Zero(off);
  }

  /// Fan-in scaled normal initialization (variance 2/fan_in for ReLU layers,
  /// 1/fan_in for the linear output and the class embedding); zero biases.
  void initialize(Rng& rng) {
    params_.setZero();
    for (std::size_t l = 0; l < layers(); ++l) {
      const double fan_in = sizes_[l];
      const double sd = std::sqrt((l + 1 < layers() ? 2.0 : 1.0) / fan_in);
      auto w = weight(l);
      for (Index c = 0; c < w.cols(); ++c)
        for (Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<S>(rng.normal() * sd);
    }
    auto e = embedding();
    const double sd = std::sqrt(1.0 / embedding_dim());
    for (Index c = 0; c < e.cols(); ++c)
      for (Index r = 0; r < e.rows(); ++r) e(r, c) = static_cast<S>(rng.normal() * sd);
  }

  std::size_t layers() const { return sizes_.size() - 1; }
  int input_dim() const { return sizes_.front(); }
  int embedding_dim() const { return sizes_.back(); }
  int n_classes() const { return n_classes_; }
  const std::vector<int>& sizes() const { return sizes_; }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  Eigen::Map<Mat> weight(std::size_t l) {
    return Eigen::Map<Mat>(params_.data() + w_off_[l], sizes_[l + 1], sizes_[l]);
  }
  Eigen::Map<const Mat> weight(std::size_t l) const {
    return Eigen::Map<const Mat>(params_.data() + w_off_[l], sizes_[l + 1], sizes_[l]);
  }
  Eigen::Map<Vec> bias(std::size_t l) { return Eigen::Map<Vec>(params_.data() + b_off_[l], sizes_[l + 1]); }
  Eigen::Map<const Vec> bias(std::size_t l) const {
    return Eigen::Map<const Vec>(params_.data() + b_off_[l], sizes_[l + 1]);
  }
  /// Class embedding matrix, one row per class.
  Eigen::Map<Mat> embedding() { return Eigen::Map<Mat>(params_.data() + e_off_, n_classes_, embedding_dim()); }
  Eigen::Map<const Mat> embedding() const {
    return Eigen::Map<const Mat>(params_.data() + e_off_, n_classes_, embedding_dim());
  }

  /// Encoder output for a batch given as columns.
  Mat encode(const Mat& x) const {
    Mat a = x;
    for (std::size_t l = 0; l < layers(); ++l) {
      Mat z = weight(l) * a;
      z.colwise() += bias(l);
      if (l + 1 < layers()) z = z.cwiseMax(S(0));
      a = std::move(z);
    }
    return a;
  }

  /// Scores f(x, c) for every class: (n_classes x batch).
  Mat scores(const Mat& x) const { return embedding() * encode(x); }

  /// Balanced contrastive loss
  ///   -1/(2B) [ sum log(1 - sigmoid f(x_b, c_neg_b)) + sum log sigmoid f(x_b, c_pos_b) ]
  /// and, when `grad` is non-null, its gradient with respect to params().
  /// `accuracy` (optional) receives the count of correctly signed logits.
  S loss_and_gradient(const Mat& x, const std::vector<int>& c_pos, const std::vector<int>& c_neg, Vec* grad,
                      Index* correct = nullptr) const {
    const Index batch = x.cols();
    std::vector<Mat> acts;
    acts.reserve(layers() + 1);
    acts.push_back(x);
    for (std::size_t l = 0; l < layers(); ++l) {
      Mat z = weight(l) * acts.back();
      z.colwise() += bias(l);
      if (l + 1 < layers()) z = z.cwiseMax(S(0));
      acts.push_back(std::move(z));
    }
    const Mat& h = acts.back();
    const auto e = embedding();
    const S scale = S(1) / (S(2) * static_cast<S>(batch));
    S loss = 0;
    Vec g_pos(batch), g_neg(batch);
    Index ok = 0;
    for (Index b = 0; b < batch; ++b) {
      const S fp = e.row(c_pos[static_cast<std::size_t>(b)]).dot(h.col(b));
      const S fn = e.row(c_neg[static_cast<std::size_t>(b)]).dot(h.col(b));
      loss += detail::softplus(-fp) + detail::softplus(fn);
      g_pos(b) = (detail::sigmoid(fp) - S(1)) * scale;
      g_neg(b) = detail::sigmoid(fn) * scale;
      ok += (fp > S(0)) + (fn < S(0));
    }
    if (correct) *correct = ok;
    loss *= scale;
    if (!grad) return loss;

    grad->setZero(params_.size());
    Eigen::Map<Mat> ge(grad->data() + e_off_, n_classes_, embedding_dim());
    Mat dz(h.rows(), batch);
    for (Index b = 0; b < batch; ++b) {
      const int cp = c_pos[static_cast<std::size_t>(b)];
      const int cn = c_neg[static_cast<std::size_t>(b)];
      dz.col(b) = g_pos(b) * e.row(cp).transpose() + g_neg(b) * e.row(cn).transpose();
      ge.row(cp) += g_pos(b) * h.col(b).transpose();
      ge.row(cn) += g_neg(b) * h.col(b).transpose();
    }
    for (std::size_t l = layers(); l-- > 0;) {
      Eigen::Map<Mat>(grad->data() + w_off_[l], sizes_[l + 1], sizes_[l]) = dz * acts[l].transpose();
      Eigen::Map<Vec>(grad->data() + b_off_[l], sizes_[l + 1]) = dz.rowwise().sum();
      if (l == 0) break;
      Mat da = weight(l).transpose() * dz;
      dz = da.cwiseProduct((acts[l].array() > S(0)).template cast<S>().matrix());
    }
    return loss;
  }

 private:
  std::vector<int> sizes_;
  int n_classes_ = 0;
  std::vector<Index> w_off_, b_off_;
  Index e_off_ = 0;
  Vec params_;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // fraction of correctly signed logits, positives and negatives
};

/// Trained contrastive ratio estimator: input standardization, encoder, and
/// one embedding row per condition.
struct RatioModel {
  using Net = ContrastiveNet<float>;

  std::vector<int> hidden_sizes;
  Vector input_mean;
  Vector input_scale;
  std::vector<Condition> classes;
  Net net;
  std::vector<EpochStats> log;

  int class_of(const Condition& c) const {
    for (std::size_t k = 0; k < classes.size(); ++k)
      if (classes[k] == c) return static_cast<int>(k);
    throw DataError("condition " + c.to_string() + " not registered in ratio model");
  }

  Net::Mat standardize(const SampleMatrix& x) const {
    if (x.dim() != input_mean.size()) throw DataError("ratio model: input dimension mismatch");
    Net::Mat out(x.dim(), x.rows());
    for (Index r = 0; r < x.rows(); ++r)
      for (Index c = 0; c < x.dim(); ++c)
        out(c, r) = static_cast<float>((x.data()(r, c) - input_mean(c)) / input_scale(c));
    return out;
  }

  /// f(x, c) for every class and sample: (n_classes x n_samples).
  Net::Mat scores(const SampleMatrix& x) const {
    constexpr Index chunk = 4096;
    Net::Mat out(net.n_classes(), x.rows());
    const Net::Mat xs = standardize(x);
    for (Index s = 0; s < x.rows(); s += chunk) {
      const Index len = std::min(chunk, x.rows() - s);
      out.middleCols(s, len) = net.scores(xs.middleCols(s, len));
    }
    return out;
  }
};

/// log p(x | c_num) / p(x | c_den) = f(x, c_num) - f(x, c_den) for each row of `x`.
inline std::vector<double> nre_log_ratios(const RatioModel& model, const SampleMatrix& x, const Condition& c_num,
                                          const Condition& c_den) {
  const int a = model.class_of(c_num);
  const int b = model.class_of(c_den);
  const auto s = model.scores(x);
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  for (Index r = 0; r < x.rows(); ++r)
    out[static_cast<std::size_t>(r)] = static_cast<double>(s(a, r) - s(b, r));
  return out;
}

inline double nre_log_ratio(const RatioModel& model, const Vector& x, const Condition& c_num, const Condition& c_den) {
  RowMatrix row = x.transpose();
  return nre_log_ratios(model, SampleMatrix(std::move(row)), c_num, c_den).front();
}

/// Fraction of samples whose most probable class (argmax_c f(x,c) + log p(c))
/// is their true condition.
inline double nre_class_accuracy(const RatioModel& model, const ExperimentDataset& ds) {
  Index total = 0;
  for (const auto& [c, m] : ds.samples()) total += m.rows();
  std::vector<double> log_prior(model.classes.size());
  for (std::size_t k = 0; k < model.classes.size(); ++k)
    log_prior[k] = std::log(static_cast<double>(ds.at(model.classes[k]).rows()) / static_cast<double>(total));
  Index hits = 0;
  for (const auto& [c, m] : ds.samples()) {
    const int truth = model.class_of(c);
    const auto s = model.scores(m);
    for (Index r = 0; r < m.rows(); ++r) {
      int best = 0;
      double best_v = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < s.rows(); ++k) {
        const double v = s(k, r) + log_prior[static_cast<std::size_t>(k)];
        if (v > best_v) {
          best_v = v;
          best = static_cast<int>(k);
        }
      }
      hits += best == truth;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

/// Trains the contrastive ratio estimator on every condition of `ds` with Adam
/// (beta1 0.9, beta2 0.999, eps 1e-8). Each minibatch pairs its samples with
/// their own labels (joint) and with a within-batch shuffle of the labels
/// (product of marginals).
inline RatioModel nre_train(const ExperimentDataset& ds, const NreTrainConfig& cfg, Rng& rng) {
  cfg.validate();
  using Net = RatioModel::Net;
  RatioModel model;
  model.hidden_sizes = cfg.hidden_sizes;
  Index total = 0;
  for (const auto& [c, m] : ds.samples()) {
    if (m.rows() < 1) throw DataError("nre_train: empty condition " + c.to_string());
    model.classes.push_back(c);
    total += m.rows();
  }
  const Index dim = ds.dim();
  model.input_mean = Vector::Zero(dim);
  for (const auto& [c, m] : ds.samples()) model.input_mean += m.data().colwise().sum().transpose();
  model.input_mean /= static_cast<double>(total);
  model.input_scale = Vector::Zero(dim);
  for (const auto& [c, m] : ds.samples())
    model.input_scale += (m.data().rowwise() - model.input_mean.transpose()).array().square().matrix().colwise().sum().transpose();
  model.input_scale = (model.input_scale / static_cast<double>(total)).cwiseSqrt();
  for (Index c = 0; c < dim; ++c)
    if (!(model.input_scale(c) > 0.0)) model.input_scale(c) = 1.0;

  Net::Mat xall(dim, total);
  std::vector<int> labels(static_cast<std::size_t>(total));
  {
    Index off = 0;
    for (const auto& [c, m] : ds.samples()) {
      xall.middleCols(off, m.rows()) = model.standardize(m);
      std::fill(labels.begin() + off, labels.begin() + off + m.rows(), model.class_of(c));
      off += m.rows();
    }
  }

  model.net = Net(static_cast<int>(dim), cfg.hidden_sizes, cfg.embedding_dim, static_cast<int>(model.classes.size()));
  model.net.initialize(rng);

  const Index np = model.net.params().size();
  Net::Vec m1 = Net::Vec::Zero(np), m2 = Net::Vec::Zero(np), grad(np);
  const float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
  const float lr = static_cast<float>(cfg.step_size);
  double pow1 = 1.0, pow2 = 1.0;

  std::vector<Index> order(static_cast<std::size_t>(total));
  for (Index k = 0; k < total; ++k) order[static_cast<std::size_t>(k)] = k;
  Net::Vec best_params = model.net.params();
  double best_acc = -1.0;
  const Index bsz = std::min<Index>(cfg.batch_size, total);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    Index correct_sum = 0, seen = 0, steps = 0;
    for (Index start = 0; start + 1 < total; start += bsz) {
      const Index len = std::min(bsz, total - start);
      if (len < 2) break;
      Net::Mat xb(dim, len);
      std::vector<int> cpos(static_cast<std::size_t>(len));
      for (Index b = 0; b < len; ++b) {
        const Index src = order[static_cast<std::size_t>(start + b)];
        xb.col(b) = xall.col(src);
        cpos[static_cast<std::size_t>(b)] = labels[static_cast<std::size_t>(src)];
      }
      std::vector<int> cneg = cpos;
      rng.shuffle(cneg);
      Index correct = 0;
      const float loss = model.net.loss_and_gradient(xb, cpos, cneg, &grad, &correct);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw NumericError("nre_train: non-finite loss at epoch " + std::to_string(epoch));
      pow1 *= beta1;
      pow2 *= beta2;
      m1 = beta1 * m1 + (1.0f - beta1) * grad;
      m2 = beta2 * m2 + (1.0f - beta2) * grad.cwiseProduct(grad);
      const float c1 = static_cast<float>(1.0 - pow1), c2 = static_cast<float>(1.0 - pow2);
      model.net.params().array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
      loss_sum += loss;
      correct_sum += correct;
      seen += 2 * len;
      ++steps;
    }
    const EpochStats stats{epoch, loss_sum / static_cast<double>(steps),
                           static_cast<double>(correct_sum) / static_cast<double>(seen)};
    model.log.push_back(stats);
    if (cfg.keep_best && stats.accuracy > best_acc) {
      best_acc = stats.accuracy;
      best_params = model.net.params();
    }
  }
  if (cfg.keep_best) model.net.params() = best_params;
  if (!model.net.params().allFinite()) throw NumericError("nre_train: non-finite weights");
  return model;
}

/// Weight file: JSON, format "pairint-ratio-model" version 1. Float parameters
/// survive the float -> double -> text -> double -> float trip exactly.
inline nlohmann::json ratio_model_to_json(const RatioModel& m) {
  nlohmann::json j;
  j["format"] = "pairint-ratio-model";
  j["version"] = 1;
  j["hidden_sizes"] = m.hidden_sizes;
  j["embedding_dim"] = m.net.embedding_dim();
  j["input_mean"] = std::vector<double>(m.input_mean.data(), m.input_mean.data() + m.input_mean.size());
  j["input_scale"] = std::vector<double>(m.input_scale.data(), m.input_scale.data() + m.input_scale.size());
  nlohmann::json cls = nlohmann::json::array();
  for (const auto& c : m.classes) cls.push_back(io::condition_to_json(c));
  j["classes"] = cls;
  const auto& p = m.net.params();
  j["params"] = std::vector<float>(p.data(), p.data() + p.size());
  return j;
}

inline RatioModel ratio_model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "pairint-ratio-model" || j.value("version", 0) != 1)
    throw DataError("unsupported ratio model file");
  RatioModel m;
  m.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  const auto mean = j.at("input_mean").get<std::vector<double>>();
  const auto scale = j.at("input_scale").get<std::vector<double>>();
  m.input_mean = Eigen::Map<const Vector>(mean.data(), static_cast<Index>(mean.size()));
  m.input_scale = Eigen::Map<const Vector>(scale.data(), static_cast<Index>(scale.size()));
  for (const auto& c : j.at("classes")) m.classes.push_back(io::condition_from_json(c));
  m.net = RatioModel::Net(static_cast<int>(mean.size()), m.hidden_sizes, j.at("embedding_dim").get<int>(),
                          static_cast<int>(m.classes.size()));
  const auto p = j.at("params").get<std::vector<float>>();
  if (static_cast<Index>(p.size()) != m.net.params().size()) throw DataError("ratio model parameter count mismatch");
  m.net.params() = Eigen::Map<const RatioModel::Net::Vec>(p.data(), static_cast<Index>(p.size()));
  return m;
}

inline void save_ratio_model(const RatioModel& m, const std::filesystem::path& path) {
  io::write_file_atomic(path, ratio_model_to_json(m).dump() + "\n");
}

inline RatioModel load_ratio_model(const std::filesystem::path& path) {
  return ratio_model_from_json(nlohmann::json::parse(io::read_file(path)));
}

}  // namespace pairint
