#include "fedstab/model.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "fedstab/kernels.hpp"

namespace fedstab::model {
namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double squared_norm(std::span<const double> v) { return simd::dot(v, v); }

// out = weight_decay * w, the gradient of (weight_decay / 2) ||w||^2.
void decay_gradient(double weight_decay, std::span<const double> w, std::span<double> out) {
  std::copy(w.begin(), w.end(), out.begin());
  simd::scale(weight_decay, out);
}

// Row-major C x d linear map shared by the linear families.
std::span<const double> row(std::span<const double> w, std::size_t r, std::size_t d) {
  return w.subspan(r * d, d);
}
std::span<double> row(std::span<double> w, std::size_t r, std::size_t d) {
  return w.subspan(r * d, d);
}

// Numerically stable log-softmax pieces: returns log-sum-exp and fills probs.
double softmax(std::span<const double> logits, std::span<double> probs) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    probs[c] = std::exp(logits[c] - top);
    sum += probs[c];
  }
  for (auto& p : probs) p /= sum;
  return top + std::log(sum);
}

class Quadratic final : public Model {
 public:
  explicit Quadratic(ModelConfig c) : Model(c) {}
  std::size_t num_params() const override { return config().classes * config().dim; }

  std::optional<double> sample_smoothness(std::span<const double> x) const override {
    return squared_norm(x) + config().weight_decay;
  }
  std::optional<double> curvature_factor() const override { return 1.0; }

 protected:
  double loss_impl(std::span<const double> w, std::span<const double> x, int label) const override {
    const std::size_t d = config().dim;
    double total = 0.0;
    for (std::size_t c = 0; c < config().classes; ++c) {
      const double r = simd::dot(row(w, c, d), x) - (static_cast<int>(c) == label ? 1.0 : 0.0);
      total += 0.5 * r * r;
    }
    return total + 0.5 * config().weight_decay * squared_norm(w);
  }

  double grad_impl(std::span<const double> w, std::span<const double> x, int label,
                   std::span<double> out) const override {
    const std::size_t d = config().dim;
    decay_gradient(config().weight_decay, w, out);
    double total = 0.0;
    for (std::size_t c = 0; c < config().classes; ++c) {
      const double r = simd::dot(row(w, c, d), x) - (static_cast<int>(c) == label ? 1.0 : 0.0);
      total += 0.5 * r * r;
      simd::axpy(r, x, row(out, c, d));
    }
    return total + 0.5 * config().weight_decay * squared_norm(w);
  }
};

class Logistic final : public Model {
 public:
  explicit Logistic(ModelConfig c) : Model(c) {}
  bool binary() const { return config().classes == 2; }
  std::size_t num_params() const override {
    return binary() ? config().dim : config().classes * config().dim;
  }

  std::optional<double> sample_smoothness(std::span<const double> x) const override {
    return *curvature_factor() * squared_norm(x) + config().weight_decay;
  }
  // sup_z sigma'(z) = 1/4; the softmax Jacobian diag(p) - p p^T has spectral
  // norm at most 1/2.
  std::optional<double> curvature_factor() const override { return binary() ? 0.25 : 0.5; }

 protected:
  double loss_impl(std::span<const double> w, std::span<const double> x, int label) const override {
    const double reg = 0.5 * config().weight_decay * squared_norm(w);
    if (binary()) {
      const double z = simd::dot(w, x);
      return softplus(z) - (label == 1 ? z : 0.0) + reg;
    }
    std::vector<double> logits(config().classes), probs(config().classes);
    for (std::size_t c = 0; c < config().classes; ++c) logits[c] = simd::dot(row(w, c, config().dim), x);
    return softmax(logits, probs) - logits[static_cast<std::size_t>(label)] + reg;
  }

  double grad_impl(std::span<const double> w, std::span<const double> x, int label,
                   std::span<double> out) const override {
    const double reg = 0.5 * config().weight_decay * squared_norm(w);
    decay_gradient(config().weight_decay, w, out);
    if (binary()) {
      const double z = simd::dot(w, x);
      simd::axpy(sigmoid(z) - (label == 1 ? 1.0 : 0.0), x, out);
      return softplus(z) - (label == 1 ? z : 0.0) + reg;
    }
    const std::size_t d = config().dim;
    std::vector<double> logits(config().classes), probs(config().classes);
    for (std::size_t c = 0; c < config().classes; ++c) logits[c] = simd::dot(row(w, c, d), x);
    const double lse = softmax(logits, probs);
    for (std::size_t c = 0; c < config().classes; ++c) {
      const double coeff = probs[c] - (static_cast<int>(c) == label ? 1.0 : 0.0);
      simd::axpy(coeff, x, row(out, c, d));
    }
    return lse - logits[static_cast<std::size_t>(label)] + reg;
  }
};

// Layout: W1 (h x d), b1 (h), W2 (C x h), b2 (C).
class Mlp final : public Model {
 public:
  explicit Mlp(ModelConfig c) : Model(c) {
    if (c.hidden < 1) throw ValidationError("mlp needs hidden >= 1");
  }
  std::size_t num_params() const override {
    const auto& c = config();
    return c.hidden * c.dim + c.hidden + c.classes * c.hidden + c.classes;
  }
  std::optional<double> sample_smoothness(std::span<const double>) const override {
    return std::nullopt;
  }
  std::optional<double> curvature_factor() const override { return std::nullopt; }

 protected:
  struct Forward {
    std::vector<double> hidden, logits, probs;
    double loss = 0.0;
  };

  Forward forward(std::span<const double> w, std::span<const double> x, int label) const {
    const auto& c = config();
    const std::size_t h = c.hidden, d = c.dim, k = c.classes;
    const auto w1 = w.subspan(0, h * d);
    const auto b1 = w.subspan(h * d, h);
    const auto w2 = w.subspan(h * d + h, k * h);
    const auto b2 = w.subspan(h * d + h + k * h, k);
    Forward f{std::vector<double>(h), std::vector<double>(k), std::vector<double>(k), 0.0};
    for (std::size_t j = 0; j < h; ++j) f.hidden[j] = std::tanh(simd::dot(row(w1, j, d), x) + b1[j]);
    for (std::size_t o = 0; o < k; ++o) f.logits[o] = simd::dot(row(w2, o, h), f.hidden) + b2[o];
    f.loss = softmax(f.logits, f.probs) - f.logits[static_cast<std::size_t>(label)] +
             0.5 * c.weight_decay * squared_norm(w);
    return f;
  }

  double loss_impl(std::span<const double> w, std::span<const double> x, int label) const override {
    return forward(w, x, label).loss;
  }

  double grad_impl(std::span<const double> w, std::span<const double> x, int label,
                   std::span<double> out) const override {
    const auto& c = config();
    const std::size_t h = c.hidden, d = c.dim, k = c.classes;
    const Forward f = forward(w, x, label);
    decay_gradient(c.weight_decay, w, out);
    const auto w2 = w.subspan(h * d + h, k * h);
    auto g_w1 = out.subspan(0, h * d);
    auto g_b1 = out.subspan(h * d, h);
    auto g_w2 = out.subspan(h * d + h, k * h);
    auto g_b2 = out.subspan(h * d + h + k * h, k);
    std::vector<double> back(h, 0.0);
    for (std::size_t o = 0; o < k; ++o) {
      const double delta = f.probs[o] - (static_cast<int>(o) == label ? 1.0 : 0.0);
      simd::axpy(delta, f.hidden, row(g_w2, o, h));
      g_b2[o] += delta;
      simd::axpy(delta, row(w2, o, h), back);
    }
    for (std::size_t j = 0; j < h; ++j) {
      const double delta = back[j] * (1.0 - f.hidden[j] * f.hidden[j]);
      simd::axpy(delta, x, row(g_w1, j, d));
      g_b1[j] += delta;
    }
    return f.loss;
  }

  void init_impl(CounterStream& stream, std::span<double> w) const override {
    const auto& c = config();
    const std::size_t h = c.hidden, d = c.dim, k = c.classes;
    std::fill(w.begin(), w.end(), 0.0);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
    for (std::size_t i = 0; i < h * d; ++i) w[i] = s1 * stream.normal();
    for (std::size_t i = 0; i < k * h; ++i) w[h * d + h + i] = s2 * stream.normal();
  }
};

}  // namespace

std::string_view to_string(Family family) {
  switch (family) {
    case Family::quadratic: return "quadratic";
    case Family::logistic: return "logistic";
    case Family::mlp: return "mlp";
  }
  return "logistic";
}

Family parse_family(std::string_view name) {
  for (Family f : {Family::quadratic, Family::logistic, Family::mlp}) {
    if (to_string(f) == name) return f;
  }
  throw ValidationError(fmt::format("unknown model family '{}'", name));
}

void Model::check(std::span<const double> w, std::span<const double> x, int label) const {
  if (w.size() != num_params()) {
    throw ValidationError(fmt::format("parameter vector has {} entries, model expects {}",
                                      w.size(), num_params()));
  }
  if (x.size() != config_.dim) {
    throw ValidationError(fmt::format("feature vector has dimension {}, model expects {}",
                                      x.size(), config_.dim));
  }
  if (label < 0 || static_cast<std::size_t>(label) >= std::max<std::size_t>(config_.classes, 1)) {
    throw ValidationError(fmt::format("label {} out of range for {} classes", label, config_.classes));
  }
}

double Model::loss(std::span<const double> w, std::span<const double> x, int label) const {
  check(w, x, label);
  return loss_impl(w, x, label);
}

double Model::grad(std::span<const double> w, std::span<const double> x, int label,
                   std::span<double> out) const {
  check(w, x, label);
  if (out.size() != num_params()) throw ValidationError("gradient buffer has the wrong size");
  return grad_impl(w, x, label, out);
}

void Model::init_impl(CounterStream& stream, std::span<double> w) const {
  for (auto& v : w) v = config_.init_scale * stream.normal();
}

ParamVector Model::initial_params(CounterStream& stream) const {
  ParamVector w(num_params());
  init_impl(stream, w);
  return w;
}

std::shared_ptr<const Model> make_model(const ModelConfig& config) {
  if (config.dim < 1) throw ValidationError("model dimension must be >= 1");
  if (config.classes < 1) throw ValidationError("model needs at least one output");
  if (!(config.weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
  switch (config.family) {
    case Family::quadratic: return std::make_shared<Quadratic>(config);
    case Family::logistic:
      if (config.classes < 2) throw ValidationError("logistic needs at least 2 classes");
      return std::make_shared<Logistic>(config);
    case Family::mlp:
      if (config.classes < 2) throw ValidationError("mlp needs at least 2 classes");
      return std::make_shared<Mlp>(config);
  }
  throw ValidationError("unknown model family");
}

double mean_loss(const Model& model, std::span<const double> w, const data::Dataset& d) {
  double total = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j) total += model.loss(w, d.features(j), d.label(j));
  return total / static_cast<double>(d.size());
}

ParamVector shard_gradient(const Model& model, std::span<const double> w, const data::Dataset& d) {
  ParamVector sum(model.num_params(), 0.0), g(model.num_params());
  for (std::size_t j = 0; j < d.size(); ++j) {
    model.grad(w, d.features(j), d.label(j), g);
    simd::axpy(1.0, g, sum);
  }
  simd::scale(1.0 / static_cast<double>(d.size()), sum);
  return sum;
}

namespace {

std::vector<ParamVector> probe_points(std::span<const double> anchor, std::size_t count,
                                      double radius, std::uint64_t seed) {
  std::vector<ParamVector> points;
  points.emplace_back(anchor.begin(), anchor.end());
  const std::size_t p = anchor.size();
  for (std::size_t k = 1; k < count; ++k) {
    CounterStream stream(seed, Purpose::constants, static_cast<std::uint32_t>(k));
    ParamVector dir(p);
    double norm = 0.0;
    for (auto& v : dir) {
      v = stream.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    const double r = radius * std::pow(stream.uniform(), 1.0 / static_cast<double>(p));
    ParamVector point(anchor.begin(), anchor.end());
    if (norm > 0.0) {
      for (std::size_t i = 0; i < p; ++i) point[i] += r * dir[i] / norm;
    }
    points.push_back(std::move(point));
  }
  return points;
}

}  // namespace

AssumptionConstants estimate_constants(const Model& model, const data::Federation& fed,
                                       std::span<const double> anchor,
                                       const EstimateOptions& options) {
  if (options.probe_count < 100) {
    throw ValidationError(fmt::format("probe_count must be >= 100, got {}", options.probe_count));
  }
  if (anchor.size() != model.num_params()) throw ValidationError("anchor has the wrong size");
  const std::size_t p = model.num_params();
  AssumptionConstants out;
  out.probes_used = options.probe_count;
  const double wd = model.config().weight_decay;

  if (auto factor = model.curvature_factor()) {
    for (std::size_t i = 0; i < fed.clients(); ++i) {
      const data::Dataset& d = fed.shard(i);
      Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(fed.dim),
                                                   static_cast<Eigen::Index>(fed.dim));
      for (std::size_t j = 0; j < d.size(); ++j) {
        const auto f = d.features(j);
        const Eigen::Map<const Eigen::VectorXd> x(f.data(), static_cast<Eigen::Index>(f.size()));
        gram.noalias() += x * x.transpose();
        out.L = std::max(out.L, *model.sample_smoothness(f));
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
      const double top = solver.eigenvalues().maxCoeff();
      out.L_shard = std::max(out.L_shard, *factor * top / static_cast<double>(d.size()) + wd);
    }
  }

  const auto points = probe_points(anchor, options.probe_count, options.radius, options.seed);
  ParamVector g(p), g2(p);

  // Samples for the loss-based maxima: every training sample plus extras.
  std::vector<std::pair<std::span<const double>, int>> samples;
  for (std::size_t i = 0; i < fed.clients(); ++i) {
    const data::Dataset& d = fed.shard(i);
    for (std::size_t j = 0; j < d.size(); ++j) samples.emplace_back(d.features(j), d.label(j));
  }
  if (options.extra_samples != nullptr) {
    const data::Dataset& d = *options.extra_samples;
    for (std::size_t j = 0; j < d.size(); ++j) samples.emplace_back(d.features(j), d.label(j));
  }

  for (std::size_t k = 0; k < points.size(); ++k) {
    const ParamVector& w = points[k];
    for (std::size_t i = 0; i < fed.clients(); ++i) {
      const data::Dataset& d = fed.shard(i);
      const ParamVector mean = shard_gradient(model, w, d);
      for (std::size_t j = 0; j < d.size(); ++j) {
        model.grad(w, d.features(j), d.label(j), g);
        out.sigma_l = std::max(out.sigma_l, std::sqrt(simd::squared_distance(g, mean)));
      }
    }
    const ParamVector& other = points[(k + 1) % points.size()];
    const double gap = std::sqrt(simd::squared_distance(w, other));
    for (const auto& [x, y] : samples) {
      const double f = model.grad(w, x, y, g);
      out.U = std::max(out.U, f);
      out.G = std::max(out.G, std::sqrt(simd::dot(g, g)));
      if (gap > 0.0) out.G = std::max(out.G, std::abs(f - model.loss(other, x, y)) / gap);
      if (!model.curvature_factor() && gap > 0.0) {
        model.grad(other, x, y, g2);
        out.L = std::max(out.L, std::sqrt(simd::squared_distance(g, g2)) / gap);
      }
    }
  }
  if (!model.curvature_factor()) out.L_shard = out.L;
  out.mu = out.L > 0.0 ? 1.0 / out.L : 0.0;
  return out;
}

}  // namespace fedstab::model
