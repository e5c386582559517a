#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dtsep/dataset.hpp"
#include "dtsep/error.hpp"

namespace dtsep {

// Hidden layers: logistic sigmoid with a trainable additive bias per unit.
// Output layer: logistic sigmoid with a fixed zero bias.
enum class Activation : std::uint8_t { BiasedSigmoid = 0, SigmoidZeroBias = 1 };

struct Layer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out; identically zero for SigmoidZeroBias
  Activation activation = Activation::BiasedSigmoid;

  bool trainable_bias() const noexcept { return activation == Activation::BiasedSigmoid; }
};

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

class Mlp {
 public:
  Mlp() = default;

  /// Builds a network with layer sizes `geometry` (input first). Weights are
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a generator seeded with `seed`.
  static Mlp init(std::span<const std::size_t> geometry, std::uint64_t seed) {
    if (geometry.size() < 2) {
      throw Error(ErrorKind::InvalidArgument, "network geometry needs at least 2 layer sizes");
    }
    for (std::size_t s : geometry) {
      if (s == 0) throw Error(ErrorKind::InvalidArgument, "network geometry has a zero-size layer");
    }
    Mlp m;
    m.seed_ = seed;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < geometry.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(geometry[l]);
      const auto out = static_cast<Eigen::Index>(geometry[l + 1]);
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      Layer layer;
      layer.weights.resize(out, in);
      // Row-major draw order so the stream does not depend on Eigen's storage.
      for (Eigen::Index r = 0; r < out; ++r)
        for (Eigen::Index c = 0; c < in; ++c) layer.weights(r, c) = dist(rng);
      layer.bias = Eigen::VectorXd::Zero(out);
      layer.activation = l + 2 == geometry.size() ? Activation::SigmoidZeroBias
                                                  : Activation::BiasedSigmoid;
      m.layers_.push_back(std::move(layer));
    }
    return m;
  }

  static Mlp from_layers(std::vector<Layer> layers, std::uint64_t seed = 0) {
    if (layers.empty()) throw Error(ErrorKind::InvalidArgument, "network has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      if (L.bias.size() != L.weights.rows()) {
        throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " bias length mismatch");
      }
      if (l > 0 && L.weights.cols() != layers[l - 1].weights.rows()) {
        throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " does not chain");
      }
    }
    Mlp m;
    m.layers_ = std::move(layers);
    m.seed_ = seed;
    return m;
  }

  std::vector<std::size_t> geometry() const {
    std::vector<std::size_t> g;
    if (layers_.empty()) return g;
    g.push_back(static_cast<std::size_t>(layers_.front().weights.cols()));
    for (const auto& l : layers_) g.push_back(static_cast<std::size_t>(l.weights.rows()));
    return g;
  }

  std::size_t input_size() const { return layers_.empty() ? 0 : layers_.front().weights.cols(); }
  std::size_t output_size() const { return layers_.empty() ? 0 : layers_.back().weights.rows(); }

  /// Weights plus trainable biases.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
      n += static_cast<std::size_t>(l.weights.size());
      if (l.trainable_bias()) n += static_cast<std::size_t>(l.bias.size());
    }
    return n;
  }

  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  Eigen::VectorXd forward(const Eigen::Ref<const Eigen::VectorXd>& input) const {
    check_input(input);
    Eigen::VectorXd x = input;
    Eigen::VectorXd z;
    for (const auto& l : layers_) {
      z.noalias() = l.weights * x;
      z += l.bias;
      x = z.unaryExpr([](double a) { return sigmoid(a); });
    }
    return x;
  }

  /// Forward pass keeping every layer's activation (index 0 is the input).
  void forward_trace(const Eigen::Ref<const Eigen::VectorXd>& input,
                     std::vector<Eigen::VectorXd>& acts) const {
    check_input(input);
    acts.resize(layers_.size() + 1);
    acts[0] = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      auto& z = acts[i + 1];
      z.noalias() = l.weights * acts[i];
      z += l.bias;
      z = z.unaryExpr([](double a) { return sigmoid(a); });
    }
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& x = a.layers_[i];
      const auto& y = b.layers_[i];
      if (x.activation != y.activation || x.weights.rows() != y.weights.rows() ||
          x.weights.cols() != y.weights.cols() || x.weights != y.weights || x.bias != y.bias)
        return false;
    }
    return true;
  }

 private:
  void check_input(const Eigen::Ref<const Eigen::VectorXd>& input) const {
    if (layers_.empty()) throw Error(ErrorKind::InvalidArgument, "network has no layers");
    if (static_cast<std::size_t>(input.size()) != input_size()) {
      throw Error(ErrorKind::ShapeMismatch, "network input has length " +
                                                std::to_string(input.size()) + ", expected " +
                                                std::to_string(input_size()));
    }
  }

  std::vector<Layer> layers_;
  std::uint64_t seed_ = 0;
};

/// L = 1/2 * sum (output - target)^2
inline double example_loss(const Mlp& model, const Eigen::Ref<const Eigen::VectorXd>& input,
                           const Eigen::Ref<const Eigen::VectorXd>& target) {
  return 0.5 * (model.forward(input) - target).squaredNorm();
}

struct LayerGradient {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;  // zero for layers without a trainable bias
};

/// Backpropagated gradient of example_loss with respect to every parameter.
inline std::vector<LayerGradient> gradients(const Mlp& model,
                                            const Eigen::Ref<const Eigen::VectorXd>& input,
                                            const Eigen::Ref<const Eigen::VectorXd>& target) {
  std::vector<Eigen::VectorXd> acts;
  model.forward_trace(input, acts);
  const auto& layers = model.layers();
  std::vector<LayerGradient> grads(layers.size());
  Eigen::VectorXd delta = (acts.back() - target).cwiseProduct(
      acts.back().cwiseProduct(Eigen::VectorXd::Ones(acts.back().size()) - acts.back()));
  for (std::size_t i = layers.size(); i-- > 0;) {
    grads[i].weights = delta * acts[i].transpose();
    grads[i].bias = layers[i].trainable_bias() ? delta : Eigen::VectorXd::Zero(delta.size());
    if (i > 0) {
      const auto& a = acts[i];
      delta = (layers[i].weights.transpose() * delta).cwiseProduct(a.cwiseProduct((1.0 - a.array()).matrix()));
    }
  }
  return grads;
}

struct TrainConfig {
  double learning_rate = 0.05;
  int epochs = 500;
  std::uint64_t seed = 1;
  bool shuffle = true;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw Error(ErrorKind::InvalidArgument, "learning rate must be finite and non-negative");
    }
    if (epochs < 1) {
      throw Error(ErrorKind::InvalidArgument, "epochs must be >= 1, got " + std::to_string(epochs));
    }
  }
};

struct EpochReport {
  int epoch = 0;           // 1-based
  double mean_loss = 0.0;  // mean per-example loss over the sweep, before each update
};

using EpochCallback = std::function<void(const EpochReport&, const Mlp&)>;

struct TrainResult {
  std::vector<double> loss_trace;  // one entry per epoch
};

/// Per-example SGD on 1/2 squared error. One epoch is a full sweep of `data`,
/// reshuffled each epoch from a generator seeded with config.seed.
inline TrainResult train_sgd(Mlp& model, std::span<const TrainingPair> data,
                             const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  config.validate();
  if (data.empty()) throw Error(ErrorKind::InvalidArgument, "training set is empty");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (static_cast<std::size_t>(data[i].input.size()) != model.input_size() ||
        static_cast<std::size_t>(data[i].target.size()) != model.output_size()) {
      throw Error(ErrorKind::ShapeMismatch,
                  "training pair " + std::to_string(i) + " has sizes " +
                      std::to_string(data[i].input.size()) + "/" +
                      std::to_string(data[i].target.size()) + ", network expects " +
                      std::to_string(model.input_size()) + "/" +
                      std::to_string(model.output_size()));
    }
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto& layers = model.layers();
  const double lr = config.learning_rate;
  std::vector<Eigen::VectorXd> acts;
  Eigen::VectorXd delta, next_delta;
  TrainResult result;
  result.loss_trace.reserve(static_cast<std::size_t>(config.epochs));

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
      }
    }
    double total = 0.0;
    for (std::size_t idx : order) {
      const auto& pair = data[idx];
      model.forward_trace(pair.input, acts);
      const auto& y = acts.back();
      delta = y - pair.target;
      const double loss = 0.5 * delta.squaredNorm();
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::NumericalFailure,
                    "non-finite loss at epoch " + std::to_string(epoch) + ", example " +
                        std::to_string(idx) + "; try a smaller learning rate");
      }
      total += loss;
      delta.array() *= y.array() * (1.0 - y.array());
      for (std::size_t i = layers.size(); i-- > 0;) {
        auto& layer = layers[i];
        if (i > 0) {
          const auto& a = acts[i];
          next_delta.noalias() = layer.weights.transpose() * delta;
          next_delta.array() *= a.array() * (1.0 - a.array());
        }
        if (lr != 0.0) {
          layer.weights.noalias() -= (lr * delta) * acts[i].transpose();
          if (layer.trainable_bias()) layer.bias.noalias() -= lr * delta;
        }
        if (i > 0) delta.swap(next_delta);
      }
    }
    const double mean = total / static_cast<double>(data.size());
    result.loss_trace.push_back(mean);
    if (on_epoch) on_epoch(EpochReport{epoch, mean}, model);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Model container
//
//   magic     8 bytes  "DTSEPMLP"
//   version   u32      1
//   n_sizes   u32      number of layer sizes (layers + 1)
//   sizes     u64 x n_sizes
//   seed      u64
//   per layer:
//     activation u8 (0 biased-sigmoid, 1 sigmoid-zero-bias)
//     weights    f64 x (out * in), row-major
//     bias       f64 x out, present only for biased-sigmoid layers
//   n_meta    u32
//   per entry: key length u16, key bytes, value f64
//
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

constexpr char kModelMagic[8] = {'D', 'T', 'S', 'E', 'P', 'M', 'L', 'P'};
constexpr std::uint32_t kModelFormatVersion = 1;

using ModelMetadata = std::map<std::string, double>;

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                  std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
  auto bits = std::bit_cast<U>(value);
  char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(buf, sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                  std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw Error(ErrorKind::UnsupportedFormat, "model file is truncated");
  }
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(buf[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

inline void write_model(std::ostream& out, const Mlp& model, const ModelMetadata& meta = {}) {
  using detail::put_le;
  out.write(kModelMagic, sizeof(kModelMagic));
  put_le<std::uint32_t>(out, kModelFormatVersion);
  const auto geometry = model.geometry();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(geometry.size()));
  for (std::size_t s : geometry) put_le<std::uint64_t>(out, s);
  put_le<std::uint64_t>(out, model.seed());
  for (const auto& layer : model.layers()) {
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(layer.activation));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) put_le<double>(out, layer.weights(r, c));
    if (layer.trainable_bias())
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) put_le<double>(out, layer.bias(r));
  }
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [key, value] : meta) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(key.size()));
    out.write(key.data(), static_cast<std::streamsize>(key.size()));
    put_le<double>(out, value);
  }
}

struct LoadedModel {
  Mlp model;
  ModelMetadata metadata;
};

inline LoadedModel read_model(std::istream& in) {
  using detail::get_le;
  char magic[sizeof(kModelMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) {
    throw Error(ErrorKind::UnsupportedFormat, "not a dtsep model file (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kModelFormatVersion) {
    throw Error(ErrorKind::UnsupportedFormat, "unsupported model format version " + std::to_string(version));
  }
  const auto n_sizes = get_le<std::uint32_t>(in);
  if (n_sizes < 2 || n_sizes > 64) throw Error(ErrorKind::UnsupportedFormat, "implausible layer count in model file");
  std::vector<std::size_t> sizes(n_sizes);
  for (auto& s : sizes) {
    s = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    if (s == 0 || s > (1u << 24)) throw Error(ErrorKind::UnsupportedFormat, "implausible layer size in model file");
  }
  const auto seed = get_le<std::uint64_t>(in);
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Layer layer;
    const auto act = get_le<std::uint8_t>(in);
    if (act > 1) throw Error(ErrorKind::UnsupportedFormat, "unknown activation code in model file");
    layer.activation = static_cast<Activation>(act);
    const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
    const auto inp = static_cast<Eigen::Index>(sizes[l]);
    layer.weights.resize(out, inp);
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < inp; ++c) layer.weights(r, c) = get_le<double>(in);
    layer.bias = Eigen::VectorXd::Zero(out);
    if (layer.trainable_bias())
      for (Eigen::Index r = 0; r < out; ++r) layer.bias(r) = get_le<double>(in);
    layers.push_back(std::move(layer));
  }
  LoadedModel loaded{Mlp::from_layers(std::move(layers), seed), {}};
  const auto n_meta = get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    const auto len = get_le<std::uint16_t>(in);
    std::string key(len, '\0');
    if (!in.read(key.data(), len)) throw Error(ErrorKind::UnsupportedFormat, "model file is truncated");
    loaded.metadata[key] = get_le<double>(in);
  }
  return loaded;
}

inline void save_model(const std::filesystem::path& path, const Mlp& model, const ModelMetadata& meta = {}) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open model file for writing: " + path.string());
  write_model(out, model, meta);
  if (!out) throw Error(ErrorKind::Io, "failed writing model file: " + path.string());
}

inline LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::FileNotFound, "cannot open model file: " + path.string());
  return read_model(in);
}

}  // namespace dtsep
