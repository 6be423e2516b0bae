#pragma once

// GRU sequence encoder followed by a two-layer feed-forward classifier.
//
// Per layer, with input x_t and previous state h (h_0 = 0):
//   r = sigmoid(x_t Wi_r + bi_r + h Wh_r + bh_r)
//   z = sigmoid(x_t Wi_z + bi_z + h Wh_z + bh_z)
//   n = tanh(x_t Wi_n + bi_n + r * (h Wh_n + bh_n))
//   h' = (1 - z) * n + z * h
// The three gates are stored side by side in Wi (in x 3d) and Wh (d x 3d) in
// the order r, z, n. The classifier is tanh(z W1 + b1) W2 + b2.
//
// Batches are time-major: row t * B + b of a (T*B) x P input holds hour t of
// sequence b. Shorter sequences are zero-padded; padding rows only ever feed
// later padding rows, so they never affect valid outputs.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "icudg/autodiff.hpp"
#include "icudg/matrix.hpp"
#include "icudg/rng.hpp"

namespace icudg {

struct ModelConfig {
  std::size_t input_dim = 104;
  std::size_t hidden_dim = 64;
  std::size_t layers = 1;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Parameter {
  std::string name;
  Matrix value;
};

enum class Mode { kTrain, kEval };

class Model {
 public:
  Model() = default;
  /// Initialises weights uniform(-1/sqrt(d), 1/sqrt(d)) and biases 0.
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  // Parameter indices.
  std::size_t gru_input_weight(std::size_t layer) const { return 4 * layer; }
  std::size_t gru_input_bias(std::size_t layer) const { return 4 * layer + 1; }
  std::size_t gru_hidden_weight(std::size_t layer) const { return 4 * layer + 2; }
  std::size_t gru_hidden_bias(std::size_t layer) const { return 4 * layer + 3; }
  std::size_t classifier_hidden_weight() const { return 4 * config_.layers; }
  std::size_t classifier_hidden_bias() const { return 4 * config_.layers + 1; }
  std::size_t output_weight() const { return 4 * config_.layers + 2; }
  std::size_t output_bias() const { return 4 * config_.layers + 3; }

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);

  /// JSON header line (shapes, hyperparameters, `extra`) then float64 LE values.
  void save(std::ostream& out, const nlohmann::json& extra) const;
  void save(std::ostream& out) const;
  /// Returns the model; `extra` receives the stored metadata when non-null.
  static Model load(std::istream& in, nlohmann::json* extra = nullptr);

 private:
  ModelConfig config_;
  std::vector<Parameter> params_;
};

/// Parameters placed on a tape as gradient-receiving leaves.
struct BoundModel {
  std::vector<ad::Var> params;
};
BoundModel bind(ad::Tape& tape, const Model& model);

struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t steps = 0;
  Matrix inputs;  // (steps * batch) x input_dim, time-major
};

struct ForwardOutput {
  ad::Var z;       // encoder output for the selected rows (n x d)
  ad::Var hidden;  // classifier hidden activations (n x d)
  ad::Var logits;  // n x 1
};

/// Runs the encoder over all rows and the classifier over `rows` (indices into
/// the time-major layout); all rows when `rows` is empty. Dropout between GRU
/// layers needs `dropout_rng` in train mode.
ForwardOutput forward(ad::Tape& tape, const Model& model, const BoundModel& bound,
                      const SequenceBatch& batch, std::span<const std::size_t> rows, Mode mode,
                      CounterRng* dropout_rng = nullptr);

inline constexpr double kLogitClamp = 30.0;

/// sigmoid(clamp(logit, -30, 30)).
double predict_probability(double logit);

}  // namespace icudg
