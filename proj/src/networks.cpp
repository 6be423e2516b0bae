#include "icudg/networks.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>

#include "icudg/error.hpp"

namespace icudg {

namespace {

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double k, CounterRng& rng) {
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = rng.uniform(-k, k);
  return m;
}

void put_f64_le(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

double get_f64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw DataError("model checkpoint truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

Model::Model(const ModelConfig& config) : config_(config) {
  if (config.input_dim == 0 || config.hidden_dim == 0 || config.layers == 0) {
    throw ShapeError("model dimensions must be positive");
  }
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) {
    throw ShapeError("dropout must lie in [0, 1)");
  }
  const std::size_t d = config.hidden_dim;
  const double k = 1.0 / std::sqrt(static_cast<double>(d));
  CounterRng rng(CounterRng::derive(config.seed, {CounterRng::hash("model-init")}));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t in = l == 0 ? config.input_dim : d;
    const std::string p = "gru" + std::to_string(l) + ".";
    params_.push_back({p + "w_input", uniform_matrix(in, 3 * d, k, rng)});
    params_.push_back({p + "b_input", Matrix(1, 3 * d)});
    params_.push_back({p + "w_hidden", uniform_matrix(d, 3 * d, k, rng)});
    params_.push_back({p + "b_hidden", Matrix(1, 3 * d)});
  }
  params_.push_back({"classifier.w_hidden", uniform_matrix(d, d, k, rng)});
  params_.push_back({"classifier.b_hidden", Matrix(1, d)});
  params_.push_back({"classifier.w_out", uniform_matrix(d, 1, k, rng)});
  params_.push_back({"classifier.b_out", Matrix(1, 1)});
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<double> Model::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& p : params_) out.insert(out.end(), p.value.values().begin(), p.value.values().end());
  return out;
}

void Model::unflatten(std::span<const double> values) {
  if (values.size() != parameter_count()) throw ShapeError("flat parameter vector has wrong length");
  std::size_t off = 0;
  for (auto& p : params_) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p.value.size(), p.value.data());
    off += p.value.size();
  }
}

void Model::save(std::ostream& out) const { save(out, nlohmann::json::object()); }

void Model::save(std::ostream& out, const nlohmann::json& extra) const {
  nlohmann::json header;
  header["format"] = "icudg-model-v1";
  header["dtype"] = "float64";
  header["byte_order"] = "little";
  header["input_dim"] = config_.input_dim;
  header["hidden_dim"] = config_.hidden_dim;
  header["layers"] = config_.layers;
  header["dropout"] = config_.dropout;
  header["seed"] = config_.seed;
  auto& shapes = header["parameters"] = nlohmann::json::array();
  for (const auto& p : params_)
    shapes.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  header["extra"] = extra;
  out << header.dump() << '\n';
  for (const auto& p : params_)
    for (const double v : p.value.values()) put_f64_le(out, v);
}

Model Model::load(std::istream& in, nlohmann::json* extra) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty model checkpoint");
  Model model;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("format") != "icudg-model-v1") throw DataError("unsupported checkpoint format");
    ModelConfig c;
    c.input_dim = header.at("input_dim").get<std::size_t>();
    c.hidden_dim = header.at("hidden_dim").get<std::size_t>();
    c.layers = header.at("layers").get<std::size_t>();
    c.dropout = header.at("dropout").get<double>();
    c.seed = header.at("seed").get<std::uint64_t>();
    model = Model(c);
    const auto& shapes = header.at("parameters");
    if (shapes.size() != model.params_.size()) throw DataError("checkpoint parameter list mismatch");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const auto& p = model.params_[i];
      if (shapes[i].at("name") != p.name || shapes[i].at("rows") != p.value.rows() ||
          shapes[i].at("cols") != p.value.cols()) {
        throw DataError("checkpoint parameter '" + p.name + "' has an unexpected shape");
      }
    }
    if (extra) *extra = header.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
  for (auto& p : model.params_)
    for (auto& v : p.value.values()) v = get_f64_le(in);
  return model;
}

BoundModel bind(ad::Tape& tape, const Model& model) {
  BoundModel b;
  b.params.reserve(model.parameters().size());
  for (const auto& p : model.parameters()) b.params.push_back(tape.variable(p.value));
  return b;
}

ForwardOutput forward(ad::Tape& tape, const Model& model, const BoundModel& bound,
                      const SequenceBatch& batch, std::span<const std::size_t> rows, Mode mode,
                      CounterRng* dropout_rng) {
  const auto& cfg = model.config();
  const std::size_t B = batch.batch;
  const std::size_t T = batch.steps;
  const std::size_t d = cfg.hidden_dim;
  if (batch.inputs.rows() != B * T || batch.inputs.cols() != cfg.input_dim) {
    throw ShapeError("forward: input " + batch.inputs.shape_string() + " does not match batch " +
                     std::to_string(T) + "x" + std::to_string(B) + " with width " +
                     std::to_string(cfg.input_dim));
  }
  for (const double v : batch.inputs.values())
    if (!std::isfinite(v)) throw DataError("forward: non-finite input value");
  if (B == 0 || T == 0) throw ShapeError("forward: empty batch");

  ad::Var layer_input = tape.constant(batch.inputs);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const ad::Var wi = bound.params[model.gru_input_weight(l)];
    const ad::Var bi = bound.params[model.gru_input_bias(l)];
    const ad::Var wh = bound.params[model.gru_hidden_weight(l)];
    const ad::Var bh = bound.params[model.gru_hidden_bias(l)];
    const ad::Var xw = ad::matmul(layer_input, wi) + bi;  // (T*B) x 3d

    std::vector<ad::Var> states;
    states.reserve(T);
    ad::Var h;
    for (std::size_t t = 0; t < T; ++t) {
      const ad::Var xt = ad::slice_rows(xw, t * B, B);
      ad::Var gates_rz, cand;
      if (t == 0) {
        // h_0 = 0, so the recurrent term reduces to its bias.
        gates_rz = ad::sigmoid(ad::slice_cols(xt, 0, 2 * d) + ad::slice_cols(bh, 0, 2 * d));
        const ad::Var r = ad::slice_cols(gates_rz, 0, d);
        cand = ad::tanh(ad::slice_cols(xt, 2 * d, d) + r * ad::slice_cols(bh, 2 * d, d));
        const ad::Var z = ad::slice_cols(gates_rz, d, d);
        h = cand - z * cand;
      } else {
        const ad::Var hw = ad::matmul(h, wh) + bh;
        gates_rz = ad::sigmoid(ad::slice_cols(xt, 0, 2 * d) + ad::slice_cols(hw, 0, 2 * d));
        const ad::Var r = ad::slice_cols(gates_rz, 0, d);
        const ad::Var z = ad::slice_cols(gates_rz, d, d);
        cand = ad::tanh(ad::slice_cols(xt, 2 * d, d) + r * ad::slice_cols(hw, 2 * d, d));
        h = cand + z * (h - cand);
      }
      states.push_back(h);
    }
    layer_input = ad::concat_rows(states);
    const bool last = l + 1 == cfg.layers;
    if (!last && mode == Mode::kTrain && cfg.dropout > 0.0) {
      if (!dropout_rng) throw Error("forward: train-mode dropout needs a random stream");
      Matrix mask(layer_input.rows(), layer_input.cols());
      const double keep = 1.0 - cfg.dropout;
      for (auto& m : mask.values()) m = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
      layer_input = layer_input * tape.constant(std::move(mask));
    }
  }

  ForwardOutput out;
  out.z = rows.empty() ? layer_input
                       : ad::gather_rows(layer_input, std::vector<std::size_t>(rows.begin(), rows.end()));
  out.hidden = ad::tanh(ad::matmul(out.z, bound.params[model.classifier_hidden_weight()]) +
                        bound.params[model.classifier_hidden_bias()]);
  out.logits = ad::matmul(out.hidden, bound.params[model.output_weight()]) +
               bound.params[model.output_bias()];
  return out;
}

double predict_probability(double logit) {
  const double l = std::clamp(logit, -kLogitClamp, kLogitClamp);
  return 1.0 / (1.0 + std::exp(-l));
}

}  // namespace icudg
