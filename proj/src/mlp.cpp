#include "pdrl/mlp.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "pdrl/error.hpp"
#include "pdrl/rng.hpp"

namespace pdrl::mlp {

namespace {

struct ForwardTrace {
  std::vector<Matrix> activations;  // activations[0] = inputs, then post-ReLU hidden outputs
  Matrix last_pre;                  // pre-activation of the output layer
  Matrix output;
};

ForwardTrace forward_trace(const MlpModel& model, const Matrix& inputs) {
  ForwardTrace trace;
  trace.activations.reserve(model.layers.size());
  trace.activations.push_back(inputs);
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Matrix z = trace.activations.back() * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    trace.activations.push_back(z.cwiseMax(0.0));
  }
  const auto& out = model.layers.back();
  trace.last_pre = trace.activations.back() * out.weight.transpose();
  trace.last_pre.rowwise() += out.bias.transpose();
  trace.output = model.layout.output_softplus ? Matrix(trace.last_pre.unaryExpr(&softplus)) : trace.last_pre;
  return trace;
}

std::vector<std::size_t> all_groups(const GroupedSet& set) {
  std::vector<std::size_t> idx(set.groups());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

/// Gathers the atoms of `groups` into one matrix; local_offsets index into it.
Matrix gather(const GroupedSet& set, std::span<const std::size_t> groups,
              std::vector<std::size_t>& local_offsets) {
  std::size_t rows = 0;
  local_offsets.assign(1, 0);
  for (auto g : groups) {
    rows += set.offsets[g + 1] - set.offsets[g];
    local_offsets.push_back(rows);
  }
  Matrix x(static_cast<Eigen::Index>(rows), set.inputs.cols());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto g = groups[i];
    const auto start = static_cast<Eigen::Index>(set.offsets[g]);
    const auto len = static_cast<Eigen::Index>(set.offsets[g + 1] - set.offsets[g]);
    x.middleRows(static_cast<Eigen::Index>(local_offsets[i]), len) = set.inputs.middleRows(start, len);
  }
  return x;
}

Matrix group_sums(const Matrix& per_atom, const std::vector<std::size_t>& local_offsets) {
  const auto groups = static_cast<Eigen::Index>(local_offsets.size() - 1);
  Matrix sums = Matrix::Zero(groups, per_atom.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (auto r = local_offsets[g]; r < local_offsets[g + 1]; ++r)
      sums.row(g) += per_atom.row(static_cast<Eigen::Index>(r));
  }
  return sums;
}

Matrix gather_targets(const GroupedSet& set, std::span<const std::size_t> groups) {
  Matrix y(static_cast<Eigen::Index>(groups.size()), set.targets.cols());
  for (std::size_t i = 0; i < groups.size(); ++i)
    y.row(static_cast<Eigen::Index>(i)) = set.targets.row(static_cast<Eigen::Index>(groups[i]));
  return y;
}

Gradients zeros_like_layers(const std::vector<DenseLayer>& layers) {
  Gradients out;
  out.reserve(layers.size());
  for (const auto& l : layers)
    out.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  return out;
}

nlohmann::ordered_json vector_json(const Vector& v) {
  auto arr = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Vector vector_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ValidationError(std::string(what) + " contains a non-number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

}  // namespace

void MlpLayout::validate() const {
  if (input_dim == 0) throw ValidationError("input_dim must be positive");
  if (output_dim == 0) throw ValidationError("output_dim must be positive");
  if (hidden_dims.empty() || hidden_dims.size() > 2)
    throw ValidationError("hidden layer count must be 1 or 2");
  for (auto h : hidden_dims)
    if (h == 0) throw ValidationError("hidden widths must be positive");
}

void GroupedSet::validate(std::size_t input_dim, std::size_t output_dim) const {
  if (groups() == 0) throw ValidationError("training set is empty");
  if (static_cast<std::size_t>(inputs.cols()) != input_dim)
    throw ValidationError("input width does not match the network");
  if (static_cast<std::size_t>(targets.cols()) != output_dim)
    throw ValidationError("target width does not match the network output");
  if (static_cast<std::size_t>(targets.rows()) != groups())
    throw ValidationError("one target row per group is required");
  if (offsets.front() != 0 || offsets.back() != static_cast<std::size_t>(inputs.rows()))
    throw ValidationError("group offsets do not cover the inputs");
  for (std::size_t g = 0; g < groups(); ++g)
    if (offsets[g + 1] <= offsets[g]) throw ValidationError("every group needs at least one row");
}

GroupedSet GroupedSet::per_sample(Matrix inputs, Matrix targets) {
  GroupedSet set;
  set.offsets.resize(static_cast<std::size_t>(inputs.rows()) + 1);
  std::iota(set.offsets.begin(), set.offsets.end(), std::size_t{0});
  set.inputs = std::move(inputs);
  set.targets = std::move(targets);
  return set;
}

void TrainSchedule::validate() const {
  if (!(initial_lr > 0.0)) throw ValidationError("initial learning rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay < 1.0)) throw ValidationError("lr_decay must lie in (0, 1)");
  if (!(min_lr < initial_lr)) throw ValidationError("min_lr must be below the initial learning rate");
  if (patience == 0) throw ValidationError("patience must be positive");
  if (max_epochs == 0) throw ValidationError("max_epochs must be positive");
  if (batch_size == 0) throw ValidationError("batch size must be positive");
}

AdamState AdamState::zeros_like(const MlpModel& model) {
  return {zeros_like_layers(model.layers), zeros_like_layers(model.layers), 0};
}

// Floored at the smallest normal double so the output stays strictly positive
// where exp(-|z|) underflows.
double softplus(double z) {
  return std::max(std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))), std::numeric_limits<double>::min());
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

MlpModel mlp_init(const MlpLayout& layout, std::uint64_t seed) {
  layout.validate();
  MlpModel model;
  model.layout = layout;
  model.scaler = ScalerStats::identity(layout.input_dim);

  std::vector<std::size_t> dims{layout.input_dim};
  dims.insert(dims.end(), layout.hidden_dims.begin(), layout.hidden_dims.end());
  dims.push_back(layout.output_dim);

  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto fan_in = dims[l];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    DenseLayer layer{Matrix(static_cast<Eigen::Index>(dims[l + 1]), static_cast<Eigen::Index>(fan_in)),
                     Vector::Zero(static_cast<Eigen::Index>(dims[l + 1]))};
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

Vector mlp_forward(const MlpModel& model, const Eigen::Ref<const Vector>& x) {
  if (static_cast<std::size_t>(x.size()) != model.layout.input_dim)
    throw ValidationError("input length " + std::to_string(x.size()) + " does not match network input " +
                          std::to_string(model.layout.input_dim));
  Matrix row = x.transpose();
  return forward_trace(model, row).output.row(0).transpose();
}

Matrix mlp_forward_batch(const MlpModel& model, const Matrix& inputs) {
  if (static_cast<std::size_t>(inputs.cols()) != model.layout.input_dim)
    throw ValidationError("input width does not match network input");
  return forward_trace(model, inputs).output;
}

double mlp_loss(const MlpModel& model, const GroupedSet& set, std::span<const std::size_t> groups) {
  std::vector<std::size_t> every;
  if (groups.empty()) {
    every = all_groups(set);
    groups = every;
  }
  std::vector<std::size_t> local_offsets;
  const Matrix x = gather(set, groups, local_offsets);
  const Matrix residual = group_sums(forward_trace(model, x).output, local_offsets) - gather_targets(set, groups);
  return residual.squaredNorm() / static_cast<double>(groups.size());
}

LossAndGradients mlp_gradient(const MlpModel& model, const GroupedSet& set,
                              std::span<const std::size_t> groups) {
  if (groups.empty()) throw ValidationError("gradient batch is empty");
  std::vector<std::size_t> local_offsets;
  const Matrix x = gather(set, groups, local_offsets);
  const ForwardTrace trace = forward_trace(model, x);
  const Matrix residual = group_sums(trace.output, local_offsets) - gather_targets(set, groups);
  const double scale = 2.0 / static_cast<double>(groups.size());

  LossAndGradients result;
  result.loss = residual.squaredNorm() / static_cast<double>(groups.size());

  // d loss / d output: every atom of a group receives its group's residual.
  Matrix delta(trace.output.rows(), trace.output.cols());
  for (std::size_t g = 0; g + 1 < local_offsets.size(); ++g)
    for (auto r = local_offsets[g]; r < local_offsets[g + 1]; ++r)
      delta.row(static_cast<Eigen::Index>(r)) = scale * residual.row(static_cast<Eigen::Index>(g));
  if (model.layout.output_softplus) delta = delta.cwiseProduct(trace.last_pre.unaryExpr(&sigmoid));

  result.gradients.resize(model.layers.size());
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const Matrix& input = trace.activations[l];
    result.gradients[l].weight = delta.transpose() * input;
    result.gradients[l].bias = delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix upstream = delta * model.layers[l].weight;
    // ReLU derivative: active where the post-activation is positive.
    delta = upstream.cwiseProduct((input.array() > 0.0).cast<double>().matrix());
  }
  return result;
}

void optimizer_step(MlpModel& model, AdamState& state, const Gradients& grads, double lr) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(kAdamBeta1, t);
  const double correction2 = 1.0 - std::pow(kAdamBeta2, t);

  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
    const auto m_hat = (m.array() / correction1);
    const auto v_hat = (v.array() / correction2);
    param.array() -= lr * m_hat / (v_hat.sqrt() + kAdamEpsilon);
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    update(model.layers[l].weight, state.first_moment[l].weight, state.second_moment[l].weight, grads[l].weight);
    update(model.layers[l].bias, state.first_moment[l].bias, state.second_moment[l].bias, grads[l].bias);
  }
}

TrainResult train_loop(const MlpModel& initial, const GroupedSet& train, const GroupedSet& val,
                       const TrainSchedule& schedule, std::uint64_t seed) {
  schedule.validate();
  train.validate(initial.layout.input_dim, initial.layout.output_dim);
  val.validate(initial.layout.input_dim, initial.layout.output_dim);

  TrainResult result;
  MlpModel model = initial;
  AdamState adam = AdamState::zeros_like(model);
  Rng rng(seed);
  std::vector<std::size_t> order = all_groups(train);

  double lr = schedule.initial_lr;
  result.model = model;
  result.best_val_mse = mlp_loss(model, val);
  result.history.push_back({0, mlp_loss(model, train), result.best_val_mse, lr});
  std::size_t stale_epochs = 0;

  for (std::size_t epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
      const auto len = std::min(schedule.batch_size, order.size() - start);
      const auto step = mlp_gradient(model, train, std::span<const std::size_t>(order).subspan(start, len));
      optimizer_step(model, adam, step.gradients, lr);
    }

    const double val_mse = mlp_loss(model, val);
    result.history.push_back({epoch, mlp_loss(model, train), val_mse, lr});

    if (val_mse < result.best_val_mse - kImprovementThreshold) {
      result.best_val_mse = val_mse;
      result.best_epoch = epoch;
      result.model = model;
      stale_epochs = 0;
    } else if (++stale_epochs >= schedule.patience) {
      lr *= schedule.lr_decay;
      stale_epochs = 0;
      if (lr < schedule.min_lr) break;
    }
  }
  return result;
}

std::vector<double> flatten_parameters(const std::vector<DenseLayer>& layers) {
  std::vector<double> flat;
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.weight.data(), l.weight.data() + l.weight.size());
    flat.insert(flat.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return flat;
}

void assign_parameters(std::vector<DenseLayer>& layers, std::span<const double> flat) {
  std::size_t pos = 0;
  for (auto& l : layers) {
    const auto nw = static_cast<std::size_t>(l.weight.size());
    const auto nb = static_cast<std::size_t>(l.bias.size());
    if (pos + nw + nb > flat.size()) throw ValidationError("parameter vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), nw, l.weight.data());
    pos += nw;
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), nb, l.bias.data());
    pos += nb;
  }
  if (pos != flat.size()) throw ValidationError("parameter vector too long");
}

nlohmann::ordered_json mlp_to_json(const MlpModel& model) {
  nlohmann::ordered_json j;
  j["layout"] = {{"input_dim", model.layout.input_dim},
                 {"hidden_dims", model.layout.hidden_dims},
                 {"output_dim", model.layout.output_dim},
                 {"hidden_activation", "relu"},
                 {"output_softplus", model.layout.output_softplus}};
  j["optimizer"] = {{"name", "adam"}, {"beta1", kAdamBeta1}, {"beta2", kAdamBeta2}, {"epsilon", kAdamEpsilon}};
  j["scaler"] = {{"mean", vector_json(model.scaler.mean)}, {"std", vector_json(model.scaler.std)}};
  auto layers = nlohmann::ordered_json::array();
  for (const auto& l : model.layers) {
    auto w = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) w.push_back(l.weight.data()[i]);
    layers.push_back({{"shape", {l.weight.rows(), l.weight.cols()}}, {"weight", std::move(w)},
                      {"bias", vector_json(l.bias)}});
  }
  j["layers"] = std::move(layers);
  return j;
}

MlpModel mlp_from_json(const nlohmann::json& j) {
  try {
    MlpModel model;
    const auto& lj = j.at("layout");
    model.layout.input_dim = lj.at("input_dim").get<std::size_t>();
    model.layout.hidden_dims = lj.at("hidden_dims").get<std::vector<std::size_t>>();
    model.layout.output_dim = lj.at("output_dim").get<std::size_t>();
    model.layout.output_softplus = lj.at("output_softplus").get<bool>();
    if (lj.value("hidden_activation", std::string("relu")) != "relu")
      throw ValidationError("only relu hidden activation is supported");
    model.layout.validate();

    model.scaler.mean = vector_from_json(j.at("scaler").at("mean"), "scaler mean");
    model.scaler.std = vector_from_json(j.at("scaler").at("std"), "scaler std");
    if (model.scaler.dim() != model.layout.input_dim || model.scaler.std.size() != model.scaler.mean.size())
      throw ValidationError("scaler dimension does not match input_dim");
    if ((model.scaler.std.array() <= 0.0).any()) throw ValidationError("scaler std must be positive");

    std::vector<std::size_t> dims{model.layout.input_dim};
    dims.insert(dims.end(), model.layout.hidden_dims.begin(), model.layout.hidden_dims.end());
    dims.push_back(model.layout.output_dim);
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.size() != dims.size() - 1)
      throw ValidationError("layer count does not match layout");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto rows = static_cast<Eigen::Index>(dims[l + 1]);
      const auto cols = static_cast<Eigen::Index>(dims[l]);
      const Vector w = vector_from_json(layers[l].at("weight"), "weight");
      const Vector b = vector_from_json(layers[l].at("bias"), "bias");
      if (w.size() != rows * cols || b.size() != rows) throw ValidationError("layer shape does not match layout");
      DenseLayer layer{Matrix(rows, cols), b};
      std::copy_n(w.data(), w.size(), layer.weight.data());
      if (!layer.weight.allFinite() || !layer.bias.allFinite())
        throw ValidationError("non-finite parameter");
      model.layers.push_back(std::move(layer));
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model: ") + e.what());
  }
}

}  // namespace pdrl::mlp
