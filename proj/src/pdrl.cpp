#include "pdrl/pdrl.hpp"

#include <cmath>

#include "pdrl/error.hpp"
#include "pdrl/rng.hpp"

namespace pdrl::heads {

std::string_view to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::kEnergyNorm: return "e-norm";
    case HeadKind::kEnergyDiff: return "e-diff";
    case HeadKind::kForceNorm: return "f-norm";
    case HeadKind::kForceDiff: return "f-diff";
  }
  return "unknown";
}

HeadKind parse_head_kind(std::string_view name) {
  if (name == "e-norm") return HeadKind::kEnergyNorm;
  if (name == "e-diff") return HeadKind::kEnergyDiff;
  if (name == "f-norm") return HeadKind::kForceNorm;
  if (name == "f-diff") return HeadKind::kForceDiff;
  throw ValidationError("unknown head kind '" + std::string(name) + "'");
}

bool is_energy(HeadKind kind) { return kind == HeadKind::kEnergyNorm || kind == HeadKind::kEnergyDiff; }

bool uses_softplus(HeadKind kind) { return kind == HeadKind::kEnergyNorm || kind == HeadKind::kForceNorm; }

std::size_t output_dim(HeadKind kind) { return kind == HeadKind::kForceDiff ? 3 : 1; }

std::size_t hidden_depth(HeadKind kind) { return kind == HeadKind::kForceDiff ? 2 : 1; }

mlp::MlpLayout layout_for(HeadKind kind, std::size_t d_desc, std::size_t hidden_width) {
  mlp::MlpLayout layout;
  layout.input_dim = d_desc;
  layout.hidden_dims.assign(hidden_depth(kind), hidden_width);
  layout.output_dim = output_dim(kind);
  layout.output_softplus = uses_softplus(kind);
  return layout;
}

mlp::GroupedSet build_targets(const ResidualDataset& residuals, HeadKind kind) {
  if (residuals.records.empty()) throw ValidationError("residual dataset is empty");
  mlp::GroupedSet set;
  set.inputs = residuals.stacked_descriptors();
  const auto atoms = set.inputs.rows();

  if (is_energy(kind)) {
    set.targets.resize(static_cast<Eigen::Index>(residuals.records.size()), 1);
    set.offsets.assign(1, 0);
    for (std::size_t i = 0; i < residuals.records.size(); ++i) {
      const auto& r = residuals.records[i];
      set.targets(static_cast<Eigen::Index>(i), 0) =
          kind == HeadKind::kEnergyNorm ? std::abs(r.delta_e) : r.delta_e;
      set.offsets.push_back(set.offsets.back() + static_cast<std::size_t>(r.descriptors.rows()));
    }
    return set;
  }

  set.targets.resize(atoms, static_cast<Eigen::Index>(output_dim(kind)));
  Eigen::Index row = 0;
  for (const auto& r : residuals.records) {
    for (Eigen::Index j = 0; j < r.delta_f.rows(); ++j, ++row) {
      if (kind == HeadKind::kForceNorm)
        set.targets(row, 0) = r.delta_f.row(j).norm();
      else
        set.targets.row(row) = r.delta_f.row(j);
    }
  }
  set.offsets.resize(static_cast<std::size_t>(atoms) + 1);
  for (std::size_t i = 0; i < set.offsets.size(); ++i) set.offsets[i] = i;
  return set;
}

PdrlTrainResult train_pdrl(const ResidualDataset& train, const ResidualDataset& val, HeadKind kind,
                           const PdrlOptions& options, std::uint64_t seed) {
  if (train.records.empty() || val.records.empty()) throw ValidationError("training and validation splits must be nonempty");
  if (train.d_desc != val.d_desc) throw ValidationError("training and validation descriptor widths differ");

  const auto layout = layout_for(kind, train.d_desc, options.hidden_width);
  std::uint64_t sm = seed;
  mlp::MlpModel net = mlp::mlp_init(layout, splitmix64(sm));
  net.scaler = options.standardize ? fit_scaler(train) : ScalerStats::identity(train.d_desc);

  mlp::GroupedSet train_set = build_targets(train, kind);
  mlp::GroupedSet val_set = build_targets(val, kind);
  train_set.inputs = standardize_apply(net.scaler, train_set.inputs);
  val_set.inputs = standardize_apply(net.scaler, val_set.inputs);

  auto trained = mlp::train_loop(net, train_set, val_set, options.schedule, splitmix64(sm));
  return {{kind, std::move(trained.model)}, std::move(trained.history)};
}

void check_descriptor_width(const mlp::MlpModel& net, const StructureRecord& record) {
  if (record.d_desc() != net.layout.input_dim)
    throw ValidationError("structure '" + record.id + "' has descriptor width " + std::to_string(record.d_desc()) +
                          ", model expects " + std::to_string(net.layout.input_dim));
}

namespace {

// Atom by atom, so each output is independent of the other rows of the structure.
Matrix per_atom_outputs(const PdrlModel& model, const StructureRecord& record) {
  check_descriptor_width(model.net, record);
  const Matrix x = standardize_apply(model.net.scaler, record.descriptors);
  Matrix out(x.rows(), static_cast<Eigen::Index>(model.net.layout.output_dim));
  for (Eigen::Index j = 0; j < x.rows(); ++j) out.row(j) = mlp::mlp_forward(model.net, x.row(j).transpose()).transpose();
  return out;
}

}  // namespace

EnergyScore score_energy(const PdrlModel& model, const StructureRecord& record) {
  if (!is_energy(model.kind))
    throw ValidationError("score_energy needs an energy head, got " + std::string(to_string(model.kind)));
  const Matrix out = per_atom_outputs(model, record);
  const double sum = ordered_sum(std::vector<double>(out.data(), out.data() + out.size()));
  if (model.kind == HeadKind::kEnergyNorm) return {sum, std::nullopt};
  return {std::abs(sum), sum};
}

Vector score_forces(const PdrlModel& model, const StructureRecord& record) {
  if (is_energy(model.kind))
    throw ValidationError("score_forces needs a force head, got " + std::string(to_string(model.kind)));
  const Matrix out = per_atom_outputs(model, record);
  if (model.kind == HeadKind::kForceNorm) return out.col(0);
  return out.rowwise().norm();
}

nlohmann::ordered_json to_json(const PdrlModel& model) {
  nlohmann::ordered_json j;
  j["type"] = "pdrl";
  j["kind"] = std::string(to_string(model.kind));
  j["net"] = mlp::mlp_to_json(model.net);
  return j;
}

PdrlModel pdrl_from_json(const nlohmann::json& j) {
  if (j.value("type", std::string()) != "pdrl") throw ValidationError("not a residual-head model");
  if (!j.contains("kind") || !j["kind"].is_string()) throw ValidationError("model has no head kind");
  if (!j.contains("net")) throw ValidationError("model has no network");
  PdrlModel model{parse_head_kind(j["kind"].get<std::string>()), mlp::mlp_from_json(j["net"])};
  const auto expected = layout_for(model.kind, model.net.layout.input_dim,
                                   model.net.layout.hidden_dims.empty() ? 1 : model.net.layout.hidden_dims.front());
  const auto& got = model.net.layout;
  if (got.output_dim != expected.output_dim || got.output_softplus != expected.output_softplus ||
      got.hidden_dims.size() != expected.hidden_dims.size())
    throw ValidationError("network layout is inconsistent with head kind " + std::string(to_string(model.kind)));
  return model;
}

}  // namespace pdrl::heads
