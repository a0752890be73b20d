#include "pdrl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pdrl/error.hpp"
#include "pdrl/io.hpp"

namespace pdrl::eval {

Target parse_target(const std::string& name) {
  if (name == "energy") return Target::kEnergy;
  if (name == "force") return Target::kForce;
  throw ValidationError("unknown target '" + name + "' (expected energy or force)");
}

std::string to_string(Target target) { return target == Target::kEnergy ? "energy" : "force"; }

std::string to_string(Metric metric) { return metric == Metric::kSpearman ? "spearman" : "auc"; }

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("correlation inputs differ in length");
  if (xs.size() < 2) throw ValidationError("correlation needs at least 2 samples");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ValidationError("correlation undefined for a constant sequence");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("spearman inputs differ in length");
  if (xs.size() < 2) throw ValidationError("spearman needs at least 2 samples");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

  // Walk tie blocks in ascending score order. Each positive wins against every
  // negative in earlier blocks and ties with the negatives of its own block.
  std::uint64_t wins = 0, ties = 0, negatives_below = 0, positives = 0, negatives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t block_pos = 0, block_neg = 0;
    for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) {
      const int label = labels[order[j]];
      if (label != 0 && label != 1) throw ValidationError("labels must be 0 or 1");
      (label == 1 ? block_pos : block_neg) += 1;
    }
    wins += block_pos * negatives_below;
    ties += block_pos * block_neg;
    negatives_below += block_neg;
    positives += block_pos;
    negatives += block_neg;
    i = j;
  }
  if (positives == 0 || negatives == 0) throw ValidationError("AUC needs both classes");
  return (static_cast<double>(wins) + 0.5 * static_cast<double>(ties)) /
         (static_cast<double>(positives) * static_cast<double>(negatives));
}

std::vector<int> error_split(std::span<const double> errors, double low_quantile) {
  if (errors.empty()) throw ValidationError("error_split needs at least one error");
  if (!(low_quantile > 0.0 && low_quantile < 1.0)) throw ValidationError("quantile must lie in (0, 1)");
  const std::size_t n = errors.size();
  // Small slack so products like 0.29 * 100 land on the intended integer.
  const auto n_low = static_cast<std::size_t>(std::floor(low_quantile * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return errors[a] < errors[b]; });
  std::vector<int> labels(n, 1);
  for (std::size_t i = 0; i < n_low; ++i) labels[order[i]] = 0;
  return labels;
}

ScoreIndex::ScoreIndex(const UncertaintyReport& report) {
  for (const auto& row : report.rows) {
    auto& entry = entries_[row.structure_id];
    if (row.atom_index < 0) {
      if (entry.structure) throw ValidationError("duplicate structure row for '" + row.structure_id + "'");
      entry.structure = row.score;
      continue;
    }
    const auto idx = static_cast<std::size_t>(row.atom_index);
    if (entry.atoms.size() <= idx) entry.atoms.resize(idx + 1);
    if (entry.atoms[idx])
      throw ValidationError("duplicate atom row " + std::to_string(idx) + " for '" + row.structure_id + "'");
    entry.atoms[idx] = row.score;
  }
}

const ScoreIndex::Entry& ScoreIndex::find(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw ValidationError("no scores for structure '" + id + "'");
  return it->second;
}

std::vector<double> ScoreIndex::atom_scores(const StructureRecord& rec) const {
  const auto& entry = find(rec.id);
  std::vector<double> out(rec.n_atoms());
  if (entry.atoms.size() > rec.n_atoms())
    throw ValidationError("scores for '" + rec.id + "' reference atoms beyond the structure");
  for (std::size_t j = 0; j < rec.n_atoms(); ++j) {
    if (j >= entry.atoms.size() || !entry.atoms[j])
      throw ValidationError("no score for atom " + std::to_string(j) + " of '" + rec.id + "'");
    out[j] = *entry.atoms[j];
  }
  return out;
}

double ScoreIndex::structure_score(const StructureRecord& rec, Aggregate how, bool prefer_atoms) const {
  const auto& entry = find(rec.id);
  const bool has_atoms = !entry.atoms.empty();
  if (entry.structure && (!prefer_atoms || !has_atoms)) return *entry.structure;
  if (has_atoms) return aggregate(atom_scores(rec), how);
  throw ValidationError("no usable scores for structure '" + rec.id + "'");
}

std::optional<double> ScoreIndex::atom_or_structure(const std::string& id, long atom) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  const auto& entry = it->second;
  if (atom >= 0 && static_cast<std::size_t>(atom) < entry.atoms.size() && entry.atoms[static_cast<std::size_t>(atom)])
    return entry.atoms[static_cast<std::size_t>(atom)];
  return entry.structure;
}

std::vector<double> structure_energy_errors(std::span<const StructureRecord> records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& rec : records) out.push_back(std::abs(rec.energy_true - rec.energy_pred));
  return out;
}

std::vector<double> structure_force_errors(std::span<const StructureRecord> records, Aggregate how) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    const Vector norms = (rec.forces_true - rec.forces_pred).rowwise().norm();
    out.push_back(aggregate(std::vector<double>(norms.data(), norms.data() + norms.size()), how));
  }
  return out;
}

std::pair<EvalReport, EvalReport> run_id_eval(const UncertaintyReport& scores,
                                              std::span<const StructureRecord> records, Target target,
                                              const IdEvalOptions& options) {
  if (records.empty()) throw ValidationError("no records to evaluate");
  const ScoreIndex index(scores);
  std::vector<double> errors, uncertainties;

  if (target == Target::kEnergy) {
    errors = structure_energy_errors(records);
    for (const auto& rec : records) uncertainties.push_back(index.structure_score(rec, options.aggregate));
  } else if (options.per_structure_force) {
    errors = structure_force_errors(records, options.aggregate);
    for (const auto& rec : records) uncertainties.push_back(index.structure_score(rec, options.aggregate, true));
  } else {
    for (const auto& rec : records) {
      const Vector norms = (rec.forces_true - rec.forces_pred).rowwise().norm();
      errors.insert(errors.end(), norms.data(), norms.data() + norms.size());
      const auto atom = index.atom_scores(rec);
      uncertainties.insert(uncertainties.end(), atom.begin(), atom.end());
    }
  }

  const auto labels = error_split(errors, options.low_quantile);
  EvalReport rho{options.scorer, target, Metric::kSpearman, options.split, spearman(errors, uncertainties),
                 errors.size(), ""};
  EvalReport auc{options.scorer, target, Metric::kAuc, options.split, roc_auc(uncertainties, labels), errors.size(),
                "high_error"};
  return {rho, auc};
}

std::vector<EvalReport> run_ood_eval(const std::vector<double>& id_scores, const std::vector<double>& id_errors,
                                     const std::vector<OodSide>& ood, const OodOptions& options) {
  if (id_scores.empty()) throw ValidationError("in-distribution side is empty");
  if (id_scores.size() != id_errors.size()) throw ValidationError("ID scores and errors differ in length");
  if (ood.empty()) throw ValidationError("no OOD sets given");

  auto evaluate = [&](const std::string& tag, const std::vector<const OodSide*>& sides) {
    std::vector<double> scores = id_scores;
    std::vector<double> errors = id_errors;
    std::vector<int> labels(id_scores.size(), 0);
    std::vector<double> ood_scores, ood_errors;
    for (const auto* side : sides) {
      if (side->scores.empty()) throw ValidationError("OOD set '" + side->tag + "' is empty");
      if (side->scores.size() != side->errors.size())
        throw ValidationError("OOD set '" + side->tag + "' scores and errors differ in length");
      scores.insert(scores.end(), side->scores.begin(), side->scores.end());
      errors.insert(errors.end(), side->errors.begin(), side->errors.end());
      labels.insert(labels.end(), side->scores.size(), 1);
      ood_scores.insert(ood_scores.end(), side->scores.begin(), side->scores.end());
      ood_errors.insert(ood_errors.end(), side->errors.begin(), side->errors.end());
    }
    const double rho = options.ood_only_spearman ? spearman(ood_errors, ood_scores) : spearman(errors, scores);
    const std::size_t rho_n = options.ood_only_spearman ? ood_scores.size() : scores.size();
    return std::vector<EvalReport>{
        {options.scorer, Target::kForce, Metric::kSpearman, tag, rho, rho_n, ""},
        {options.scorer, Target::kForce, Metric::kAuc, tag, roc_auc(scores, labels), scores.size(), "ood"}};
  };

  std::vector<EvalReport> out;
  std::vector<const OodSide*> all;
  for (const auto& side : ood) {
    auto pair = evaluate(side.tag, {&side});
    out.insert(out.end(), pair.begin(), pair.end());
    all.push_back(&side);
  }
  auto pooled = evaluate(kPooledTag, all);
  out.insert(out.end(), pooled.begin(), pooled.end());
  return out;
}

std::string reports_to_csv(std::span<const EvalReport> reports) {
  std::string out = "scorer,target,metric,split,value,n\n";
  for (const auto& r : reports) {
    out += r.scorer + ',' + to_string(r.target) + ',' + to_string(r.metric) + ',' + r.split + ',' +
           io::format_double(r.value) + ',' + std::to_string(r.n) + '\n';
  }
  return out;
}

nlohmann::ordered_json reports_to_json(std::span<const EvalReport> reports) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["scorer"] = r.scorer;
    j["target"] = to_string(r.target);
    j["metric"] = to_string(r.metric);
    j["split"] = r.split;
    j["value"] = r.value;
    j["n"] = r.n;
    if (!r.positive_class.empty()) j["positive_class"] = r.positive_class;
    arr.push_back(std::move(j));
  }
  return arr;
}

PcaModel pca_fit(const ResidualDataset& train, bool standardize) {
  if (train.total_atoms() < 2) throw ValidationError("PCA needs at least 2 training atoms");
  PcaModel model;
  const Matrix raw = train.stacked_descriptors();
  if (standardize) {
    model.scaler = fit_scaler(raw);
  } else {
    model.scaler = ScalerStats::identity(train.d_desc);
    model.scaler.mean = raw.colwise().mean().transpose();
  }
  const Matrix x = standardize_apply(model.scaler, raw);
  const Matrix cov = (x.transpose() * x) / static_cast<double>(x.rows());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Eigen::MatrixXd(cov), Eigen::ComputeEigenvectors);
  const auto d = cov.rows();
  model.axes.resize(d, d);
  model.eigenvalues.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Eigen::Index src = d - 1 - i;  // solver returns ascending order
    model.eigenvalues(i) = std::max(solver.eigenvalues()(src), 0.0);
    Vector axis = solver.eigenvectors().col(src);
    Eigen::Index largest = 0;
    axis.cwiseAbs().maxCoeff(&largest);
    if (axis(largest) < 0.0) axis = -axis;
    model.axes.col(i) = axis;
  }
  return model;
}

Matrix pca_project(const PcaModel& model, const Matrix& descriptors, std::size_t n_components) {
  if (n_components == 0 || n_components > static_cast<std::size_t>(model.axes.cols()))
    throw ValidationError("component count must lie in [1, d_desc]");
  return standardize_apply(model.scaler, descriptors) * model.axes.leftCols(static_cast<Eigen::Index>(n_components));
}

std::string pca_table_csv(const PcaModel& model, std::span<const NamedResiduals> sets, std::size_t n_components,
                          std::span<const UncertaintyReport> scores) {
  std::vector<ScoreIndex> indices;
  for (const auto& report : scores) indices.emplace_back(report);

  std::string out = "set,structure_id,atom_index";
  for (std::size_t c = 1; c <= n_components; ++c) out += ",pc" + std::to_string(c);
  out += ",force_error_norm,uncertainty\n";

  for (const auto& set : sets) {
    for (const auto& rec : set.data->records) {
      const Matrix proj = pca_project(model, rec.descriptors, n_components);
      for (Eigen::Index j = 0; j < proj.rows(); ++j) {
        out += set.name + ',' + rec.structure_id + ',' + std::to_string(j);
        for (Eigen::Index c = 0; c < proj.cols(); ++c) out += ',' + io::format_double(proj(j, c));
        out += ',' + io::format_double(rec.delta_f.row(j).norm()) + ',';
        for (const auto& index : indices) {
          if (auto u = index.atom_or_structure(rec.structure_id, static_cast<long>(j))) {
            out += io::format_double(*u);
            break;
          }
        }
        out += '\n';
      }
    }
  }
  return out;
}

}  // namespace pdrl::eval
