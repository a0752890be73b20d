#include "pdrl/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "pdrl/error.hpp"
#include "pdrl/io.hpp"

namespace pdrl {

namespace {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

bool all_finite(const Matrix& m) { return m.allFinite(); }

double number_at(const Json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(where + ": missing key '" + key + "'");
  if (!it->is_number()) throw ValidationError(where + ": '" + key + "' is not a number");
  return it->get<double>();
}

void read_row(const Json& arr, std::size_t expected, Matrix& out, Eigen::Index row,
              const std::string& what) {
  if (!arr.is_array()) throw ValidationError(what + " is not an array");
  if (expected != 0 && arr.size() != expected) {
    std::ostringstream msg;
    msg << what << " has length " << arr.size() << ", expected " << expected;
    throw ValidationError(msg.str());
  }
  for (std::size_t k = 0; k < arr.size(); ++k) {
    if (!arr[k].is_number()) throw ValidationError(what + " contains a non-number");
    out(row, static_cast<Eigen::Index>(k)) = arr[k].get<double>();
  }
}

StructureRecord parse_record(const Json& j) {
  if (!j.is_object()) throw ValidationError("record is not a JSON object");
  StructureRecord rec;

  auto id = j.find("id");
  if (id == j.end() || !id->is_string()) throw ValidationError("missing string key 'id'");
  rec.id = id->get<std::string>();
  if (auto split = j.find("split"); split != j.end()) {
    if (!split->is_string()) throw ValidationError("'split' is not a string");
    rec.split = split->get<std::string>();
  }
  rec.energy_true = number_at(j, "energy_true", "record");
  rec.energy_pred = number_at(j, "energy_pred", "record");

  auto atoms = j.find("atoms");
  if (atoms == j.end() || !atoms->is_array() || atoms->empty())
    throw ValidationError("'atoms' must be a nonempty array");
  const auto n = atoms->size();
  const auto& first_desc = (*atoms)[0].value("descriptor", Json::array());
  const std::size_t d = first_desc.is_array() ? first_desc.size() : 0;
  if (d == 0) throw ValidationError("atom 1: 'descriptor' must be a nonempty array");

  rec.descriptors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  rec.forces_true.resize(static_cast<Eigen::Index>(n), 3);
  rec.forces_pred.resize(static_cast<Eigen::Index>(n), 3);
  rec.atomic_numbers.reserve(n);

  std::size_t members = 0;
  if (auto ens = j.find("ensemble_energy_preds"); ens != j.end()) {
    if (!ens->is_array()) throw ValidationError("'ensemble_energy_preds' is not an array");
    members = ens->size();
    for (const auto& v : *ens) {
      if (!v.is_number()) throw ValidationError("'ensemble_energy_preds' contains a non-number");
      rec.ensemble_energy_preds.push_back(v.get<double>());
    }
    rec.ensemble_force_preds.assign(members, Matrix(static_cast<Eigen::Index>(n), 3));
  }

  for (std::size_t a = 0; a < n; ++a) {
    const auto& atom = (*atoms)[a];
    const auto row = static_cast<Eigen::Index>(a);
    const std::string where = "atom " + std::to_string(a + 1);
    if (!atom.is_object()) throw ValidationError(where + " is not an object");
    auto z = atom.find("z");
    if (z == atom.end() || !z->is_number_integer() || z->get<long long>() <= 0)
      throw ValidationError(where + ": 'z' must be a positive integer");
    rec.atomic_numbers.push_back(z->get<int>());
    read_row(atom.value("descriptor", Json()), d, rec.descriptors, row, where + " descriptor");
    read_row(atom.value("force_true", Json()), 3, rec.forces_true, row, where + " force_true");
    read_row(atom.value("force_pred", Json()), 3, rec.forces_pred, row, where + " force_pred");

    auto ens = atom.find("ensemble_force_preds");
    if (members == 0) {
      if (ens != atom.end())
        throw ValidationError(where + ": 'ensemble_force_preds' without 'ensemble_energy_preds'");
      continue;
    }
    if (ens == atom.end() || !ens->is_array() || ens->size() != members)
      throw ValidationError(where + ": 'ensemble_force_preds' must hold " +
                            std::to_string(members) + " members");
    for (std::size_t m = 0; m < members; ++m)
      read_row((*ens)[m], 3, rec.ensemble_force_preds[m], row, where + " ensemble force");
  }
  return rec;
}

OrderedJson row_json(const Matrix& m, Eigen::Index row) {
  OrderedJson arr = OrderedJson::array();
  for (Eigen::Index k = 0; k < m.cols(); ++k) arr.push_back(m(row, k));
  return arr;
}

OrderedJson record_json(const StructureRecord& rec) {
  OrderedJson j;
  j["id"] = rec.id;
  if (!rec.split.empty()) j["split"] = rec.split;
  j["energy_true"] = rec.energy_true;
  j["energy_pred"] = rec.energy_pred;
  if (rec.has_ensemble()) j["ensemble_energy_preds"] = rec.ensemble_energy_preds;
  OrderedJson atoms = OrderedJson::array();
  for (std::size_t a = 0; a < rec.n_atoms(); ++a) {
    const auto row = static_cast<Eigen::Index>(a);
    OrderedJson atom;
    atom["z"] = rec.atomic_numbers[a];
    atom["descriptor"] = row_json(rec.descriptors, row);
    atom["force_true"] = row_json(rec.forces_true, row);
    atom["force_pred"] = row_json(rec.forces_pred, row);
    if (rec.has_ensemble()) {
      OrderedJson members = OrderedJson::array();
      for (const auto& member : rec.ensemble_force_preds) members.push_back(row_json(member, row));
      atom["ensemble_force_preds"] = std::move(members);
    }
    atoms.push_back(std::move(atom));
  }
  j["atoms"] = std::move(atoms);
  return j;
}

void validate_one(const StructureRecord& rec) {
  const auto n = static_cast<Eigen::Index>(rec.n_atoms());
  if (n == 0) throw ValidationError("structure has no atoms");
  if (rec.d_desc() == 0) throw ValidationError("descriptor dimension is zero");
  if (rec.atomic_numbers.size() != rec.n_atoms())
    throw ValidationError("atomic_numbers length differs from atom count");
  for (int z : rec.atomic_numbers)
    if (z <= 0) throw ValidationError("atomic number must be positive");
  if (rec.forces_true.rows() != n || rec.forces_true.cols() != 3 || rec.forces_pred.rows() != n ||
      rec.forces_pred.cols() != 3)
    throw ValidationError("force matrices must be n_atoms x 3");
  if (!std::isfinite(rec.energy_true) || !std::isfinite(rec.energy_pred))
    throw ValidationError("non-finite energy");
  if (!all_finite(rec.descriptors)) throw ValidationError("non-finite descriptor value");
  if (!all_finite(rec.forces_true) || !all_finite(rec.forces_pred))
    throw ValidationError("non-finite force value");
  if (rec.ensemble_energy_preds.size() != rec.ensemble_force_preds.size())
    throw ValidationError("ensemble energy and force member counts differ");
  if (rec.has_ensemble()) {
    if (rec.ensemble_energy_preds.size() < 2) throw ValidationError("ensemble needs at least 2 members");
    for (double e : rec.ensemble_energy_preds)
      if (!std::isfinite(e)) throw ValidationError("non-finite ensemble energy");
    for (const auto& m : rec.ensemble_force_preds) {
      if (m.rows() != n || m.cols() != 3) throw ValidationError("ensemble force member must be n_atoms x 3");
      if (!all_finite(m)) throw ValidationError("non-finite ensemble force");
    }
  }
}

void check_consistency(const StructureRecord& rec, const StructureRecord& first) {
  if (rec.d_desc() != first.d_desc())
    throw ValidationError("descriptor dimension " + std::to_string(rec.d_desc()) +
                          " differs from dataset dimension " + std::to_string(first.d_desc()));
  if (rec.ensemble_energy_preds.size() != first.ensemble_energy_preds.size())
    throw ValidationError("ensemble member count differs across records");
}

}  // namespace

std::size_t ResidualDataset::total_atoms() const {
  std::size_t total = 0;
  for (const auto& r : records) total += static_cast<std::size_t>(r.descriptors.rows());
  return total;
}

Matrix ResidualDataset::stacked_descriptors() const {
  Matrix out(static_cast<Eigen::Index>(total_atoms()), static_cast<Eigen::Index>(d_desc));
  Eigen::Index row = 0;
  for (const auto& r : records) {
    out.middleRows(row, r.descriptors.rows()) = r.descriptors;
    row += r.descriptors.rows();
  }
  return out;
}

ScalerStats ScalerStats::identity(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  return {Vector::Zero(d), Vector::Ones(d)};
}

void validate_records(std::span<const StructureRecord> records) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      validate_one(records[i]);
      check_consistency(records[i], records.front());
    } catch (const ValidationError& e) {
      throw ValidationError("record " + std::to_string(i + 1) + " ('" + records[i].id + "'): " + e.what());
    }
  }
}

std::vector<StructureRecord> parse_dataset(const std::string& text) {
  std::vector<StructureRecord> records;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      Json j;
      try {
        j = Json::parse(line);
      } catch (const Json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
      }
      auto rec = parse_record(j);
      validate_one(rec);
      if (!records.empty()) check_consistency(rec, records.front());
      records.push_back(std::move(rec));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::vector<StructureRecord> load_dataset(const std::filesystem::path& path) {
  try {
    return parse_dataset(io::read_text(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string serialize_dataset(std::span<const StructureRecord> records) {
  std::string out;
  for (const auto& rec : records) {
    out += record_json(rec).dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, std::span<const StructureRecord> records) {
  validate_records(records);
  io::write_text_atomic(path, serialize_dataset(records));
}

ResidualDataset compute_residuals(std::span<const StructureRecord> records) {
  ResidualDataset out;
  out.d_desc = records.empty() ? 0 : records.front().d_desc();
  out.records.reserve(records.size());
  for (const auto& rec : records) {
    out.records.push_back({rec.id, rec.descriptors, rec.energy_true - rec.energy_pred,
                           rec.forces_true - rec.forces_pred});
  }
  return out;
}

ScalerStats fit_scaler(const Matrix& rows) {
  if (rows.rows() == 0 || rows.cols() == 0) throw ValidationError("cannot fit scaler on empty data");
  const double n = static_cast<double>(rows.rows());
  ScalerStats stats;
  stats.mean = rows.colwise().sum().transpose() / n;
  stats.std.resize(rows.cols());
  for (Eigen::Index k = 0; k < rows.cols(); ++k) {
    const double var = (rows.col(k).array() - stats.mean(k)).square().sum() / n;
    stats.std(k) = std::max(std::sqrt(var), ScalerStats::kEpsilonStd);
  }
  return stats;
}

ScalerStats fit_scaler(const ResidualDataset& train) {
  if (train.records.empty()) throw ValidationError("cannot fit scaler on an empty dataset");
  return fit_scaler(train.stacked_descriptors());
}

Matrix standardize_apply(const ScalerStats& stats, const Matrix& descriptors) {
  if (static_cast<std::size_t>(descriptors.cols()) != stats.dim())
    throw ValidationError("descriptor width " + std::to_string(descriptors.cols()) +
                          " does not match scaler dimension " + std::to_string(stats.dim()));
  return ((descriptors.rowwise() - stats.mean.transpose()).array().rowwise() /
          stats.std.transpose().array())
      .matrix();
}

Matrix unstandardize_apply(const ScalerStats& stats, const Matrix& standardized) {
  if (static_cast<std::size_t>(standardized.cols()) != stats.dim())
    throw ValidationError("descriptor width does not match scaler dimension");
  return ((standardized.array().rowwise() * stats.std.transpose().array()).matrix().rowwise() +
          stats.mean.transpose());
}

double ordered_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum;
}

double ordered_mean(std::vector<double> values) {
  if (values.empty()) throw ValidationError("mean of an empty sequence");
  const auto n = static_cast<double>(values.size());
  return ordered_sum(std::move(values)) / n;
}

}  // namespace pdrl
