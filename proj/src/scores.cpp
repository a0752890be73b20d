#include "pdrl/scores.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <thread>

#include "pdrl/error.hpp"
#include "pdrl/io.hpp"

namespace pdrl {

namespace {

constexpr const char* kHeader = "structure_id,atom_index,score,signed_score";

double parse_number(std::string_view text, std::size_t line) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw ValidationError("line " + std::to_string(line) + ": bad number '" + std::string(text) + "'");
  return value;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename PerRecord>
UncertaintyReport score_parallel(std::span<const StructureRecord> records, PerRecord per_record) {
  std::vector<std::vector<ScoreRow>> slots(records.size());
  const std::size_t workers = std::min(thread_budget(), std::max<std::size_t>(records.size(), 1));
  auto run = [&](std::size_t worker) {
    for (std::size_t i = worker; i < records.size(); i += workers) slots[i] = per_record(records[i]);
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          run(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  UncertaintyReport report;
  for (auto& s : slots) report.rows.insert(report.rows.end(), s.begin(), s.end());
  return report;
}

std::vector<ScoreRow> atom_rows(const StructureRecord& rec, const Vector& scores) {
  std::vector<ScoreRow> rows;
  rows.reserve(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index j = 0; j < scores.size(); ++j) rows.push_back({rec.id, static_cast<long>(j), scores(j), std::nullopt});
  return rows;
}

}  // namespace

Aggregate parse_aggregate(const std::string& name) {
  if (name == "mean") return Aggregate::kMean;
  if (name == "max") return Aggregate::kMax;
  throw ValidationError("unknown aggregation '" + name + "' (expected mean or max)");
}

double aggregate(std::vector<double> values, Aggregate how) {
  if (values.empty()) throw ValidationError("cannot aggregate an empty set of scores");
  if (how == Aggregate::kMax) return *std::max_element(values.begin(), values.end());
  return ordered_mean(std::move(values));
}

std::string report_to_csv(const UncertaintyReport& report) {
  std::string out = kHeader;
  out += '\n';
  for (const auto& row : report.rows) {
    out += row.structure_id;
    out += ',';
    out += std::to_string(row.atom_index);
    out += ',';
    out += io::format_double(row.score);
    out += ',';
    if (row.signed_score) out += io::format_double(*row.signed_score);
    out += '\n';
  }
  return out;
}

UncertaintyReport report_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ValidationError("score file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw ValidationError("line 1: expected header '" + std::string(kHeader) + "'");
  UncertaintyReport report;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != 4) throw ValidationError("line " + std::to_string(line_no) + ": expected 4 columns");
    ScoreRow row;
    row.structure_id = std::string(fields[0]);
    long index = 0;
    auto [ptr, ec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), index);
    if (ec != std::errc{} || ptr != fields[1].data() + fields[1].size() || index < -1)
      throw ValidationError("line " + std::to_string(line_no) + ": bad atom_index");
    row.atom_index = index;
    row.score = parse_number(fields[2], line_no);
    if (!fields[3].empty()) row.signed_score = parse_number(fields[3], line_no);
    report.rows.push_back(std::move(row));
  }
  return report;
}

UncertaintyReport load_report(const std::filesystem::path& path) {
  try {
    return report_from_csv(io::read_text(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_report(const std::filesystem::path& path, const UncertaintyReport& report) {
  io::write_text_atomic(path, report_to_csv(report));
}

std::size_t thread_budget() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PDRL_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) return std::min<std::size_t>(hw, static_cast<std::size_t>(cap));
  }
  return hw;
}

UncertaintyReport score_dataset(const heads::PdrlModel& model, std::span<const StructureRecord> records) {
  return score_parallel(records, [&](const StructureRecord& rec) -> std::vector<ScoreRow> {
    if (heads::is_energy(model.kind)) {
      const auto s = heads::score_energy(model, rec);
      return {{rec.id, -1, s.uncertainty, s.signed_value}};
    }
    return atom_rows(rec, heads::score_forces(model, rec));
  });
}

UncertaintyReport score_dataset(const baselines::KnnIndex& index, std::span<const StructureRecord> records) {
  return score_parallel(records, [&](const StructureRecord& rec) {
    Vector scores(static_cast<Eigen::Index>(rec.n_atoms()));
    for (Eigen::Index j = 0; j < scores.size(); ++j)
      scores(j) = baselines::knn_score(index, rec.descriptors.row(j).transpose());
    return atom_rows(rec, scores);
  });
}

UncertaintyReport score_dataset(const baselines::GmmModel& model, std::span<const StructureRecord> records) {
  return score_parallel(records, [&](const StructureRecord& rec) {
    Vector scores(static_cast<Eigen::Index>(rec.n_atoms()));
    for (Eigen::Index j = 0; j < scores.size(); ++j)
      scores(j) = baselines::gmm_score(model, rec.descriptors.row(j).transpose());
    return atom_rows(rec, scores);
  });
}

UncertaintyReport ensemble_score_dataset(std::span<const StructureRecord> records) {
  return score_parallel(records, [&](const StructureRecord& rec) {
    const auto d = baselines::disagreement_scores(rec);
    std::vector<ScoreRow> rows{{rec.id, -1, d.energy, std::nullopt}};
    auto atoms = atom_rows(rec, d.forces);
    rows.insert(rows.end(), atoms.begin(), atoms.end());
    return rows;
  });
}

}  // namespace pdrl
