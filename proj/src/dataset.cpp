#include "jointhaz/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "jointhaz/csv.hpp"
#include "jointhaz/errors.hpp"

namespace jointhaz {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ColKind parse_kind(const std::string& s) {
  if (s == "id") return ColKind::Id;
  if (s == "time") return ColKind::Time;
  if (s == "event" || s == "event-indicator") return ColKind::Event;
  if (s == "numeric") return ColKind::Numeric;
  if (s == "categorical") return ColKind::Categorical;
  throw DataError("schema: unknown column kind '" + s + "'");
}

double parse_numeric_cell(const std::string& cell, int row, const std::string& col) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v))
    throw DataError("malformed numeric cell at row " + std::to_string(row) +
                    ", column '" + col + "': '" + cell + "'");
  return v;
}

}  // namespace

Schema Schema::from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("schema: invalid JSON: ") + e.what());
  }
  if (!j.contains("columns") || !j["columns"].is_object())
    throw DataError("schema: missing 'columns' object");
  Schema s;
  for (auto it = j["columns"].begin(); it != j["columns"].end(); ++it) {
    ColumnSpec spec;
    const auto& v = it.value();
    if (v.is_string()) {
      spec.kind = parse_kind(v.get<std::string>());
    } else if (v.is_object()) {
      spec.kind = parse_kind(v.value("kind", std::string("numeric")));
      if (v.contains("levels"))
        spec.levels = v["levels"].get<std::vector<std::string>>();
    } else {
      throw DataError("schema: column '" + it.key() + "' must be a string or object");
    }
    if (spec.kind == ColKind::Categorical && spec.levels.size() < 2)
      throw DataError("schema: categorical column '" + it.key() +
                      "' needs >= 2 declared levels");
    s.order.push_back(it.key());
    s.cols[it.key()] = std::move(spec);
  }
  for (const char* req : {"id", "tstart", "tstop", "event"})
    if (!s.has(req))
      throw DataError(std::string("schema: mandatory column '") + req + "' missing");
  if (s.at("id").kind != ColKind::Id) throw DataError("schema: 'id' must have kind id");
  if (s.at("tstart").kind != ColKind::Time || s.at("tstop").kind != ColKind::Time)
    throw DataError("schema: 'tstart'/'tstop' must have kind time");
  if (s.at("event").kind != ColKind::Event)
    throw DataError("schema: 'event' must have kind event");
  return s;
}

Schema Schema::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

const ColumnSpec& Schema::at(const std::string& name) const {
  auto it = cols.find(name);
  if (it == cols.end()) throw DataError("unknown column '" + name + "'");
  return it->second;
}

int Dataset::n_events() const {
  int n = 0;
  for (int e : event) n += e;
  return n;
}

int Dataset::subject_index(const std::string& sid) const {
  for (int i = 0; i < n_subjects(); ++i)
    if (subject_ids[i] == sid) return i;
  return -1;
}

double Dataset::max_tstop() const {
  double m = 0.0;
  for (double t : tstop) m = std::max(m, t);
  return m;
}

void Dataset::validate() const {
  for (int g = 0; g < n_subjects(); ++g) {
    auto [lo, hi] = groups[g];
    for (int r = lo; r < hi; ++r) {
      if (!(tstart[r] < tstop[r]))
        throw DataError("subject " + subject_ids[g] + ": interval [" +
                        format_double(tstart[r]) + ", " + format_double(tstop[r]) +
                        ") is empty or reversed");
      if (tstart[r] < 0.0)
        throw DataError("subject " + subject_ids[g] + ": negative tstart");
      if (r > lo) {
        if (tstart[r] < tstop[r - 1])
          throw DataError("subject " + subject_ids[g] + ": overlapping intervals at t=" +
                          format_double(tstart[r]));
      }
      if (event[r] == 1 && r != hi - 1)
        throw DataError("subject " + subject_ids[g] + ": event=1 on non-final row");
      if (event[r] != 0 && event[r] != 1)
        throw DataError("subject " + subject_ids[g] + ": event must be 0 or 1");
    }
  }
}

Dataset load_csv(const std::string& path, const Schema& schema) {
  CsvTable table = read_csv_file(path);

  std::map<std::string, int> col_index;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    const std::string& name = table.header[j];
    if (!schema.has(name))
      throw DataError("csv: column '" + name + "' not declared in schema");
    if (col_index.count(name)) throw DataError("csv: duplicate column '" + name + "'");
    col_index[name] = static_cast<int>(j);
  }
  for (const auto& [name, spec] : schema.cols)
    if (!col_index.count(name))
      throw DataError("csv: schema column '" + name + "' missing from header");

  int n = static_cast<int>(table.rows.size());
  Dataset ds;
  ds.schema = schema;
  ds.id.resize(n);
  ds.tstart.resize(n);
  ds.tstop.resize(n);
  ds.event.resize(n);
  for (const auto& name : schema.order) {
    ColKind k = schema.at(name).kind;
    if (k == ColKind::Numeric || k == ColKind::Categorical)
      ds.values[name].assign(n, kNaN);
  }

  for (int r = 0; r < n; ++r) {
    const auto& row = table.rows[r];
    int csv_row = r + 2;  // 1-based, after header
    ds.id[r] = row[col_index["id"]];
    if (ds.id[r].empty()) throw DataError("csv: empty id at row " + std::to_string(csv_row));
    ds.tstart[r] = parse_numeric_cell(row[col_index["tstart"]], csv_row, "tstart");
    ds.tstop[r] = parse_numeric_cell(row[col_index["tstop"]], csv_row, "tstop");
    const std::string& ev = row[col_index["event"]];
    if (ev == "0") ds.event[r] = 0;
    else if (ev == "1") ds.event[r] = 1;
    else throw DataError("csv: event must be 0 or 1 at row " + std::to_string(csv_row));

    for (const auto& name : schema.order) {
      const ColumnSpec& spec = schema.at(name);
      if (spec.kind == ColKind::Id || spec.kind == ColKind::Time ||
          spec.kind == ColKind::Event)
        continue;
      const std::string& cell = row[col_index[name]];
      if (cell.empty()) continue;  // missing stays NaN
      if (spec.kind == ColKind::Numeric) {
        ds.values[name][r] = parse_numeric_cell(cell, csv_row, name);
      } else {
        auto it = std::find(spec.levels.begin(), spec.levels.end(), cell);
        if (it == spec.levels.end())
          throw DataError("csv: unknown categorical level '" + cell + "' for column '" +
                          name + "' at row " + std::to_string(csv_row));
        ds.values[name][r] = static_cast<double>(it - spec.levels.begin());
      }
    }
  }

  // stable sort by (id-first-appearance, tstart) to group subjects
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::map<std::string, int> first_seen;
  for (int r = 0; r < n; ++r)
    if (!first_seen.count(ds.id[r])) first_seen[ds.id[r]] = static_cast<int>(first_seen.size());
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    int ga = first_seen[ds.id[a]], gb = first_seen[ds.id[b]];
    if (ga != gb) return ga < gb;
    return ds.tstart[a] < ds.tstart[b];
  });

  Dataset out;
  out.schema = schema;
  out.id.reserve(n);
  for (int k = 0; k < n; ++k) {
    int r = order[k];
    out.id.push_back(ds.id[r]);
    out.tstart.push_back(ds.tstart[r]);
    out.tstop.push_back(ds.tstop[r]);
    out.event.push_back(ds.event[r]);
  }
  for (auto& [name, col] : ds.values) {
    auto& dst = out.values[name];
    dst.reserve(n);
    for (int k = 0; k < n; ++k) dst.push_back(col[order[k]]);
  }
  int begin = 0;
  for (int r = 1; r <= n; ++r) {
    if (r == n || out.id[r] != out.id[begin]) {
      out.subject_ids.push_back(out.id[begin]);
      out.groups.emplace_back(begin, r);
      begin = r;
    }
  }
  out.validate();
  return out;
}

void write_csv(const std::string& path, const Dataset& ds) {
  CsvTable table;
  table.header = ds.schema.order;
  table.rows.reserve(ds.n_rows());
  for (int r = 0; r < ds.n_rows(); ++r) {
    std::vector<std::string> row;
    row.reserve(table.header.size());
    for (const auto& name : table.header) {
      const ColumnSpec& spec = ds.schema.at(name);
      switch (spec.kind) {
        case ColKind::Id: row.push_back(ds.id[r]); break;
        case ColKind::Event: row.push_back(ds.event[r] ? "1" : "0"); break;
        case ColKind::Time:
          row.push_back(format_double(name == "tstart" ? ds.tstart[r] : ds.tstop[r]));
          break;
        case ColKind::Numeric: {
          double v = ds.values.at(name)[r];
          row.push_back(std::isnan(v) ? "" : format_double(v));
          break;
        }
        case ColKind::Categorical: {
          double v = ds.values.at(name)[r];
          row.push_back(std::isnan(v) ? "" : spec.levels[static_cast<int>(v)]);
          break;
        }
      }
    }
    table.rows.push_back(std::move(row));
  }
  write_csv_file(path, table);
}

double StandardizationReport::transform(const std::string& column, double raw) const {
  auto it = column_moments.find(column);
  if (it == column_moments.end()) return raw;
  return (raw - it->second.first) / it->second.second;
}

double StandardizationReport::inverse(const std::string& column,
                                      double standardized) const {
  auto it = column_moments.find(column);
  if (it == column_moments.end()) return standardized;
  return standardized * it->second.second + it->second.first;
}

std::pair<Dataset, StandardizationReport> standardize(
    const Dataset& ds, const std::vector<std::string>& columns) {
  Dataset out = ds;
  StandardizationReport report;
  report.time_scale = ds.max_tstop();
  for (const auto& name : columns) {
    if (ds.schema.at(name).kind != ColKind::Numeric)
      throw DataError("standardize: column '" + name + "' is not numeric");
    const auto& col = ds.values.at(name);
    double sum = 0.0;
    int m = 0;
    for (double v : col)
      if (!std::isnan(v)) { sum += v; ++m; }
    if (m < 2) throw DataError("standardize: column '" + name + "' has < 2 values");
    double mean = sum / m;
    double ss = 0.0;
    for (double v : col)
      if (!std::isnan(v)) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / (m - 1));
    if (!(sd > 0.0))
      throw DataError("standardize: column '" + name + "' has zero variance");
    auto& dst = out.values[name];
    for (auto& v : dst)
      if (!std::isnan(v)) v = (v - mean) / sd;
    report.column_moments[name] = {mean, sd};
  }
  return {std::move(out), std::move(report)};
}

std::pair<Dataset, double> rescale_time(const Dataset& ds) {
  double scale = ds.max_tstop();
  if (!(scale > 0.0)) throw DataError("rescale_time: max tstop must be positive");
  Dataset out = ds;
  for (auto& t : out.tstart) t /= scale;
  for (auto& t : out.tstop) t /= scale;
  return {std::move(out), scale};
}

SubjectHistory extract_history(const Dataset& ds, int subject,
                               const std::string& outcome_column) {
  if (subject < 0 || subject >= ds.n_subjects())
    throw DataError("extract_history: subject index out of range");
  auto [lo, hi] = ds.groups[subject];
  SubjectHistory h;
  h.id = ds.subject_ids[subject];
  h.entry_time = ds.tstart[lo];
  h.exit_time = ds.tstop[hi - 1];
  h.event = ds.event[hi - 1];
  for (int r = lo; r < hi; ++r) h.step_times.push_back(ds.tstart[r]);
  for (const auto& [name, col] : ds.values) {
    if (name == outcome_column) continue;
    auto& path = h.step_values[name];
    double last = std::numeric_limits<double>::quiet_NaN();
    for (int r = lo; r < hi; ++r) {
      double v = col[r];
      if (std::isnan(v)) {
        if (std::isnan(last))
          throw DataError("subject " + h.id + ": covariate '" + name +
                          "' missing with no prior value");
        v = last;
      }
      path.push_back(v);
      last = v;
    }
  }
  if (!outcome_column.empty()) {
    const auto& col = ds.values.at(outcome_column);
    for (int r = lo; r < hi; ++r) {
      if (!std::isnan(col[r])) {
        h.meas_times.push_back(ds.tstart[r]);
        h.meas_values.push_back(col[r]);
      }
    }
    if (h.meas_times.empty())
      throw DataError("subject " + h.id + ": no measurements of outcome '" +
                      outcome_column + "'");
  }
  return h;
}

std::vector<SubjectHistory> extract_histories(const Dataset& ds,
                                              const std::string& outcome_column) {
  std::vector<SubjectHistory> out;
  out.reserve(ds.n_subjects());
  for (int i = 0; i < ds.n_subjects(); ++i)
    out.push_back(extract_history(ds, i, outcome_column));
  return out;
}

double lvcf_value(const SubjectHistory& h, const std::string& covariate, double t) {
  auto it = h.step_values.find(covariate);
  if (it == h.step_values.end())
    throw DataError("lvcf_value: unknown covariate '" + covariate + "'");
  if (t < h.step_times.front())
    throw DataError("lvcf_value: t=" + format_double(t) +
                    " precedes first observation of '" + covariate + "' for subject " +
                    h.id);
  int idx = 0;
  for (std::size_t k = 1; k < h.step_times.size(); ++k)
    if (h.step_times[k] <= t) idx = static_cast<int>(k);
  return it->second[idx];
}

std::optional<double> household_work_index(const std::vector<int>& items) {
  if (items.size() != 5)
    throw std::invalid_argument("household_work_index: expected 5 items");
  double sum = 0.0;
  int valid = 0;
  for (int v : items) {
    if (v < 0 || v > 5)
      throw std::invalid_argument("household_work_index: item out of 0..5");
    if (v >= 1) { sum += v; ++valid; }
  }
  if (valid < 4) return std::nullopt;
  return sum / valid - 3.0;
}

int gender_attitudes_index(const std::vector<int>& items) {
  if (items.size() != 3)
    throw std::invalid_argument("gender_attitudes_index: expected 3 items");
  for (int v : items)
    if (v < 1 || v > 5)
      throw std::invalid_argument("gender_attitudes_index: item out of 1..5");
  int a = 6 - items[0];
  int b = items[1];
  int c = 6 - items[2];
  return a + b + c - 9;
}

}  // namespace jointhaz
