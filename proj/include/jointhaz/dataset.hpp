#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace jointhaz {

enum class ColKind { Id, Time, Event, Numeric, Categorical };

struct ColumnSpec {
  ColKind kind = ColKind::Numeric;
  std::vector<std::string> levels;  // categorical only; first level = reference
};

// Column -> kind map, read from a JSON sidecar. id/tstart/tstop/event are
// mandatory; every other column must be declared numeric or categorical.
struct Schema {
  std::vector<std::string> order;  // declaration order
  std::map<std::string, ColumnSpec> cols;

  static Schema from_json_file(const std::string& path);
  static Schema from_json_string(const std::string& text);
  const ColumnSpec& at(const std::string& name) const;
  bool has(const std::string& name) const { return cols.count(name) > 0; }
};

// Long-format start-stop-event panel, immutable once loaded. Rows are
// grouped by subject and ordered by tstart; values are columnar. Numeric
// missing values are NaN (only allowed where an estimator tolerates them,
// e.g. the longitudinal outcome); categorical cells hold the level index.
struct Dataset {
  Schema schema;
  std::vector<std::string> id;   // per row
  std::vector<double> tstart;
  std::vector<double> tstop;
  std::vector<int> event;
  std::map<std::string, std::vector<double>> values;

  std::vector<std::string> subject_ids;            // per group
  std::vector<std::pair<int, int>> groups;         // [begin, end) row ranges

  int n_rows() const { return static_cast<int>(id.size()); }
  int n_subjects() const { return static_cast<int>(groups.size()); }
  int n_events() const;
  int subject_index(const std::string& sid) const;  // -1 when absent
  double max_tstop() const;

  // re-checks all structural invariants; throws DataError on violation
  void validate() const;
};

struct StandardizationReport {
  std::map<std::string, std::pair<double, double>> column_moments;  // mean, sd
  double time_scale = 1.0;  // max observed raw time

  // raw -> standardized and back for a single column value
  double transform(const std::string& column, double raw) const;
  double inverse(const std::string& column, double standardized) const;
};

// One subject's view: entry/exit/event, measurement grid of the chosen
// longitudinal outcome, and LVCF step paths for every covariate.
struct SubjectHistory {
  std::string id;
  double entry_time = 0.0;  // t0 (delayed entry when > 0)
  double exit_time = 0.0;   // T
  int event = 0;            // delta
  std::vector<double> meas_times;
  std::vector<double> meas_values;
  std::vector<double> step_times;  // row tstarts
  std::map<std::string, std::vector<double>> step_values;
};

Dataset load_csv(const std::string& path, const Schema& schema);
void write_csv(const std::string& path, const Dataset& ds);

// Pooled z-score over all rows; sample sd (n-1). Throws on zero variance.
std::pair<Dataset, StandardizationReport> standardize(
    const Dataset& ds, const std::vector<std::string>& columns);

// Divide all times by the global max tstop. Returns the scale constant.
std::pair<Dataset, double> rescale_time(const Dataset& ds);

// History extraction; outcome_column empty -> no measurement grid required.
SubjectHistory extract_history(const Dataset& ds, int subject,
                               const std::string& outcome_column);
std::vector<SubjectHistory> extract_histories(const Dataset& ds,
                                              const std::string& outcome_column);

// Right-continuous step-function lookup; throws if t precedes the first
// observation of that covariate. Beyond the last observation the value is
// carried forward.
double lvcf_value(const SubjectHistory& h, const std::string& covariate,
                  double t);

// Household-work sharing score: mean over tasks answered 1..5 minus the
// scale midpoint; fewer than 4 valid tasks -> missing. Items must already
// have the "another person" / "doesn't apply" codes mapped to 0.
std::optional<double> household_work_index(const std::vector<int>& items);

// Gender-attitudes score: items 1 and 3 reversed, summed, centered at 9.
int gender_attitudes_index(const std::vector<int>& items);

}  // namespace jointhaz
