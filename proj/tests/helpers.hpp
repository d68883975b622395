#pragma once

#include <Eigen/Dense>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "jointhaz/dataset.hpp"

namespace testutil {

inline std::string fixture_path(const std::string& name) {
  return std::string(JOINTHAZ_FIXTURE_DIR) + "/" + name;
}

inline std::string cli_path() { return JOINTHAZ_CLI_PATH; }

inline std::string temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("jointhaz_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::string out((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  return out;
}

inline void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

// central finite difference of a scalar function
inline Eigen::VectorXd fd_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h_rel = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (int j = 0; j < x.size(); ++j) {
    double h = h_rel * (1.0 + std::abs(x(j)));
    Eigen::VectorXd xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    g(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// quick hand-built start-stop dataset
struct RowSpec {
  std::string id;
  double t0, t1;
  int ev;
  std::map<std::string, double> vals;
};

inline jointhaz::Dataset make_dataset(const std::vector<RowSpec>& rows,
                                      const std::string& schema_json) {
  jointhaz::Dataset ds;
  ds.schema = jointhaz::Schema::from_json_string(schema_json);
  for (const auto& name : ds.schema.order) {
    auto kind = ds.schema.at(name).kind;
    if (kind == jointhaz::ColKind::Numeric || kind == jointhaz::ColKind::Categorical)
      ds.values[name] = {};
  }
  for (const auto& r : rows) {
    ds.id.push_back(r.id);
    ds.tstart.push_back(r.t0);
    ds.tstop.push_back(r.t1);
    ds.event.push_back(r.ev);
    for (auto& [name, col] : ds.values) {
      auto it = r.vals.find(name);
      col.push_back(it == r.vals.end()
                        ? std::numeric_limits<double>::quiet_NaN()
                        : it->second);
    }
  }
  int begin = 0;
  int n = ds.n_rows();
  for (int r = 1; r <= n; ++r) {
    if (r == n || ds.id[r] != ds.id[begin]) {
      ds.subject_ids.push_back(ds.id[begin]);
      ds.groups.emplace_back(begin, r);
      begin = r;
    }
  }
  ds.validate();
  return ds;
}

inline const char* simple_schema =
    R"({"columns": {"id": "id", "tstart": "time", "tstop": "time", "event": "event", "y": "numeric", "x": "numeric"}})";

}  // namespace testutil
