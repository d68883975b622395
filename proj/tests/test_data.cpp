#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "jointhaz/dataset.hpp"
#include "jointhaz/errors.hpp"
#include "jointhaz/rng.hpp"

using namespace jointhaz;
using namespace testutil;

namespace {

const char* two_row_schema =
    R"({"columns": {"id": "id", "tstart": "time", "tstop": "time", "event": "event", "y": "numeric"}})";

}  // namespace

TEST_CASE("load_csv: minimal well-formed input") {
  std::string dir = temp_dir("load");
  spit(dir + "/d.csv",
       "id,tstart,tstop,event,y\n"
       "s1,0,0.3,0,2.5\n"
       "s1,0.3,0.5,1,2.0\n");
  Dataset ds = load_csv(dir + "/d.csv", Schema::from_json_string(two_row_schema));
  CHECK(ds.n_subjects() == 1);
  CHECK(ds.n_events() == 1);
  CHECK(ds.tstart[1] == doctest::Approx(0.3));
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_csv: overlapping intervals rejected") {
  std::string dir = temp_dir("overlap");
  spit(dir + "/d.csv",
       "id,tstart,tstop,event,y\n"
       "s1,0,0.3,0,2.5\n"
       "s1,0.2,0.5,1,2.0\n");
  CHECK_THROWS_WITH_AS(
      load_csv(dir + "/d.csv", Schema::from_json_string(two_row_schema)),
      doctest::Contains("overlapping"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_csv: event on non-final row rejected") {
  std::string dir = temp_dir("evrow");
  spit(dir + "/d.csv",
       "id,tstart,tstop,event,y\n"
       "s1,0,0.3,1,2.5\n"
       "s1,0.3,0.5,0,2.0\n");
  CHECK_THROWS_WITH_AS(
      load_csv(dir + "/d.csv", Schema::from_json_string(two_row_schema)),
      doctest::Contains("non-final"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_csv: malformed numeric cell names row and column") {
  std::string dir = temp_dir("badnum");
  spit(dir + "/d.csv",
       "id,tstart,tstop,event,y\n"
       "s1,0,0.3,0,oops\n");
  CHECK_THROWS_WITH_AS(
      load_csv(dir + "/d.csv", Schema::from_json_string(two_row_schema)),
      doctest::Contains("row 2, column 'y'"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_csv: unknown categorical level rejected") {
  Schema schema = Schema::from_json_file(fixture_path("panel6.schema.json"));
  std::string dir = temp_dir("badlvl");
  spit(dir + "/d.csv",
       "id,tstart,tstop,event,y,age,grp,load\n"
       "s1,0,0.3,0,5,1,LOW,0.1\n");
  CHECK_THROWS_WITH_AS(load_csv(dir + "/d.csv", schema),
                       doctest::Contains("unknown categorical level"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("six-subject fixture: counts verified by hand") {
  Dataset ds = load_csv(fixture_path("panel6.csv"),
                        Schema::from_json_file(fixture_path("panel6.schema.json")));
  CHECK(ds.n_subjects() == 6);
  CHECK(ds.n_events() == 2);
  CHECK(ds.n_rows() == 13);
  // delayed entry for C
  int c = ds.subject_index("C");
  REQUIRE(c >= 0);
  CHECK(ds.tstart[ds.groups[c].first] == doctest::Approx(0.1));
}

TEST_CASE("write/load round trip is exact") {
  Dataset ds = load_csv(fixture_path("panel6.csv"),
                        Schema::from_json_file(fixture_path("panel6.schema.json")));
  std::string dir = temp_dir("roundtrip");
  write_csv(dir + "/out.csv", ds);
  Dataset ds2 = load_csv(dir + "/out.csv", ds.schema);
  REQUIRE(ds2.n_rows() == ds.n_rows());
  for (int r = 0; r < ds.n_rows(); ++r) {
    CHECK(ds2.id[r] == ds.id[r]);
    CHECK(ds2.tstart[r] == ds.tstart[r]);  // bit-exact via %.17g
    CHECK(ds2.tstop[r] == ds.tstop[r]);
    CHECK(ds2.event[r] == ds.event[r]);
  }
  for (const auto& [name, col] : ds.values) {
    const auto& col2 = ds2.values.at(name);
    for (int r = 0; r < ds.n_rows(); ++r) {
      if (std::isnan(col[r]))
        CHECK(std::isnan(col2[r]));
      else
        CHECK(col2[r] == col[r]);
    }
  }
  // and the files themselves are byte-identical on rewrite
  write_csv(dir + "/out2.csv", ds2);
  CHECK(slurp(dir + "/out.csv") == slurp(dir + "/out2.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("household work index") {
  CHECK(household_work_index({3, 3, 3, 3, 3}).value() == doctest::Approx(0.0));
  CHECK(household_work_index({4, 4, 3, 3, 3}).value() == doctest::Approx(0.4));
  CHECK_FALSE(household_work_index({5, 5, 0, 0, 0}).has_value());
  // 4 valid of 5: (4+4+3+3)/4 - 3
  CHECK(household_work_index({4, 4, 3, 3, 0}).value() == doctest::Approx(0.5));
  CHECK_THROWS_AS(household_work_index({6, 3, 3, 3, 3}), std::invalid_argument);
  // range property
  Rng rng(11, 0);
  for (int k = 0; k < 200; ++k) {
    std::vector<int> items;
    for (int j = 0; j < 5; ++j)
      items.push_back(static_cast<int>(rng.uniform() * 6));
    auto v = household_work_index(items);
    if (v.has_value()) {
      CHECK(*v >= -2.0);
      CHECK(*v <= 2.0);
    }
  }
}

TEST_CASE("gender attitudes index") {
  CHECK(gender_attitudes_index({3, 3, 3}) == 0);
  CHECK(gender_attitudes_index({2, 5, 1}) == 5);
  CHECK(gender_attitudes_index({5, 1, 5}) == -6);
  CHECK_THROWS_AS(gender_attitudes_index({0, 3, 3}), std::invalid_argument);
  Rng rng(12, 0);
  for (int k = 0; k < 200; ++k) {
    std::vector<int> items;
    for (int j = 0; j < 3; ++j)
      items.push_back(1 + static_cast<int>(rng.uniform() * 5));
    int v = gender_attitudes_index(items);
    CHECK(v >= -6);
    CHECK(v <= 6);
  }
}

TEST_CASE("standardize: symmetric case and zero-variance error") {
  Dataset ds = make_dataset(
      {{"a", 0.0, 0.5, 0, {{"y", 1.0}, {"x", 7.0}}},
       {"b", 0.0, 0.5, 0, {{"y", 2.0}, {"x", 7.0}}},
       {"c", 0.0, 0.5, 0, {{"y", 3.0}, {"x", 7.0}}}},
      simple_schema);
  auto [out, report] = standardize(ds, {"y"});
  CHECK(out.values.at("y")[0] == doctest::Approx(-1.0));
  CHECK(out.values.at("y")[1] == doctest::Approx(0.0));
  CHECK(out.values.at("y")[2] == doctest::Approx(1.0));
  CHECK(report.column_moments.at("y").first == doctest::Approx(2.0));
  CHECK(report.column_moments.at("y").second == doctest::Approx(1.0));
  CHECK_THROWS_WITH_AS(standardize(ds, {"x"}), doctest::Contains("zero variance"),
                       DataError);
}

TEST_CASE("standardize: fixture moments and affine inverse") {
  Dataset ds = load_csv(fixture_path("panel6.csv"),
                        Schema::from_json_file(fixture_path("panel6.schema.json")));
  auto [out, report] = standardize(ds, {"age", "load"});
  for (const auto& name : {"age", "load"}) {
    const auto& col = out.values.at(name);
    double sum = 0.0;
    int m = 0;
    for (double v : col)
      if (!std::isnan(v)) { sum += v; ++m; }
    double mean = sum / m;
    double ss = 0.0;
    for (double v : col)
      if (!std::isnan(v)) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / (m - 1));
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(sd - 1.0) < 1e-12);
    // inverse transform recovers raw values
    const auto& raw = ds.values.at(name);
    for (int r = 0; r < ds.n_rows(); ++r)
      if (!std::isnan(raw[r]))
        CHECK(report.inverse(name, col[r]) == doctest::Approx(raw[r]).epsilon(1e-10));
  }
}

TEST_CASE("rescale_time: scaling, idempotence, monotonicity") {
  Dataset ds = make_dataset(
      {{"a", 0.0, 60.0, 0, {{"y", 1.0}, {"x", 0.0}}},
       {"a", 60.0, 120.0, 1, {{"y", 1.5}, {"x", 0.0}}}},
      simple_schema);
  auto [out, scale] = rescale_time(ds);
  CHECK(scale == doctest::Approx(120.0));
  CHECK(out.tstop[0] == doctest::Approx(0.5));
  CHECK(out.max_tstop() == doctest::Approx(1.0));
  auto [again, scale2] = rescale_time(out);
  CHECK(scale2 == doctest::Approx(1.0));
  for (int r = 0; r < out.n_rows(); ++r) {
    CHECK(again.tstart[r] == out.tstart[r]);
    CHECK(again.tstop[r] == out.tstop[r]);
  }
  // per-subject grids stay sorted on the fixture
  Dataset fx = load_csv(fixture_path("panel6.csv"),
                        Schema::from_json_file(fixture_path("panel6.schema.json")));
  auto [sc, k] = rescale_time(fx);
  (void)k;
  for (auto [lo, hi] : sc.groups)
    for (int r = lo + 1; r < hi; ++r) CHECK(sc.tstart[r] > sc.tstart[r - 1]);
}

TEST_CASE("lvcf step-function semantics") {
  Dataset ds = make_dataset(
      {{"a", 0.0, 0.3, 0, {{"y", 1.0}, {"x", 4.0}}},
       {"a", 0.3, 1.0, 1, {{"y", 2.0}, {"x", 7.0}}}},
      simple_schema);
  SubjectHistory h = extract_history(ds, 0, "y");
  CHECK(lvcf_value(h, "x", 0.2) == doctest::Approx(4.0));
  CHECK(lvcf_value(h, "x", 0.3) == doctest::Approx(7.0));  // right-continuous
  CHECK(lvcf_value(h, "x", 0.9) == doctest::Approx(7.0));  // carried forward
  CHECK_THROWS_AS(lvcf_value(h, "x", -0.1), DataError);

  // piecewise constant with jumps only at measurement times
  double prev = lvcf_value(h, "x", 0.0);
  for (double t = 0.0; t <= 0.95; t += 0.01) {
    double v = lvcf_value(h, "x", t);
    if (v != prev) CHECK(t >= 0.3);
    prev = v;
  }
}

TEST_CASE("extract_history: missing outcome rows join the survival layout only") {
  Dataset ds = load_csv(fixture_path("panel6.csv"),
                        Schema::from_json_file(fixture_path("panel6.schema.json")));
  int e = ds.subject_index("E");
  SubjectHistory h = extract_history(ds, e, "y");
  CHECK(h.meas_times.size() == 2);  // middle row has no y
  CHECK(h.step_times.size() == 3);
  CHECK(h.exit_time == doctest::Approx(1.0));
  CHECK(h.event == 0);
}
