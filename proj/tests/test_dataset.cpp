#include <doctest.h>

#include <fstream>
#include <set>

#include "jointscen/dataset.hpp"
#include "jointscen/error.hpp"
#include "jointscen/marginals.hpp"
#include "support.hpp"

using namespace jointscen;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_csv(text, "in.csv");
  } catch (const InputError& e) {
    return e.what();
  }
  return {};
}

Dataset sequence(std::size_t n) {
  Matrix v(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    v(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i);
    v(static_cast<Eigen::Index>(i), 1) = -static_cast<double>(i);
  }
  return Dataset({"a", "b"}, v);
}

}  // namespace

TEST_CASE("csv: header and rows parse in order") {
  const Dataset ds = parse_csv("a,b\n1,2\n3,4\n");
  CHECK(ds.n() == 2);
  CHECK(ds.d() == 2);
  CHECK(ds.columns() == std::vector<std::string>{"a", "b"});
  CHECK(ds.values()(0, 1) == 2.0);
  CHECK(ds.values()(1, 0) == 3.0);
}

TEST_CASE("csv: scientific notation, spaces and CRLF") {
  const Dataset ds = parse_csv("x, y\r\n1e-3, -2.5E2\r\n");
  CHECK(ds.columns()[1] == "y");
  CHECK(ds.values()(0, 0) == doctest::Approx(1e-3));
  CHECK(ds.values()(0, 1) == -250.0);
}

TEST_CASE("csv: errors name the location") {
  const std::string nan = error_of("a,b\n1,2\n3,NaN\n");
  CHECK(nan.find("row 3") != std::string::npos);
  CHECK(nan.find("column 2") != std::string::npos);
  CHECK(error_of("a,b\n1,inf\n").find("column 2") != std::string::npos);
  CHECK(error_of("a,b\n1,x\n").find("non-numeric") != std::string::npos);
  CHECK(error_of("a,b\n1,2,3\n").find("row 2") != std::string::npos);
  CHECK(error_of("").find("empty input") != std::string::npos);
  CHECK(error_of("a,b\n").find("no data rows") != std::string::npos);
  CHECK(error_of("a,a\n1,2\n").find("duplicate") != std::string::npos);
  CHECK_THROWS_AS(load_csv("/nonexistent/path.csv"), InputError);
}

TEST_CASE("csv: save then load is the identity") {
  testing::TempDir dir;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  Matrix v(50, 3);
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = n01(rng) * std::pow(10.0, static_cast<double>(j * 4 - 4));
  const Dataset ds({"speed (kph)", "gap", "t"}, v);
  save_csv(ds, dir / "d.csv");
  const Dataset back = load_csv(dir / "d.csv");
  CHECK(back.columns() == ds.columns());
  CHECK((back.values() - ds.values()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(back.fingerprint() == ds.fingerprint());
  CHECK(!std::filesystem::exists(dir / "d.csv.tmp"));
}

TEST_CASE("dataset: invariants are enforced") {
  Matrix bad(1, 1);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(Dataset({"a"}, bad), InputError);
  CHECK_THROWS_AS(Dataset({""}, Matrix::Zero(1, 1)), InputError);
  CHECK_THROWS_AS(Dataset({"a", "b"}, Matrix::Zero(1, 1)), InputError);
  CHECK_THROWS_AS(Dataset({"a"}, Matrix::Zero(0, 1)), InputError);
}

TEST_CASE("split: sizes, determinism and partition") {
  const Dataset ds = sequence(10);
  const auto [train, test] = split(ds, 0.2, 7);
  CHECK(train.n() == 8);
  CHECK(test.n() == 2);
  const auto [train2, test2] = split(ds, 0.2, 7);
  CHECK(train.values() == train2.values());
  CHECK(test.values() == test2.values());

  std::multiset<double> seen;
  for (Eigen::Index i = 0; i < train.values().rows(); ++i) seen.insert(train.values()(i, 0));
  for (Eigen::Index i = 0; i < test.values().rows(); ++i) seen.insert(test.values()(i, 0));
  CHECK(seen.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(seen.count(i) == 1);
  // Rows move together.
  CHECK((train.values().col(0) + train.values().col(1)).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(split(sequence(1), 0.5, 1), InputError);
  CHECK_THROWS_AS(split(ds, 0.01, 1), InputError);
  CHECK_THROWS_AS(split(ds, 1.0, 1), InputError);
}

TEST_CASE("to_unit: symmetry, clipping, roundtrip") {
  const KdeMarginal single({0.0}, 1.0, -10.0, 10.0);
  MarginalModel one({"a"}, {single});
  Matrix x(2, 1);
  x << 0.0, -1e12;
  const UnitDataset u = to_unit(Dataset({"a"}, x), one);
  CHECK(u.values()(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(u.values()(1, 0) == kClipEpsilon);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  Matrix data(500, 2);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    data(i, 0) = n01(rng);
    data(i, 1) = std::exp(n01(rng));
  }
  const Dataset ds({"a", "b"}, data);
  const MarginalModel m = fit_marginals(ds);
  const UnitDataset ud = to_unit(ds, m);
  CHECK(ud.values().minCoeff() > 0.0);
  CHECK(ud.values().maxCoeff() < 1.0);
  for (Eigen::Index i = 0; i < 100; ++i) {
    for (Eigen::Index j = 0; j < 2; ++j) {
      CHECK(std::abs(m.dim(static_cast<std::size_t>(j)).quantile(ud.values()(i, j)) - data(i, j)) <= 1e-6);
    }
  }
  CHECK_THROWS_AS(to_unit(Dataset({"a"}, x), m), InputError);
}

TEST_CASE("unit dataset rejects values outside [0,1] and clips the rest") {
  Matrix v(1, 2);
  v << 0.0, 1.0;
  const UnitDataset u(v);
  CHECK(u.values()(0, 0) == kClipEpsilon);
  CHECK(u.values()(0, 1) == 1.0 - kClipEpsilon);
  v(0, 0) = -0.1;
  CHECK_THROWS_AS(UnitDataset{v}, InputError);
}
