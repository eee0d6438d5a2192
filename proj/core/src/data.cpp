#include "rflab/data.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "rflab/errors.hpp"
#include "rflab/rng.hpp"

namespace rflab {

namespace {

void check_disjoint(const Eigen::MatrixXd& train, const Eigen::MatrixXd& test) {
  for (Eigen::Index i = 0; i < test.rows(); ++i)
    for (Eigen::Index j = 0; j < train.rows(); ++j)
      if ((test.row(i) - train.row(j)).cwiseAbs().maxCoeff() == 0.0)
        throw Error("dataset: a test row duplicates a training row");
}

}  // namespace

Dataset synth_dataset(std::uint64_t seed, int n, int n_test, int p,
                      double noise_sigma) {
  if (n < 1 || n_test < 1 || p < 1)
    throw ConfigError("synth_dataset: n, n_test and p must be >= 1");

  Rng rng(seed);
  Eigen::VectorXd b(p);
  for (int i = 0; i < p; ++i) b[i] = rng.normal();

  auto fill_split = [&](int rows, Eigen::MatrixXd& x, Eigen::VectorXd& y) {
    x.resize(rows, p);
    y.resize(rows);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < p; ++j) x(i, j) = rng.uniform(-5.0, 5.0);
    for (int i = 0; i < rows; ++i)
      y[i] = std::sin(5.0 * b.dot(x.row(i))) + noise_sigma * rng.normal();
  };

  Dataset ds;
  fill_split(n, ds.x, ds.y);
  fill_split(n_test, ds.x_test, ds.y_test);
  check_disjoint(ds.x, ds.x_test);
  ds.meta = DatasetMeta{"synthetic-sine", seed, noise_sigma, "none", false};
  return ds;
}

Dataset load_calhousing(const std::string& path, std::uint64_t seed, int n,
                        int n_test, bool normalize_target) {
  if (n < 1 || n_test < 1)
    throw ConfigError("load_calhousing: n and n_test must be >= 1");

  std::ifstream in(path);
  if (!in) throw ParseError("load_calhousing: cannot open " + path);

  constexpr int kFeatures = 8;
  constexpr int kColumns = kFeatures + 1;

  std::string line;
  if (!std::getline(in, line))
    throw ParseError("load_calhousing: empty file " + path);

  std::vector<std::array<double, kColumns>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::array<double, kColumns> row{};
    std::stringstream ss(line);
    std::string cell;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col >= kColumns)
        throw ParseError("load_calhousing: too many columns at row " +
                         std::to_string(line_no));
      try {
        std::size_t used = 0;
        row[static_cast<std::size_t>(col)] = std::stod(cell, &used);
        if (used != cell.size() && cell.find_first_not_of(" \t\r", used) !=
                                       std::string::npos)
          throw std::invalid_argument("trailing junk");
      } catch (const std::exception&) {
        throw ParseError("load_calhousing: bad value at row " +
                         std::to_string(line_no) + " column " +
                         std::to_string(col + 1));
      }
      ++col;
    }
    if (col != kColumns)
      throw ParseError("load_calhousing: expected " +
                       std::to_string(kColumns) + " columns at row " +
                       std::to_string(line_no) + ", got " +
                       std::to_string(col));
    rows.push_back(row);
  }

  const int total = static_cast<int>(rows.size());
  if (total < n + n_test)
    throw InsufficientRows("load_calhousing: file has " +
                           std::to_string(total) + " rows, need " +
                           std::to_string(n + n_test));

  // Max-min normalization over the entire file, before any split.
  const int norm_cols = normalize_target ? kColumns : kFeatures;
  for (int c = 0; c < norm_cols; ++c) {
    double lo = rows[0][static_cast<std::size_t>(c)];
    double hi = lo;
    for (const auto& r : rows) {
      lo = std::min(lo, r[static_cast<std::size_t>(c)]);
      hi = std::max(hi, r[static_cast<std::size_t>(c)]);
    }
    const double span = hi - lo;
    for (auto& r : rows) {
      auto& v = r[static_cast<std::size_t>(c)];
      v = span > 0.0 ? (v - lo) / span : 0.0;
    }
  }

  // Seeded Fisher-Yates permutation.
  Rng rng(seed);
  std::vector<int> order(rows.size());
  for (int i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int i = total - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform01() * (i + 1));
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(j)]);
  }

  Dataset ds;
  ds.x.resize(n, kFeatures);
  ds.y.resize(n);
  ds.x_test.resize(n_test, kFeatures);
  ds.y_test.resize(n_test);
  for (int i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    for (int c = 0; c < kFeatures; ++c) ds.x(i, c) = r[static_cast<std::size_t>(c)];
    ds.y[i] = r[kFeatures];
  }
  for (int i = 0; i < n_test; ++i) {
    const auto& r =
        rows[static_cast<std::size_t>(order[static_cast<std::size_t>(n + i)])];
    for (int c = 0; c < kFeatures; ++c)
      ds.x_test(i, c) = r[static_cast<std::size_t>(c)];
    ds.y_test[i] = r[kFeatures];
  }
  check_disjoint(ds.x, ds.x_test);
  ds.meta = DatasetMeta{"calhousing:" + path, seed, 0.0, "maxmin-features",
                        normalize_target};
  return ds;
}

}  // namespace rflab
