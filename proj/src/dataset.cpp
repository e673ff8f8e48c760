#include "jointscen/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "jointscen/error.hpp"
#include "jointscen/marginals.hpp"

namespace jointscen {

double clip_unit(double u) { return std::clamp(u, kClipEpsilon, 1.0 - kClipEpsilon); }

Dataset::Dataset(std::vector<std::string> columns, Matrix values)
    : columns_(std::move(columns)), values_(std::move(values)) {
  if (values_.rows() < 1 || values_.cols() < 1) {
    throw InputError("dataset must have at least one row and one column");
  }
  if (columns_.size() != static_cast<std::size_t>(values_.cols())) {
    throw InputError("dataset has " + std::to_string(columns_.size()) + " column names but " +
                     std::to_string(values_.cols()) + " value columns");
  }
  std::set<std::string> seen;
  for (const auto& name : columns_) {
    if (name.empty()) throw InputError("dataset column names must be nonempty");
    if (!seen.insert(name).second) throw InputError("duplicate column name '" + name + "'");
  }
  for (Eigen::Index i = 0; i < values_.rows(); ++i) {
    for (Eigen::Index j = 0; j < values_.cols(); ++j) {
      if (!std::isfinite(values_(i, j))) {
        throw InputError("non-finite value at row " + std::to_string(i) + ", column '" +
                         columns_[static_cast<std::size_t>(j)] + "'");
      }
    }
  }
}

Dataset Dataset::select_rows(const std::vector<std::size_t>& rows) const {
  Matrix out(static_cast<Eigen::Index>(rows.size()), values_.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = values_.row(static_cast<Eigen::Index>(rows[r]));
  }
  return Dataset(columns_, std::move(out));
}

std::string Dataset::fingerprint() const {
  std::uint64_t hash = 14695981039346656037ull;
  auto mix = [&hash](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ull;
    }
  };
  for (const auto& name : columns_) {
    mix(name.data(), name.size());
    mix("\0", 1);
  }
  mix(values_.data(), sizeof(double) * static_cast<std::size_t>(values_.size()));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

UnitDataset::UnitDataset(Matrix values) : values_(std::move(values)) {
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    double& u = values_.data()[i];
    if (!(u >= 0.0 && u <= 1.0)) {
      throw InputError("unit dataset entry outside [0,1] at flat index " + std::to_string(i));
    }
    u = clip_unit(u);
  }
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    fields.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

}  // namespace

Dataset parse_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_fields(line);
      break;
    }
  }
  if (header.empty()) throw InputError(source + ": empty input");
  for (auto& name : header) name = unquote(name);

  const std::size_t d = header.size();
  std::vector<double> flat;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != d) {
      throw InputError(source + ": row " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, expected " + std::to_string(d));
    }
    for (std::size_t j = 0; j < d; ++j) {
      const std::string& cell = fields[j];
      double value = 0.0;
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      if (!cell.empty() && *first == '+') ++first;
      const auto [ptr, ec] = std::from_chars(first, last, value);
      const std::string where = source + ": row " + std::to_string(line_no) + ", column " +
                                std::to_string(j + 1) + " ('" + header[j] + "')";
      if (cell.empty() || ec != std::errc() || ptr != last) {
        throw InputError(where + ": non-numeric cell '" + cell + "'");
      }
      if (!std::isfinite(value)) throw InputError(where + ": non-finite cell '" + cell + "'");
      flat.push_back(value);
    }
    ++n;
  }
  if (n == 0) throw InputError(source + ": no data rows");
  Matrix values = Eigen::Map<Matrix>(flat.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  return Dataset(std::move(header), std::move(values));
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path.string());
}

std::string format_csv(const Dataset& ds) {
  std::string out;
  for (std::size_t j = 0; j < ds.d(); ++j) {
    if (j) out += ',';
    out += ds.columns()[j];
  }
  out += '\n';
  char buf[32];
  const Matrix& v = ds.values();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      if (j) out += ',';
      const int len = std::snprintf(buf, sizeof(buf), "%.17g", v(i, j));
      out.append(buf, static_cast<std::size_t>(len));
    }
    out += '\n';
  }
  return out;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, format_csv(ds));
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw std::runtime_error("failed writing '" + tmp.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw InputError("holdout fraction must lie in (0,1)");
  }
  const std::size_t n = ds.n();
  const auto n_holdout = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
  if (n < 2 || n_holdout == 0 || n_holdout >= n) {
    throw InputError("holdout fraction " + std::to_string(holdout_fraction) + " on " +
                     std::to_string(n) + " rows leaves an empty part");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_holdout));
  std::vector<std::size_t> holdout(order.end() - static_cast<std::ptrdiff_t>(n_holdout), order.end());
  return {ds.select_rows(train), ds.select_rows(holdout)};
}

UnitDataset to_unit(const Dataset& ds, const MarginalModel& marginals) {
  if (ds.d() != marginals.d()) {
    throw InputError("dataset has " + std::to_string(ds.d()) + " columns but marginal model has " +
                     std::to_string(marginals.d()));
  }
  Matrix u(ds.values().rows(), ds.values().cols());
  for (std::size_t j = 0; j < ds.d(); ++j) {
    const KdeMarginal& m = marginals.dim(j);
    const auto col = static_cast<Eigen::Index>(j);
    for (Eigen::Index i = 0; i < u.rows(); ++i) u(i, col) = clip_unit(m.cdf(ds.values()(i, col)));
  }
  return UnitDataset(std::move(u));
}

}  // namespace jointscen
