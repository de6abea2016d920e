#include "shel/csv.hpp"

#include "shel/errors.hpp"

#include <cerrno>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace shel {
namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  out.push_back(field);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t\"");
    const auto e = f.find_last_not_of(" \t\"");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return out;
}

double parse_number(const std::string& field, std::size_t line, const std::string& column) {
  if (field.empty()) throw DataError("missing value in column '" + column + "' at line " + std::to_string(line));
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size() || errno == ERANGE || !std::isfinite(v))
    throw DataError("non-numeric or missing value '" + field + "' in column '" + column + "' at line " +
                    std::to_string(line));
  return v;
}

}  // namespace

Index CsvTable::column(const std::string& name) const {
  for (std::size_t k = 0; k < header.size(); ++k)
    if (header[k] == name) return static_cast<Index>(k);
  return -1;
}

CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV input is empty");
  table.header = split_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_line(line);
    if (fields.size() != table.header.size())
      throw DataError("line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(table.header.size()));
    std::vector<double> row(fields.size());
    for (std::size_t k = 0; k < fields.size(); ++k) row[k] = parse_number(fields[k], lineno, table.header[k]);
    table.rows.push_back(std::move(row));
  }
  return table;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  return read_csv(in);
}

ClusteredDataset dataset_from_table(const CsvTable& table, const std::string& response,
                                    const std::string& cluster, Family family) {
  const Index ry = table.column(response);
  if (ry < 0) throw DataError("response column '" + response + "' not found");
  const Index rc = table.column(cluster);
  if (rc < 0) throw DataError("cluster column '" + cluster + "' not found");
  const Index n = static_cast<Index>(table.rows.size());
  std::vector<Index> cov_cols;
  std::vector<std::string> names;
  for (Index k = 0; k < static_cast<Index>(table.header.size()); ++k) {
    if (k == ry || k == rc) continue;
    cov_cols.push_back(k);
    names.push_back(table.header[k]);
  }
  VectorXd y(n);
  MatrixXd X(n, static_cast<Index>(cov_cols.size()));
  std::vector<int> ids(n);
  for (Index i = 0; i < n; ++i) {
    const auto& row = table.rows[i];
    y[i] = row[ry];
    const double c = row[rc];
    if (c != std::floor(c)) throw DataError("cluster column '" + cluster + "' must hold integer labels");
    ids[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < cov_cols.size(); ++j) X(i, static_cast<Index>(j)) = row[cov_cols[j]];
  }
  return ClusteredDataset(std::move(y), std::move(X), std::move(ids), family, std::move(names));
}

void write_dataset_csv(std::ostream& out, const ClusteredDataset& data, const std::string& response,
                       const std::string& cluster) {
  out << response << ',' << cluster;
  for (const auto& name : data.covariate_names()) out << ',' << name;
  out << '\n' << std::setprecision(17);
  for (Index i = 0; i < data.n_obs(); ++i) {
    out << data.y()[i] << ',' << data.cluster_id()[i];
    for (Index l = 0; l < data.n_covariates(); ++l) out << ',' << data.X()(i, l);
    out << '\n';
  }
}

}  // namespace shel
