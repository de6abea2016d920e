#pragma once

#include "shel/data.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace shel {

/// Numeric CSV with a header row. Every field must parse as a finite number.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  Index column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::string& path);

/// Builds a dataset from a table: `response` and `cluster` name columns,
/// all remaining columns become covariates in file order.
ClusteredDataset dataset_from_table(const CsvTable& table, const std::string& response,
                                    const std::string& cluster, Family family);

/// Writes a dataset in the layout dataset_from_table reads back.
void write_dataset_csv(std::ostream& out, const ClusteredDataset& data,
                       const std::string& response = "y", const std::string& cluster = "cluster");

}  // namespace shel
