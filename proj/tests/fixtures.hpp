#pragma once

#include <string>
#include <vector>

#include "matchlike/tabular.hpp"

namespace matchlike::testing {

inline std::string data_path(const std::string& name) {
  return std::string(MATCHLIKE_TEST_DATA) + "/" + name;
}

inline std::vector<ColumnSchema> loan_schema() {
  return {
      ColumnSchema::categorical("gender", {"Male", "Female"}, false, true),
      ColumnSchema::categorical("married", {"Yes", "No"}, false),
      ColumnSchema::numeric("dependents", false),
      ColumnSchema::categorical("education", {"Graduate", "Not Graduate"}, false),
      ColumnSchema::categorical("self_employed", {"Yes", "No"}),
      ColumnSchema::numeric("applicant_income"),
      ColumnSchema::numeric("coapplicant_income"),
      ColumnSchema::numeric("loan_amount"),
      ColumnSchema::numeric("loan_amount_term"),
      ColumnSchema::numeric("credit_history", false),
      ColumnSchema::categorical("property_area", {"Urban", "Rural", "Semiurban"}),
      ColumnSchema::categorical("loan_status", {"deny", "approve"}, false),
  };
}

inline Dataset loan_dataset() {
  return load_dataset_csv_file(data_path("loan.csv"), loan_schema(), "loan_status");
}

/// One numeric feature `income`; approve iff income >= 5000.
inline Dataset threshold_dataset() {
  std::vector<ColumnSchema> schema = {
      ColumnSchema::numeric("income"),
      ColumnSchema::categorical("loan_status", {"deny", "approve"}, false)};
  std::vector<std::vector<Cell>> rows;
  for (int i = 0; i < 40; ++i) {
    const double income = 1000.0 + 250.0 * i;  // 1000 .. 10750
    rows.push_back({income, std::string(income >= 5000 ? "approve" : "deny")});
  }
  return Dataset(schema, "loan_status", rows);
}

}  // namespace matchlike::testing
