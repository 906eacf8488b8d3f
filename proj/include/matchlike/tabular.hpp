#pragma once

// Typed tabular datasets, CSV loading and the numeric encoding every model and
// explainer works in.

#include <cstddef>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "matchlike/value.hpp"

namespace matchlike {

using Cell = std::variant<double, std::string>;
using FeatureRow = std::vector<Cell>;

struct ColumnSchema {
  enum class Kind { Numeric, Categorical };

  std::string name;
  Kind kind = Kind::Numeric;
  std::vector<std::string> levels;  // categorical only, in declared order
  bool mutable_for_counterfactuals = true;
  bool is_protected = false;

  static ColumnSchema numeric(std::string name, bool mutable_cf = true, bool is_protected = false);
  static ColumnSchema categorical(std::string name, std::vector<std::string> levels,
                                  bool mutable_cf = true, bool is_protected = false);

  bool is_numeric() const { return kind == Kind::Numeric; }
  /// Counterfactual search may change this column.
  bool searchable() const { return mutable_for_counterfactuals && !is_protected; }
  std::ptrdiff_t level_index(std::string_view level) const;

  /// Throws SchemaMismatch naming the column when `cell` is not valid here.
  void check(const Cell& cell) const;
  Cell parse(std::string_view text) const;
  Cell from_json(const Json& value) const;
  Json to_json(const Cell& cell) const;

  Json describe() const;
  static ColumnSchema from_description(const Json& doc);
};

class Dataset {
 public:
  Dataset(std::vector<ColumnSchema> schema, std::string target,
          std::vector<std::vector<Cell>> rows = {});

  const std::vector<ColumnSchema>& schema() const { return schema_; }
  const std::string& target() const { return target_; }
  std::size_t target_index() const { return target_index_; }
  const std::vector<std::string>& classes() const { return schema_[target_index_].levels; }
  std::vector<ColumnSchema> feature_columns() const;

  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  const std::vector<std::vector<Cell>>& rows() const { return rows_; }
  FeatureRow features(std::size_t row) const;
  std::size_t label(std::size_t row) const;

  void add_row(std::vector<Cell> values);
  void update_cell(std::size_t row, std::string_view column, Cell value);
  void delete_row(std::size_t row);

  std::vector<Cell> row_from_json(const Json& doc) const;
  Json row_to_json(std::size_t row) const;
  Json to_json() const;

  std::size_t column_index(std::string_view name) const;

 private:
  void check_row(const std::vector<Cell>& values, std::size_t row_index) const;

  std::vector<ColumnSchema> schema_;
  std::string target_;
  std::size_t target_index_ = 0;
  std::vector<std::vector<Cell>> rows_;
};

Dataset load_dataset_csv(std::istream& in, std::vector<ColumnSchema> schema, std::string target);
Dataset load_dataset_csv_file(const std::string& path, std::vector<ColumnSchema> schema,
                              std::string target);

/// Numeric columns are standardized with the population standard deviation;
/// categorical columns are full one-hot in level order. Zero-variance numeric
/// columns are dropped (width 0) and reported in warnings().
class Encoder {
 public:
  struct Group {
    std::size_t offset = 0;
    std::size_t width = 0;
  };

  Encoder() = default;
  Encoder(std::vector<ColumnSchema> features, std::vector<double> means, std::vector<double> stds);

  static Encoder fit(const Dataset& dataset);

  const std::vector<ColumnSchema>& features() const { return features_; }
  const std::vector<Group>& groups() const { return groups_; }
  const std::vector<double>& means() const { return means_; }
  const std::vector<double>& stds() const { return stds_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  std::size_t width() const { return names_.size(); }
  const std::vector<std::string>& feature_names() const { return names_; }

  std::vector<double> encode(const FeatureRow& row) const;
  /// Inverse of encode; a one-hot group decodes to its largest entry.
  FeatureRow decode(std::span<const double> encoded) const;

  FeatureRow row_from_json(const Json& doc) const;
  Json row_to_json(const FeatureRow& row) const;
  std::size_t feature_index(std::string_view name) const;

  Json to_json() const;
  static Encoder from_json(const Json& doc);

 private:
  void build_groups();

  std::vector<ColumnSchema> features_;
  std::vector<double> means_;
  std::vector<double> stds_;
  std::vector<Group> groups_;
  std::vector<std::string> names_;
  std::vector<std::string> warnings_;
};

struct EncodedMatrix {
  std::vector<std::vector<double>> matrix;
  std::vector<std::string> feature_names;
  std::vector<double> means;
  std::vector<double> stds;
  std::vector<std::string> warnings;
};

EncodedMatrix encode(const Dataset& dataset);

}  // namespace matchlike
