#include "matchlike/tabular.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "matchlike/error.hpp"

namespace matchlike {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// ColumnSchema

ColumnSchema ColumnSchema::numeric(std::string name, bool mutable_cf, bool is_protected) {
  return {std::move(name), Kind::Numeric, {}, mutable_cf, is_protected};
}

ColumnSchema ColumnSchema::categorical(std::string name, std::vector<std::string> levels,
                                       bool mutable_cf, bool is_protected) {
  if (levels.empty()) {
    throw Error(ErrorCode::SchemaMismatch, "categorical column '" + name + "' has no levels", name);
  }
  std::set<std::string> unique(levels.begin(), levels.end());
  if (unique.size() != levels.size()) {
    throw Error(ErrorCode::SchemaMismatch, "categorical column '" + name + "' repeats a level",
                name);
  }
  return {std::move(name), Kind::Categorical, std::move(levels), mutable_cf, is_protected};
}

std::ptrdiff_t ColumnSchema::level_index(std::string_view level) const {
  auto it = std::find(levels.begin(), levels.end(), level);
  return it == levels.end() ? -1 : it - levels.begin();
}

void ColumnSchema::check(const Cell& cell) const {
  if (is_numeric()) {
    const double* v = std::get_if<double>(&cell);
    if (!v || !std::isfinite(*v)) {
      throw Error(ErrorCode::SchemaMismatch, "column '" + name + "' expects a finite number", name);
    }
    return;
  }
  const std::string* s = std::get_if<std::string>(&cell);
  if (!s || level_index(*s) < 0) {
    throw Error(ErrorCode::SchemaMismatch, "column '" + name + "' expects one of its levels", name);
  }
}

Cell ColumnSchema::parse(std::string_view text) const {
  if (is_numeric()) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v)) {
      throw Error(ErrorCode::SchemaMismatch,
                  "column '" + name + "': cannot parse '" + std::string(text) + "' as a number",
                  name);
    }
    return v;
  }
  Cell c = std::string(text);
  check(c);
  return c;
}

Cell ColumnSchema::from_json(const Json& value) const {
  if (is_numeric()) {
    if (!value.is_number()) {
      throw Error(ErrorCode::SchemaMismatch, "column '" + name + "' expects a number", name);
    }
    Cell c = value.get<double>();
    check(c);
    return c;
  }
  if (!value.is_string()) {
    throw Error(ErrorCode::SchemaMismatch, "column '" + name + "' expects text", name);
  }
  Cell c = value.get<std::string>();
  check(c);
  return c;
}

Json ColumnSchema::to_json(const Cell& cell) const {
  if (const double* v = std::get_if<double>(&cell)) return *v;
  return std::get<std::string>(cell);
}

Json ColumnSchema::describe() const {
  Json doc = {{"name", name},
              {"kind", is_numeric() ? "numeric" : "categorical"},
              {"mutable", mutable_for_counterfactuals},
              {"protected", is_protected}};
  if (!is_numeric()) doc["levels"] = levels;
  return doc;
}

ColumnSchema ColumnSchema::from_description(const Json& doc) {
  if (!doc.is_object() || !doc.contains("name") || !doc["name"].is_string()) {
    throw Error(ErrorCode::InvalidConfig, "column description needs a name");
  }
  const std::string name = doc["name"];
  const std::string kind = doc.value("kind", "numeric");
  const bool mutable_cf = doc.value("mutable", true);
  const bool prot = doc.value("protected", false);
  if (kind == "numeric") return numeric(name, mutable_cf, prot);
  if (kind == "categorical") {
    if (!doc.contains("levels") || !doc["levels"].is_array()) {
      throw Error(ErrorCode::InvalidConfig, "categorical column '" + name + "' needs levels", name);
    }
    return categorical(name, doc["levels"].get<std::vector<std::string>>(), mutable_cf, prot);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown column kind '" + kind + "'", name);
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<ColumnSchema> schema, std::string target,
                 std::vector<std::vector<Cell>> rows)
    : schema_(std::move(schema)), target_(std::move(target)) {
  std::set<std::string> names;
  bool found = false;
  for (std::size_t i = 0; i < schema_.size(); ++i) {
    if (!names.insert(schema_[i].name).second) {
      throw Error(ErrorCode::SchemaMismatch, "duplicate column '" + schema_[i].name + "'",
                  schema_[i].name);
    }
    if (schema_[i].name == target_) {
      target_index_ = i;
      found = true;
    }
  }
  if (!found) {
    throw Error(ErrorCode::SchemaMismatch, "target column '" + target_ + "' not in schema", target_);
  }
  if (schema_[target_index_].is_numeric()) {
    throw Error(ErrorCode::SchemaMismatch, "target column must be categorical", target_);
  }
  for (std::size_t r = 0; r < rows.size(); ++r) check_row(rows[r], r);
  rows_ = std::move(rows);
}

std::vector<ColumnSchema> Dataset::feature_columns() const {
  std::vector<ColumnSchema> out;
  for (std::size_t i = 0; i < schema_.size(); ++i) {
    if (i != target_index_) out.push_back(schema_[i]);
  }
  return out;
}

FeatureRow Dataset::features(std::size_t row) const {
  FeatureRow out;
  const auto& values = rows_.at(row);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i != target_index_) out.push_back(values[i]);
  }
  return out;
}

std::size_t Dataset::label(std::size_t row) const {
  const auto& s = std::get<std::string>(rows_.at(row)[target_index_]);
  return static_cast<std::size_t>(schema_[target_index_].level_index(s));
}

std::size_t Dataset::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < schema_.size(); ++i) {
    if (schema_[i].name == name) return i;
  }
  throw Error(ErrorCode::SchemaMismatch, "unknown column '" + std::string(name) + "'",
              std::string(name));
}

void Dataset::check_row(const std::vector<Cell>& values, std::size_t row_index) const {
  if (values.size() != schema_.size()) {
    throw Error(ErrorCode::SchemaMismatch,
                "row " + std::to_string(row_index) + " has " + std::to_string(values.size()) +
                    " cells, schema has " + std::to_string(schema_.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    try {
      schema_[i].check(values[i]);
    } catch (const Error& e) {
      throw Error(ErrorCode::SchemaMismatch, "row " + std::to_string(row_index) + ": " + e.what(),
                  e.detail(), row_index);
    }
  }
}

void Dataset::add_row(std::vector<Cell> values) {
  check_row(values, rows_.size());
  rows_.push_back(std::move(values));
}

void Dataset::update_cell(std::size_t row, std::string_view column, Cell value) {
  if (row >= rows_.size()) {
    throw Error(ErrorCode::IndexOutOfRange,
                "row " + std::to_string(row) + " out of range (" + std::to_string(rows_.size()) +
                    " rows)");
  }
  const std::size_t c = column_index(column);
  schema_[c].check(value);
  rows_[row][c] = std::move(value);
}

void Dataset::delete_row(std::size_t row) {
  if (row >= rows_.size()) {
    throw Error(ErrorCode::IndexOutOfRange,
                "row " + std::to_string(row) + " out of range (" + std::to_string(rows_.size()) +
                    " rows)");
  }
  rows_.erase(rows_.begin() + static_cast<std::ptrdiff_t>(row));
}

std::vector<Cell> Dataset::row_from_json(const Json& doc) const {
  if (!doc.is_object()) throw Error(ErrorCode::SchemaMismatch, "row must be an object");
  std::vector<Cell> out;
  for (const auto& col : schema_) {
    auto it = doc.find(col.name);
    if (it == doc.end()) {
      throw Error(ErrorCode::SchemaMismatch, "missing column '" + col.name + "'", col.name);
    }
    out.push_back(col.from_json(*it));
  }
  for (const auto& [key, _] : doc.items()) {
    bool known = std::any_of(schema_.begin(), schema_.end(),
                             [&](const ColumnSchema& c) { return c.name == key; });
    if (!known) throw Error(ErrorCode::SchemaMismatch, "unknown column '" + key + "'", key);
  }
  return out;
}

Json Dataset::row_to_json(std::size_t row) const {
  Json doc = Json::object();
  const auto& values = rows_.at(row);
  for (std::size_t i = 0; i < schema_.size(); ++i) doc[schema_[i].name] = schema_[i].to_json(values[i]);
  return doc;
}

Json Dataset::to_json() const {
  Json rows = Json::array();
  for (std::size_t r = 0; r < rows_.size(); ++r) rows.push_back(row_to_json(r));
  return rows;
}

Dataset load_dataset_csv(std::istream& in, std::vector<ColumnSchema> schema, std::string target) {
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw Error(ErrorCode::MissingHeader, "CSV input has no header row");
  }
  const auto header = split_csv_line(line);
  if (header.size() != schema.size()) {
    throw Error(ErrorCode::MissingHeader, "CSV header has " + std::to_string(header.size()) +
                                              " columns, schema has " +
                                              std::to_string(schema.size()));
  }
  // column position in the file for each schema column
  std::vector<std::size_t> position(schema.size());
  for (std::size_t s = 0; s < schema.size(); ++s) {
    auto it = std::find(header.begin(), header.end(), schema[s].name);
    if (it == header.end()) {
      throw Error(ErrorCode::MissingHeader, "CSV header lacks column '" + schema[s].name + "'",
                  schema[s].name);
    }
    position[s] = static_cast<std::size_t>(it - header.begin());
  }
  std::vector<std::vector<Cell>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const std::size_t row_index = rows.size();
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::SchemaMismatch,
                  "row " + std::to_string(row_index) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(header.size()),
                  {}, row_index);
    }
    std::vector<Cell> values;
    for (std::size_t s = 0; s < schema.size(); ++s) {
      try {
        values.push_back(schema[s].parse(cells[position[s]]));
      } catch (const Error& e) {
        throw Error(ErrorCode::SchemaMismatch, "row " + std::to_string(row_index) + ": " + e.what(),
                    schema[s].name, row_index);
      }
    }
    rows.push_back(std::move(values));
  }
  return Dataset(std::move(schema), std::move(target), std::move(rows));
}

Dataset load_dataset_csv_file(const std::string& path, std::vector<ColumnSchema> schema,
                              std::string target) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingHeader, "cannot open '" + path + "'", path);
  return load_dataset_csv(in, std::move(schema), std::move(target));
}

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(std::vector<ColumnSchema> features, std::vector<double> means,
                 std::vector<double> stds)
    : features_(std::move(features)), means_(std::move(means)), stds_(std::move(stds)) {
  if (means_.size() != features_.size() || stds_.size() != features_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "encoder statistics do not match the feature list");
  }
  build_groups();
}

void Encoder::build_groups() {
  groups_.clear();
  names_.clear();
  warnings_.clear();
  for (std::size_t i = 0; i < features_.size(); ++i) {
    const auto& col = features_[i];
    Group g{names_.size(), 0};
    if (col.is_numeric()) {
      if (stds_[i] > 0) {
        g.width = 1;
        names_.push_back(col.name);
      } else {
        warnings_.push_back("column '" + col.name + "' has zero variance and was dropped");
      }
    } else {
      g.width = col.levels.size();
      for (const auto& level : col.levels) names_.push_back(col.name + "=" + level);
    }
    groups_.push_back(g);
  }
}

Encoder Encoder::fit(const Dataset& dataset) {
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "cannot encode an empty dataset");
  auto features = dataset.feature_columns();
  std::vector<double> means(features.size(), 0.0);
  std::vector<double> stds(features.size(), 1.0);
  const double n = static_cast<double>(dataset.size());
  for (std::size_t f = 0; f < features.size(); ++f) {
    if (!features[f].is_numeric()) continue;
    double sum = 0;
    for (std::size_t r = 0; r < dataset.size(); ++r) sum += std::get<double>(dataset.features(r)[f]);
    const double mean = sum / n;
    double ss = 0;
    for (std::size_t r = 0; r < dataset.size(); ++r) {
      const double d = std::get<double>(dataset.features(r)[f]) - mean;
      ss += d * d;
    }
    means[f] = mean;
    stds[f] = std::sqrt(ss / n);
  }
  return Encoder(std::move(features), std::move(means), std::move(stds));
}

std::vector<double> Encoder::encode(const FeatureRow& row) const {
  if (row.size() != features_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "row has " + std::to_string(row.size()) +
                                                  " features, encoder expects " +
                                                  std::to_string(features_.size()));
  }
  std::vector<double> out(width(), 0.0);
  for (std::size_t f = 0; f < features_.size(); ++f) {
    const auto& col = features_[f];
    const auto& g = groups_[f];
    if (g.width == 0) continue;
    col.check(row[f]);
    if (col.is_numeric()) {
      out[g.offset] = (std::get<double>(row[f]) - means_[f]) / stds_[f];
    } else {
      out[g.offset + static_cast<std::size_t>(col.level_index(std::get<std::string>(row[f])))] = 1.0;
    }
  }
  return out;
}

FeatureRow Encoder::decode(std::span<const double> encoded) const {
  if (encoded.size() != width()) {
    throw Error(ErrorCode::DimensionMismatch, "encoded row width mismatch");
  }
  FeatureRow row;
  for (std::size_t f = 0; f < features_.size(); ++f) {
    const auto& col = features_[f];
    const auto& g = groups_[f];
    if (col.is_numeric()) {
      row.emplace_back(g.width == 0 ? means_[f] : encoded[g.offset] * stds_[f] + means_[f]);
    } else {
      auto first = encoded.begin() + static_cast<std::ptrdiff_t>(g.offset);
      auto best = std::max_element(first, first + static_cast<std::ptrdiff_t>(g.width));
      row.emplace_back(col.levels[static_cast<std::size_t>(best - first)]);
    }
  }
  return row;
}

std::size_t Encoder::feature_index(std::string_view name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name == name) return i;
  }
  throw Error(ErrorCode::SchemaMismatch, "unknown feature '" + std::string(name) + "'",
              std::string(name));
}

FeatureRow Encoder::row_from_json(const Json& doc) const {
  if (!doc.is_object()) throw Error(ErrorCode::SchemaMismatch, "row must be an object");
  FeatureRow row;
  for (const auto& col : features_) {
    auto it = doc.find(col.name);
    if (it == doc.end()) {
      throw Error(ErrorCode::SchemaMismatch, "missing feature '" + col.name + "'", col.name);
    }
    row.push_back(col.from_json(*it));
  }
  return row;
}

Json Encoder::row_to_json(const FeatureRow& row) const {
  Json doc = Json::object();
  for (std::size_t i = 0; i < features_.size() && i < row.size(); ++i) {
    doc[features_[i].name] = features_[i].to_json(row[i]);
  }
  return doc;
}

Json Encoder::to_json() const {
  Json cols = Json::array();
  for (const auto& c : features_) cols.push_back(c.describe());
  return {{"features", cols}, {"means", means_}, {"stds", stds_}};
}

Encoder Encoder::from_json(const Json& doc) {
  std::vector<ColumnSchema> cols;
  for (const auto& c : doc.at("features")) cols.push_back(ColumnSchema::from_description(c));
  return Encoder(std::move(cols), doc.at("means").get<std::vector<double>>(),
                 doc.at("stds").get<std::vector<double>>());
}

EncodedMatrix encode(const Dataset& dataset) {
  Encoder enc = Encoder::fit(dataset);
  EncodedMatrix out;
  out.matrix.reserve(dataset.size());
  for (std::size_t r = 0; r < dataset.size(); ++r) out.matrix.push_back(enc.encode(dataset.features(r)));
  out.feature_names = enc.feature_names();
  out.means = enc.means();
  out.stds = enc.stds();
  out.warnings = enc.warnings();
  return out;
}

}  // namespace matchlike
