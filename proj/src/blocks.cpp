#include "matchlike/blocks.hpp"

#include <algorithm>

namespace matchlike {

ModelState::ModelState(ModelKind kind, TrainingConfig config, std::shared_ptr<DatasetState> source)
    : kind_(kind), config_(config), source_(std::move(source)) {
  retrain();
}

ModelState::ModelState(Model model, TrainingConfig config, std::shared_ptr<DatasetState> source)
    : kind_(model.kind), config_(config), source_(std::move(source)) {
  current_ = std::make_shared<const Model>(std::move(model));
  snapshot_ = current_;
}

std::shared_ptr<const Model> ModelState::current() const {
  std::lock_guard lock(mutex_);
  return current_;
}

std::shared_ptr<const Model> ModelState::snapshot() const {
  std::lock_guard lock(mutex_);
  return snapshot_;
}

void ModelState::retrain() {
  if (!source_) throw Error(ErrorCode::EmptyDataset, "model has no training dataset");
  auto trained = std::make_shared<const Model>(train(kind_, source_->data, config_));
  std::lock_guard lock(mutex_);
  current_ = trained;
  snapshot_ = trained;
}

void ModelState::replace(Model model) {
  auto next = std::make_shared<const Model>(std::move(model));
  std::lock_guard lock(mutex_);
  current_ = std::move(next);
}

void ModelState::restore_snapshot() {
  std::lock_guard lock(mutex_);
  current_ = snapshot_;
}

Json decision_record(const std::vector<std::string>& classes, const std::vector<double>& proba) {
  const auto best = static_cast<std::size_t>(
      std::max_element(proba.begin(), proba.end()) - proba.begin());
  return {{"label", classes.at(best)},
          {"probability", proba[best]},
          {"probabilities", proba},
          {"classes", classes}};
}

std::function<void(const Json&)> row_validator(std::vector<ColumnSchema> features) {
  return [features = std::move(features)](const Json& row) {
    for (const auto& col : features) {
      auto it = row.find(col.name);
      if (it == row.end()) {
        throw Error(ErrorCode::TypeMismatch, "row is missing field '" + col.name + "'", col.name);
      }
      try {
        col.from_json(*it);
      } catch (const Error& e) {
        throw Error(ErrorCode::TypeMismatch, e.what(), col.name);
      }
    }
  };
}

namespace {

Param row_param(std::string name, std::vector<ColumnSchema> features, std::string description) {
  Param p{std::move(name), SemanticType::Row};
  p.description = std::move(description);
  for (const auto& col : features) p.fields[col.name] = col.describe();
  p.validator = row_validator(std::move(features));
  return p;
}

std::size_t row_index(const Json& v) { return static_cast<std::size_t>(v.get<double>()); }

void apply_edit(Dataset& data, std::size_t row, const Json& values) {
  if (row >= data.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "row " + std::to_string(row) + " out of range (" +
                                                std::to_string(data.size()) + " rows)");
  }
  // Validate every cell before touching the row.
  std::vector<std::pair<std::size_t, Cell>> cells;
  for (const auto& [column, value] : values.items()) {
    const std::size_t c = data.column_index(column);
    cells.emplace_back(c, data.schema()[c].from_json(value));
  }
  for (auto& [c, cell] : cells) data.update_cell(row, data.schema()[c].name, std::move(cell));
}

}  // namespace

BlockHandle make_dataset_block(Registry& registry, std::string display_name,
                               std::shared_ptr<DatasetState> state) {
  std::vector<Method> methods;
  auto s = state;

  methods.push_back({{"get_rows", MethodRole::Read, {}, SemanticType::Table, "list all rows"},
                     [s](const Json&, CallContext&) {
                       return TypedValue{DataType::Table, s->data.to_json()};
                     }});

  methods.push_back({{"schema", MethodRole::Read, {}, SemanticType::Table,
                      "column schema and target"},
                     [s](const Json&, CallContext&) {
                       Json cols = Json::array();
                       for (const auto& c : s->data.schema()) cols.push_back(c.describe());
                       return TypedValue::structure(
                           {{"columns", cols}, {"target", s->data.target()}, {"rows", s->data.size()}});
                     }});

  Param values{"values", SemanticType::Row};
  values.description = "complete row including the target";
  methods.push_back({{"add_row", MethodRole::Create, {values}, SemanticType::Table, "append a row"},
                     [s](const Json& args, CallContext&) {
                       s->data.add_row(s->data.row_from_json(args["values"]));
                       return TypedValue::structure({{"rows", s->data.size()}});
                     }});

  Param row{"row", SemanticType::Integer};
  row.description = "zero-based row index";
  Param partial{"values", SemanticType::Row};
  partial.description = "columns to overwrite";
  methods.push_back({{"edit", MethodRole::Update, {row, partial}, SemanticType::Table,
                      "overwrite cells of one row"},
                     [s](const Json& args, CallContext&) {
                       apply_edit(s->data, row_index(args["row"]), args["values"]);
                       return TypedValue::structure({{"rows", s->data.size()}});
                     }});

  Param edits{"edits", SemanticType::Table};
  edits.description = "list of {row, values} edits applied in order";
  methods.push_back({{"edit_batch", MethodRole::Update, {edits}, SemanticType::Table,
                      "overwrite cells of several rows"},
                     [s](const Json& args, CallContext&) {
                       // All-or-nothing: work on a copy.
                       Dataset copy = s->data;
                       for (const auto& e : args["edits"]) {
                         if (!e.is_object() || !e.contains("row") || !e.contains("values") ||
                             !e["row"].is_number() || !e["values"].is_object()) {
                           throw Error(ErrorCode::TypeMismatch, "each edit needs row and values",
                                       "edits");
                         }
                         apply_edit(copy, row_index(e["row"]), e["values"]);
                       }
                       s->data = std::move(copy);
                       return TypedValue::structure({{"rows", s->data.size()}});
                     }});

  methods.push_back({{"delete_row", MethodRole::Delete, {row}, SemanticType::Table,
                      "remove one row"},
                     [s](const Json& args, CallContext&) {
                       s->data.delete_row(row_index(args["row"]));
                       return TypedValue::structure({{"rows", s->data.size()}});
                     }});

  return registry.register_block(std::move(display_name), "dataset", std::move(methods),
                                 [s] { return s->data.to_json(); });
}

BlockHandle make_model_block(Registry& registry, std::string display_name,
                             std::shared_ptr<ModelState> state) {
  std::vector<Method> methods;
  auto s = state;
  const auto model = s->current();

  methods.push_back(
      {{"predict", MethodRole::Predict,
        {row_param("row", model->encoder.features(), "feature values")}, SemanticType::Table,
        "class probabilities and predicted label"},
       [s](const Json& args, CallContext&) {
         const auto m = s->current();
         const auto proba = predict_proba_row(*m, m->encoder.row_from_json(args["row"]));
         return TypedValue::structure(decision_record(m->classes, proba));
       }});

  methods.push_back({{"retrain", MethodRole::Update, {}, SemanticType::Table,
                      "retrain on the current dataset"},
                     [s](const Json&, CallContext&) {
                       s->retrain();
                       return TypedValue::structure({{"retrained", true}});
                     }});

  methods.push_back({{"parameters", MethodRole::Read, {}, SemanticType::Table,
                      "trained parameters"},
                     [s](const Json&, CallContext&) {
                       return TypedValue::structure(s->current()->to_json());
                     }});

  if (model->kind == ModelKind::Tree) {
    methods.push_back({{"tree_dump", MethodRole::Read, {}, SemanticType::Table,
                        "decision tree structure"},
                       [s](const Json&, CallContext&) {
                         return TypedValue::structure(tree_structure(*s->current()));
                       }});
  }

  return registry.register_block(std::move(display_name), "model", std::move(methods),
                                 [s] { return s->current()->to_json(); });
}

}  // namespace matchlike
