#pragma once

// Dataset and model building blocks. Their state objects are shared with the
// control blocks and explainers that need to reach them.

#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "matchlike/models.hpp"
#include "matchlike/pipeline.hpp"
#include "matchlike/tabular.hpp"

namespace matchlike {

/// State that a logic bomb Reset restores.
class Resettable {
 public:
  virtual ~Resettable() = default;
  virtual void restore_snapshot() = 0;
};

/// Mutations happen under the pipeline's exclusive lock, so no lock of its own.
struct DatasetState {
  explicit DatasetState(Dataset d) : data(std::move(d)) {}
  Dataset data;
};

class ModelState : public Resettable {
 public:
  ModelState(ModelKind kind, TrainingConfig config, std::shared_ptr<DatasetState> source);
  /// Wraps an already trained model; retrain needs a source.
  ModelState(Model model, TrainingConfig config, std::shared_ptr<DatasetState> source = nullptr);

  std::shared_ptr<const Model> current() const;
  std::shared_ptr<const Model> snapshot() const;

  /// Trains on the source dataset and takes a fresh snapshot.
  void retrain();
  /// Replaces the live parameters without touching the snapshot.
  void replace(Model model);
  void restore_snapshot() override;

  ModelKind kind() const { return kind_; }
  const TrainingConfig& config() const { return config_; }
  const std::shared_ptr<DatasetState>& source() const { return source_; }

 private:
  ModelKind kind_;
  TrainingConfig config_;
  std::shared_ptr<DatasetState> source_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Model> current_;
  std::shared_ptr<const Model> snapshot_;
};

/// {label, probability, probabilities, classes}; probability is that of the
/// predicted label.
Json decision_record(const std::vector<std::string>& classes, const std::vector<double>& proba);

/// Validator for a `row` parameter: every feature present and valid.
std::function<void(const Json&)> row_validator(std::vector<ColumnSchema> features);

/// Methods: get_rows, schema (Read); add_row (Create); edit, edit_batch
/// (Update); delete_row (Delete).
BlockHandle make_dataset_block(Registry& registry, std::string display_name,
                               std::shared_ptr<DatasetState> state);

/// Methods: predict (Predict); retrain (Update); parameters (Read); tree_dump
/// (Read, tree models only).
BlockHandle make_model_block(Registry& registry, std::string display_name,
                             std::shared_ptr<ModelState> state);

}  // namespace matchlike
