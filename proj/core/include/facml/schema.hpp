#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace facml {

enum class ColumnKind : std::uint8_t {
  Key = 0,
  ForeignKey = 1,
  Feature = 2,
  Target = 3,
};

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::Feature;
  std::string fk_target;  // referenced relation name; only for ForeignKey

  static Column key(std::string name) { return {std::move(name), ColumnKind::Key, {}}; }
  static Column foreign_key(std::string name, std::string target) {
    return {std::move(name), ColumnKind::ForeignKey, std::move(target)};
  }
  static Column feature(std::string name) { return {std::move(name), ColumnKind::Feature, {}}; }
  static Column target(std::string name) { return {std::move(name), ColumnKind::Target, {}}; }

  bool operator==(const Column&) const = default;
};

// Ordered column list for one relation. Key and foreign-key columns hold
// 64-bit unsigned integers; feature and target columns hold 64-bit floats.
class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<Column> columns);

  // Throws SchemaError unless there is exactly one key column and at most
  // one target column.
  void validate() const;

  const std::vector<Column>& columns() const { return columns_; }
  std::size_t column_count() const { return columns_.size(); }

  std::size_t key_column() const { return key_col_; }
  std::optional<std::size_t> target_column() const { return target_col_; }
  const std::vector<std::size_t>& feature_columns() const { return feature_cols_; }
  const std::vector<std::size_t>& fk_columns() const { return fk_cols_; }

  std::size_t feature_count() const { return feature_cols_.size(); }
  std::size_t fk_count() const { return fk_cols_.size(); }
  bool has_target() const { return target_col_.has_value(); }

  // Index into fk_columns() for a named column; SchemaError if absent or
  // not a foreign key.
  std::size_t fk_ordinal(const std::string& column_name) const;
  std::optional<std::size_t> find_column(const std::string& name) const;

  bool operator==(const Schema& o) const { return columns_ == o.columns_; }

 private:
  std::vector<Column> columns_;
  std::size_t key_col_ = 0;
  std::optional<std::size_t> target_col_;
  std::vector<std::size_t> feature_cols_;
  std::vector<std::size_t> fk_cols_;
};

}  // namespace facml
