#include "facml/schema.hpp"

#include "facml/errors.hpp"

namespace facml {

Schema::Schema(std::vector<Column> columns) : columns_(std::move(columns)) {
  std::size_t keys = 0;
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    const Column& c = columns_[i];
    switch (c.kind) {
      case ColumnKind::Key:
        key_col_ = i;
        ++keys;
        break;
      case ColumnKind::ForeignKey:
        fk_cols_.push_back(i);
        break;
      case ColumnKind::Feature:
        feature_cols_.push_back(i);
        break;
      case ColumnKind::Target:
        target_col_ = i;
        break;
    }
  }
  if (keys != 1) key_col_ = columns_.size();  // validate() reports
}

void Schema::validate() const {
  std::size_t keys = 0, targets = 0;
  for (const Column& c : columns_) {
    if (c.name.empty()) throw SchemaError("column with empty name");
    if (c.kind == ColumnKind::Key) ++keys;
    if (c.kind == ColumnKind::Target) ++targets;
    if (c.kind == ColumnKind::ForeignKey && c.fk_target.empty())
      throw SchemaError("foreign key column '" + c.name + "' names no target relation");
  }
  if (keys != 1) throw SchemaError("relation must have exactly one key column, got " + std::to_string(keys));
  if (targets > 1) throw SchemaError("relation may have at most one target column");
  for (std::size_t i = 0; i < columns_.size(); ++i)
    for (std::size_t j = i + 1; j < columns_.size(); ++j)
      if (columns_[i].name == columns_[j].name)
        throw SchemaError("duplicate column name '" + columns_[i].name + "'");
}

std::size_t Schema::fk_ordinal(const std::string& column_name) const {
  for (std::size_t i = 0; i < fk_cols_.size(); ++i)
    if (columns_[fk_cols_[i]].name == column_name) return i;
  throw SchemaError("no foreign key column named '" + column_name + "'");
}

std::optional<std::size_t> Schema::find_column(const std::string& name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i].name == name) return i;
  return std::nullopt;
}

}  // namespace facml
