#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "facml/catalog.hpp"
#include "facml/relation.hpp"

namespace facml {

// {"columns": [{"name": ..., "kind": "key|fk|feature|target", "target": ...}]}
Schema schema_from_json(const nlohmann::json& j);
Schema load_schema(const std::filesystem::path& path);

struct CsvOptions {
  char delimiter = ',';
  bool header = true;
  // Feature columns to expand categorical values into indicator columns
  // named "<col>=<value>" (values sorted lexicographically).
  std::vector<std::string> one_hot_columns;
  std::uint64_t page_size_rows = kDefaultPageSizeRows;
};

// Loads a CSV whose header matches the schema's column names in order.
// Parse failures carry the 1-based line number.
Relation import_csv(const std::filesystem::path& path, const Schema& schema, Catalog& catalog,
                    const std::string& name, const CsvOptions& opts = {});

void export_csv(const Relation& rel, const std::filesystem::path& path, char delimiter = ',');

}  // namespace facml
