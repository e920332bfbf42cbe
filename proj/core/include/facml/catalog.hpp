#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "facml/relation.hpp"

namespace facml {

// A catalog is a directory of relation files plus a JSON manifest mapping
// relation name -> file path (schemas live in the file headers).
class Catalog {
 public:
  static Catalog create(const std::filesystem::path& dir);
  static Catalog open(const std::filesystem::path& dir);
  // Opens the catalog if the manifest exists, otherwise creates it.
  static Catalog open_or_create(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }

  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;

  // Registers an existing relation file under `name` and saves the manifest.
  void add(const std::string& name, const std::filesystem::path& path);

  // Creates a new relation file `<dir>/<name>.rel` and registers it.
  Relation create_relation(const std::string& name, const Schema& schema,
                           std::uint64_t page_size_rows = kDefaultPageSizeRows);

  // Opens (and memoizes) a relation by name.
  Relation get(const std::string& name);

  void remove(const std::string& name);

 private:
  void save() const;
  void load();

  std::filesystem::path dir_;
  std::map<std::string, std::filesystem::path> entries_;
  std::map<std::string, Relation> open_;
};

}  // namespace facml
