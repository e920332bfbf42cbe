#include "facml/catalog.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "facml/errors.hpp"

namespace facml {

namespace {
constexpr const char* kManifest = "manifest.json";
}

Catalog Catalog::create(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  if (std::filesystem::exists(dir / kManifest))
    throw AlreadyExists((dir / kManifest).string());
  Catalog c;
  c.dir_ = dir;
  c.save();
  return c;
}

Catalog Catalog::open(const std::filesystem::path& dir) {
  Catalog c;
  c.dir_ = dir;
  c.load();
  return c;
}

Catalog Catalog::open_or_create(const std::filesystem::path& dir) {
  if (std::filesystem::exists(dir / kManifest)) return open(dir);
  return create(dir);
}

bool Catalog::contains(const std::string& name) const { return entries_.count(name) > 0; }

std::vector<std::string> Catalog::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

void Catalog::add(const std::string& name, const std::filesystem::path& path) {
  if (contains(name)) throw AlreadyExists("relation '" + name + "' in catalog");
  entries_[name] = path;
  save();
}

Relation Catalog::create_relation(const std::string& name, const Schema& schema,
                                  std::uint64_t page_size_rows) {
  if (contains(name)) throw AlreadyExists("relation '" + name + "' in catalog");
  auto path = dir_ / (name + ".rel");
  Relation rel = Relation::create(schema, path, page_size_rows);
  entries_[name] = path;
  open_[name] = rel;
  save();
  return rel;
}

Relation Catalog::get(const std::string& name) {
  auto it = open_.find(name);
  if (it != open_.end()) return it->second;
  auto e = entries_.find(name);
  if (e == entries_.end()) throw StorageError("relation '" + name + "' not in catalog");
  Relation rel = Relation::open(e->second);
  open_[name] = rel;
  return rel;
}

void Catalog::remove(const std::string& name) {
  auto e = entries_.find(name);
  if (e == entries_.end()) return;
  open_.erase(name);
  std::error_code ec;
  std::filesystem::remove(e->second, ec);
  entries_.erase(e);
  save();
}

void Catalog::save() const {
  nlohmann::json j;
  j["relations"] = nlohmann::json::object();
  for (const auto& [name, path] : entries_) j["relations"][name] = path.string();
  std::ofstream out(dir_ / kManifest);
  if (!out) throw StorageError("cannot write manifest in " + dir_.string());
  out << j.dump(2) << "\n";
}

void Catalog::load() {
  std::ifstream in(dir_ / kManifest);
  if (!in) throw StorageError("no catalog manifest in " + dir_.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest: " + std::string(e.what()));
  }
  for (const auto& [name, path] : j.at("relations").items())
    entries_[name] = std::filesystem::path(path.get<std::string>());
}

}  // namespace facml
