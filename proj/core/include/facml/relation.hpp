#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "facml/schema.hpp"

namespace facml {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Decoded slice of a relation. All per-row containers share one length;
// `features` is rows x schema.feature_count().
struct Batch {
  std::vector<std::uint64_t> row_ordinals;
  std::vector<std::uint64_t> keys;
  std::vector<std::vector<std::uint64_t>> fks;  // one vector per FK column, schema order
  std::vector<double> targets;                  // empty unless schema has a target
  FeatureMatrix features;

  std::size_t size() const { return keys.size(); }
};

using FkIndex = std::unordered_map<std::uint64_t, std::vector<std::uint32_t>>;
using KeyIndex = std::unordered_map<std::uint64_t, std::uint32_t>;

inline constexpr std::uint64_t kDefaultPageSizeRows = 8192;
inline constexpr std::uint64_t kDefaultBlockSizePages = 16;

class BatchCursor;

// Handle to one on-disk paged relation. Fixed-width rows (8 bytes per
// column, little-endian: u64 for key/FK, f64 for feature/target) grouped
// into logical pages of `page_size_rows` rows. Handles are cheap to copy;
// after index build they are safe for concurrent readers. Writes are
// single-writer.
class Relation {
 public:
  Relation() = default;

  static Relation create(const Schema& schema, const std::filesystem::path& path,
                         std::uint64_t page_size_rows = kDefaultPageSizeRows);
  static Relation open(const std::filesystem::path& path);

  bool valid() const { return impl_ != nullptr; }
  const Schema& schema() const;
  const std::filesystem::path& path() const;
  std::uint64_t row_count() const;
  std::uint64_t page_size_rows() const;
  std::uint64_t page_count() const;

  // Appends rows; keys must be fresh. Invalidates any built index.
  void append(const Batch& batch);

  // Streams the relation in storage order, at most `block_size_pages`
  // pages per batch.
  BatchCursor scan(std::uint64_t block_size_pages = kDefaultBlockSizePages) const;

  // Reads the given rows (ascending ordinals required) page-coalesced:
  // each distinct page is charged one logical read.
  void read_rows(std::span<const std::uint64_t> sorted_ordinals, Batch& out) const;
  Batch read_rows(std::span<const std::uint64_t> sorted_ordinals) const;

  void build_key_index();
  void build_fk_index(const std::string& fk_column);
  bool has_key_index() const;
  bool has_fk_index(const std::string& fk_column) const;
  const KeyIndex& key_index() const;
  const FkIndex& fk_index(const std::string& fk_column) const;

 private:
  struct Impl;
  explicit Relation(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;

  friend class BatchCursor;
};

class BatchCursor {
 public:
  // Fills `out` with the next block; returns false at end of relation.
  bool next(Batch& out);

 private:
  BatchCursor(std::shared_ptr<const Relation::Impl> impl, std::uint64_t block_size_pages);
  std::shared_ptr<const Relation::Impl> impl_;
  std::uint64_t block_size_pages_;
  std::uint64_t next_page_ = 0;

  friend class Relation;
};

}  // namespace facml
