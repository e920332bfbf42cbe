#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "facml/catalog.hpp"
#include "facml/relation.hpp"

namespace facml {

// One primary/foreign-key star join: S plus attribute tables R_1..R_q,
// where S.fk_columns[i] references tables[i]'s key.
struct JoinSpec {
  std::string s;
  std::vector<std::string> tables;
  std::vector<std::string> fk_columns;
  std::uint64_t block_size_pages = kDefaultBlockSizePages;

  std::size_t q() const { return tables.size(); }
  void validate() const;
};

struct ProbeGroup {
  std::size_t r_row;   // row index into the probed R batch
  std::size_t offset;  // first row of this group in s_rows
  std::size_t count;
};

// Result of probing S with one batch of R rows. The matching S rows are
// laid out group-major: group g occupies s_rows[offset, offset+count),
// rows ascending by S ordinal within a group; groups follow R batch order.
struct GroupedProbe {
  Batch s_rows;
  std::vector<ProbeGroup> groups;

  // Copies one group's rows into a standalone Batch.
  Batch group_batch(std::size_t g) const;
};

// For each row of r_batch, fetches exactly the S rows whose FK equals that
// row's key. Requires s to have an fk_index on fk_column. R rows nobody
// references yield empty groups.
GroupedProbe probe_matching(const Relation& s, const Batch& r_batch, const std::string& fk_column);
void probe_matching(const Relation& s, const Batch& r_batch, const std::string& fk_column,
                    GroupedProbe& out);

// Joins S with its attribute tables and persists T under `out_name`:
// one row per S row in S storage order, features [X_S | X_R1 | ... | X_Rq],
// S's target carried through. Dangling FK -> ReferentialViolation.
Relation materialize_join(const JoinSpec& spec, Catalog& catalog, const std::string& out_name);

// Whole relation decoded into memory (used for small attribute tables).
Batch read_all(const Relation& rel);

// In-memory copy of one attribute table with key lookup, ordinal-aligned.
struct AttributeTable {
  FeatureMatrix features;  // n_rows x d
  std::vector<std::uint64_t> keys;
  std::unordered_map<std::uint64_t, std::uint32_t> row_of_key;

  static AttributeTable load(const Relation& rel);
};

// Opened handles for one star join, with the indexes the strategies need
// (fk indexes on S; key indexes on attribute tables).
struct StarJoin {
  Relation s;
  std::vector<Relation> tables;
  std::vector<std::string> table_names;  // for T column prefixes
  std::vector<std::string> fk_columns;
  std::uint64_t block_size_pages = kDefaultBlockSizePages;

  static StarJoin open(const JoinSpec& spec, Catalog& catalog);

  std::size_t q() const { return tables.size(); }
  std::size_t d_s() const { return s.schema().feature_count(); }
  std::size_t d_r(std::size_t m) const { return tables[m].schema().feature_count(); }
  // Feature width of the logical join: d_S + sum of d_{R_i}.
  std::size_t joined_width() const;
  // [d_S, d_R1, ..., d_Rq]
  std::vector<std::size_t> partition() const;
};

// Same as materialize_join, writing T to an explicit path without touching
// the catalog.
Relation materialize_star_to(const StarJoin& join, const std::filesystem::path& path);

}  // namespace facml
