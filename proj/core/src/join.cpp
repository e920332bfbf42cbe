#include "facml/join.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "facml/errors.hpp"

namespace facml {

void JoinSpec::validate() const {
  if (tables.empty()) throw SchemaError("join needs at least one attribute table");
  if (tables.size() != fk_columns.size())
    throw SchemaError("join has " + std::to_string(tables.size()) + " tables but " +
                      std::to_string(fk_columns.size()) + " fk columns");
  if (block_size_pages < 1) throw SchemaError("block_size_pages must be >= 1");
  std::unordered_set<std::string> seen;
  for (const auto& t : tables)
    if (!seen.insert(t).second) throw SchemaError("attribute table '" + t + "' referenced twice");
  std::unordered_set<std::string> fks(fk_columns.begin(), fk_columns.end());
  if (fks.size() != fk_columns.size()) throw SchemaError("duplicate fk column in join spec");
}

Batch GroupedProbe::group_batch(std::size_t g) const {
  const ProbeGroup& pg = groups.at(g);
  Batch out;
  out.row_ordinals.assign(s_rows.row_ordinals.begin() + pg.offset,
                          s_rows.row_ordinals.begin() + pg.offset + pg.count);
  out.keys.assign(s_rows.keys.begin() + pg.offset, s_rows.keys.begin() + pg.offset + pg.count);
  out.fks.resize(s_rows.fks.size());
  for (std::size_t c = 0; c < s_rows.fks.size(); ++c)
    out.fks[c].assign(s_rows.fks[c].begin() + pg.offset, s_rows.fks[c].begin() + pg.offset + pg.count);
  if (!s_rows.targets.empty())
    out.targets.assign(s_rows.targets.begin() + pg.offset,
                       s_rows.targets.begin() + pg.offset + pg.count);
  out.features = s_rows.features.middleRows(static_cast<Eigen::Index>(pg.offset),
                                            static_cast<Eigen::Index>(pg.count));
  return out;
}

void probe_matching(const Relation& s, const Batch& r_batch, const std::string& fk_column,
                    GroupedProbe& out) {
  const FkIndex& idx = s.fk_index(fk_column);  // throws IndexRequired when absent
  const std::size_t fk_ord = s.schema().fk_ordinal(fk_column);

  out.groups.clear();
  out.groups.reserve(r_batch.size());
  std::size_t total = 0;
  static const std::vector<std::uint32_t> kEmpty;
  std::vector<const std::vector<std::uint32_t>*> lists(r_batch.size(), &kEmpty);
  for (std::size_t r = 0; r < r_batch.size(); ++r) {
    auto it = idx.find(r_batch.keys[r]);
    if (it != idx.end()) lists[r] = &it->second;
    out.groups.push_back({r, total, lists[r]->size()});
    total += lists[r]->size();
  }

  Batch& g = out.s_rows;
  const std::size_t n_fk = s.schema().fk_count();
  const bool has_target = s.schema().has_target();
  g.row_ordinals.resize(total);
  g.keys.resize(total);
  g.fks.assign(n_fk, std::vector<std::uint64_t>(total));
  if (has_target)
    g.targets.resize(total);
  else
    g.targets.clear();
  g.features.resize(static_cast<Eigen::Index>(total),
                    static_cast<Eigen::Index>(s.schema().feature_count()));

  // Dense probes (a block-nested-loop pass where this batch matches a
  // sizable share of S) scan S sequentially and bin rows into group-major
  // slots; sparse probes gather page-coalesced instead.
  if (4 * total >= s.row_count() && total > 0) {
    std::unordered_map<std::uint64_t, std::uint32_t> group_of_key;
    group_of_key.reserve(r_batch.size());
    for (std::size_t r = 0; r < r_batch.size(); ++r)
      group_of_key.emplace(r_batch.keys[r], static_cast<std::uint32_t>(r));
    std::vector<std::size_t> cursor(out.groups.size());
    for (std::size_t i = 0; i < out.groups.size(); ++i) cursor[i] = out.groups[i].offset;

    Batch blk;
    auto cur = s.scan();
    while (cur.next(blk)) {
      for (std::size_t r = 0; r < blk.size(); ++r) {
        auto it = group_of_key.find(blk.fks[fk_ord][r]);
        if (it == group_of_key.end()) continue;
        const std::size_t d = cursor[it->second]++;
        g.row_ordinals[d] = blk.row_ordinals[r];
        g.keys[d] = blk.keys[r];
        for (std::size_t c = 0; c < n_fk; ++c) g.fks[c][d] = blk.fks[c][r];
        if (has_target) g.targets[d] = blk.targets[r];
        g.features.row(static_cast<Eigen::Index>(d)) = blk.features.row(static_cast<Eigen::Index>(r));
      }
    }
    return;
  }

  // Gather rows page-coalesced (globally sorted ordinals), then scatter
  // into group-major order.
  std::vector<std::uint64_t> sorted(total);
  std::vector<std::uint32_t> dest(total);
  {
    std::size_t pos = 0;
    for (std::size_t r = 0; r < r_batch.size(); ++r)
      for (std::uint32_t ord : *lists[r]) {
        sorted[pos] = ord;
        dest[pos] = static_cast<std::uint32_t>(pos);
        ++pos;
      }
    std::vector<std::uint32_t> perm(total);
    std::iota(perm.begin(), perm.end(), 0);
    std::sort(perm.begin(), perm.end(),
              [&](std::uint32_t a, std::uint32_t b) { return sorted[a] < sorted[b]; });
    std::vector<std::uint64_t> s2(total);
    for (std::size_t i = 0; i < total; ++i) {
      s2[i] = sorted[perm[i]];
      dest[i] = perm[i];
    }
    sorted.swap(s2);
  }

  Batch scratch;
  s.read_rows(sorted, scratch);

  for (std::size_t i = 0; i < total; ++i) {
    const std::uint32_t d = dest[i];
    g.row_ordinals[d] = scratch.row_ordinals[i];
    g.keys[d] = scratch.keys[i];
    for (std::size_t c = 0; c < n_fk; ++c) g.fks[c][d] = scratch.fks[c][i];
    if (has_target) g.targets[d] = scratch.targets[i];
    g.features.row(d) = scratch.features.row(static_cast<Eigen::Index>(i));
  }
}

GroupedProbe probe_matching(const Relation& s, const Batch& r_batch, const std::string& fk_column) {
  GroupedProbe out;
  probe_matching(s, r_batch, fk_column, out);
  return out;
}

Batch read_all(const Relation& rel) {
  Batch all;
  Batch block;
  auto cur = rel.scan();
  bool first = true;
  while (cur.next(block)) {
    if (first) {
      all = std::move(block);
      block = Batch{};
      first = false;
      continue;
    }
    const std::size_t base = all.size();
    const std::size_t n = block.size();
    all.row_ordinals.insert(all.row_ordinals.end(), block.row_ordinals.begin(), block.row_ordinals.end());
    all.keys.insert(all.keys.end(), block.keys.begin(), block.keys.end());
    for (std::size_t c = 0; c < all.fks.size(); ++c)
      all.fks[c].insert(all.fks[c].end(), block.fks[c].begin(), block.fks[c].end());
    if (!all.targets.empty())
      all.targets.insert(all.targets.end(), block.targets.begin(), block.targets.end());
    all.features.conservativeResize(static_cast<Eigen::Index>(base + n), Eigen::NoChange);
    all.features.bottomRows(static_cast<Eigen::Index>(n)) = block.features;
  }
  if (first) {
    // empty relation: shape the batch anyway
    all.features.resize(0, static_cast<Eigen::Index>(rel.schema().feature_count()));
    all.fks.assign(rel.schema().fk_count(), {});
  }
  return all;
}

AttributeTable AttributeTable::load(const Relation& rel) {
  AttributeTable t;
  Batch all = read_all(rel);
  t.features = std::move(all.features);
  t.keys = std::move(all.keys);
  t.row_of_key.reserve(t.keys.size());
  for (std::size_t i = 0; i < t.keys.size(); ++i)
    t.row_of_key.emplace(t.keys[i], static_cast<std::uint32_t>(i));
  return t;
}

StarJoin StarJoin::open(const JoinSpec& spec, Catalog& catalog) {
  spec.validate();
  StarJoin j;
  j.s = catalog.get(spec.s);
  j.table_names = spec.tables;
  j.fk_columns = spec.fk_columns;
  j.block_size_pages = spec.block_size_pages;
  for (const auto& name : spec.tables) j.tables.push_back(catalog.get(name));
  for (const auto& fk : spec.fk_columns) {
    j.s.schema().fk_ordinal(fk);  // throws SchemaError when missing
    if (!j.s.has_fk_index(fk)) j.s.build_fk_index(fk);
  }
  for (auto& t : j.tables)
    if (!t.has_key_index()) t.build_key_index();
  return j;
}

std::size_t StarJoin::joined_width() const {
  std::size_t w = d_s();
  for (std::size_t m = 0; m < tables.size(); ++m) w += d_r(m);
  return w;
}

std::vector<std::size_t> StarJoin::partition() const {
  std::vector<std::size_t> p{d_s()};
  for (std::size_t m = 0; m < tables.size(); ++m) p.push_back(d_r(m));
  return p;
}

namespace {

Schema joined_schema(const StarJoin& join) {
  const Schema& ss = join.s.schema();
  std::vector<Column> cols;
  cols.push_back(Column::key(ss.columns()[ss.key_column()].name));
  if (ss.has_target()) cols.push_back(Column::target(ss.columns()[*ss.target_column()].name));
  for (std::size_t f : ss.feature_columns()) cols.push_back(Column::feature(ss.columns()[f].name));
  for (std::size_t m = 0; m < join.tables.size(); ++m) {
    const Schema& rs = join.tables[m].schema();
    const std::string prefix =
        m < join.table_names.size() ? join.table_names[m] : "r" + std::to_string(m + 1);
    for (std::size_t f : rs.feature_columns())
      cols.push_back(Column::feature(prefix + "." + rs.columns()[f].name));
  }
  return Schema(std::move(cols));
}

void fill_joined(const StarJoin& join, Relation& t) {
  std::vector<AttributeTable> mem;
  for (const auto& rel : join.tables) mem.push_back(AttributeTable::load(rel));
  std::vector<std::size_t> fk_ords;
  for (const auto& fk : join.fk_columns) fk_ords.push_back(join.s.schema().fk_ordinal(fk));

  const std::size_t d_s = join.d_s();
  std::size_t width = d_s;
  for (const auto& at : mem) width += static_cast<std::size_t>(at.features.cols());

  Batch in, out;
  auto cur = join.s.scan(join.block_size_pages);
  while (cur.next(in)) {
    const std::size_t n = in.size();
    out.row_ordinals = in.row_ordinals;
    out.keys = in.keys;
    out.fks.clear();
    out.targets = in.targets;
    out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(width));
    for (std::size_t r = 0; r < n; ++r) {
      out.features.row(r).head(static_cast<Eigen::Index>(d_s)) = in.features.row(r);
      std::size_t off = d_s;
      for (std::size_t m = 0; m < mem.size(); ++m) {
        const std::uint64_t fk = in.fks[fk_ords[m]][r];
        auto it = mem[m].row_of_key.find(fk);
        if (it == mem[m].row_of_key.end())
          throw ReferentialViolation("S row " + std::to_string(in.row_ordinals[r]) + " FK '" +
                                     join.fk_columns[m] + "' = " + std::to_string(fk) +
                                     " has no match in attribute table " + std::to_string(m + 1));
        const auto w = static_cast<std::size_t>(mem[m].features.cols());
        out.features.row(r).segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(w)) =
            mem[m].features.row(it->second);
        off += w;
      }
    }
    t.append(out);
  }
}

}  // namespace

Relation materialize_join(const JoinSpec& spec, Catalog& catalog, const std::string& out_name) {
  StarJoin join = StarJoin::open(spec, catalog);
  Relation t = catalog.create_relation(out_name, joined_schema(join), join.s.page_size_rows());
  fill_joined(join, t);
  return t;
}

Relation materialize_star_to(const StarJoin& join, const std::filesystem::path& path) {
  Relation t = Relation::create(joined_schema(join), path, join.s.page_size_rows());
  fill_joined(join, t);
  return t;
}

}  // namespace facml
