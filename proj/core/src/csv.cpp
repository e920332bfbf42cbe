#include "facml/csv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "facml/errors.hpp"

namespace facml {

Schema schema_from_json(const nlohmann::json& j) {
  std::vector<Column> cols;
  for (const auto& cj : j.at("columns")) {
    const std::string name = cj.at("name").get<std::string>();
    const std::string kind = cj.at("kind").get<std::string>();
    if (kind == "key")
      cols.push_back(Column::key(name));
    else if (kind == "fk" || kind == "foreign_key")
      cols.push_back(Column::foreign_key(name, cj.at("target").get<std::string>()));
    else if (kind == "feature")
      cols.push_back(Column::feature(name));
    else if (kind == "target")
      cols.push_back(Column::target(name));
    else
      throw FormatError("unknown column kind '" + kind + "'");
  }
  Schema s{std::move(cols)};
  s.validate();
  return s;
}

Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return schema_from_json(j);
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == delim) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.erase(f.begin());
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.pop_back();
  }
  return out;
}

std::uint64_t parse_u64(const std::string& s, std::size_t line_no, const std::string& col) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw FormatError("line " + std::to_string(line_no) + ": column '" + col +
                      "' expects an unsigned integer, got '" + s + "'");
  return v;
}

double parse_f64(const std::string& s, std::size_t line_no, const std::string& col) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw FormatError("line " + std::to_string(line_no) + ": column '" + col +
                      "' expects a number, got '" + s + "'");
  return v;
}

}  // namespace

Relation import_csv(const std::filesystem::path& path, const Schema& schema, Catalog& catalog,
                    const std::string& name, const CsvOptions& opts) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw StorageError("cannot open " + path.string());

  const auto& cols = schema.columns();
  std::set<std::size_t> one_hot;
  for (const auto& cname : opts.one_hot_columns) {
    auto idx = schema.find_column(cname);
    if (!idx || cols[*idx].kind != ColumnKind::Feature)
      throw SchemaError("one-hot column '" + cname + "' is not a feature column");
    one_hot.insert(*idx);
  }

  std::string line;
  std::size_t line_no = 0;

  auto check_header = [&](std::ifstream& s) {
    if (!opts.header) return;
    if (!std::getline(s, line)) throw FormatError("empty file " + path.string());
    ++line_no;
    auto names = split_line(line, opts.delimiter);
    if (names.size() != cols.size())
      throw FormatError("header has " + std::to_string(names.size()) + " columns, schema has " +
                        std::to_string(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (names[i] != cols[i].name)
        throw FormatError("header column " + std::to_string(i + 1) + " is '" + names[i] +
                          "', schema says '" + cols[i].name + "'");
  };

  // Pass 1 (only when one-hot expansion is requested): collect categories.
  std::map<std::size_t, std::set<std::string>> categories;
  if (!one_hot.empty()) {
    check_header(in);
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto fields = split_line(line, opts.delimiter);
      if (fields.size() != cols.size())
        throw FormatError("line " + std::to_string(line_no) + ": expected " +
                          std::to_string(cols.size()) + " fields, got " +
                          std::to_string(fields.size()));
      for (std::size_t c : one_hot) categories[c].insert(fields[c]);
    }
    in.clear();
    in.seekg(0);
    line_no = 0;
  }

  // Output schema with one-hot features expanded in place.
  std::vector<Column> out_cols;
  std::map<std::size_t, std::map<std::string, std::size_t>> indicator;  // col -> value -> offset
  std::size_t out_features = 0;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (one_hot.count(c)) {
      std::size_t k = 0;
      for (const auto& v : categories[c]) {
        out_cols.push_back(Column::feature(cols[c].name + "=" + v));
        indicator[c][v] = out_features + k;
        ++k;
      }
      out_features += k;
    } else {
      out_cols.push_back(cols[c]);
      if (cols[c].kind == ColumnKind::Feature) ++out_features;
    }
  }
  // Feature offset (into the expanded feature row) per source column.
  std::map<std::size_t, std::size_t> feature_offset;
  {
    std::size_t off = 0;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (one_hot.count(c)) {
        feature_offset[c] = off;
        off += categories[c].size();
      } else if (cols[c].kind == ColumnKind::Feature) {
        feature_offset[c] = off;
        ++off;
      }
    }
  }

  Schema out_schema{std::move(out_cols)};
  Relation rel = catalog.create_relation(name, out_schema, opts.page_size_rows);

  check_header(in);

  const std::size_t n_fk = schema.fk_count();
  const bool has_target = schema.has_target();
  constexpr std::size_t kChunk = 8192;

  Batch batch;
  batch.fks.assign(n_fk, {});
  std::vector<double> feat_rows;  // row-major staging
  auto flush = [&] {
    const std::size_t n = batch.keys.size();
    if (n == 0) return;
    batch.row_ordinals.assign(n, 0);
    batch.features = Eigen::Map<const FeatureMatrix>(feat_rows.data(), static_cast<Eigen::Index>(n),
                                                     static_cast<Eigen::Index>(out_features));
    rel.append(batch);
    batch.keys.clear();
    for (auto& fk : batch.fks) fk.clear();
    batch.targets.clear();
    feat_rows.clear();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_line(line, opts.delimiter);
    if (fields.size() != cols.size())
      throw FormatError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(cols.size()) + " fields, got " +
                        std::to_string(fields.size()));

    std::vector<double> feats(out_features, 0.0);
    std::size_t fk_i = 0;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      switch (cols[c].kind) {
        case ColumnKind::Key:
          batch.keys.push_back(parse_u64(fields[c], line_no, cols[c].name));
          break;
        case ColumnKind::ForeignKey:
          batch.fks[fk_i++].push_back(parse_u64(fields[c], line_no, cols[c].name));
          break;
        case ColumnKind::Target:
          batch.targets.push_back(parse_f64(fields[c], line_no, cols[c].name));
          break;
        case ColumnKind::Feature:
          if (one_hot.count(c)) {
            feats[indicator[c].at(fields[c])] = 1.0;
          } else {
            feats[feature_offset[c]] = parse_f64(fields[c], line_no, cols[c].name);
          }
          break;
      }
    }
    feat_rows.insert(feat_rows.end(), feats.begin(), feats.end());
    if (!has_target && !batch.targets.empty()) batch.targets.clear();
    if (batch.keys.size() >= kChunk) flush();
  }
  flush();
  return rel;
}

void export_csv(const Relation& rel, const std::filesystem::path& path, char delimiter) {
  std::ofstream out(path);
  if (!out) throw StorageError("cannot write " + path.string());
  const auto& cols = rel.schema().columns();
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (c) out << delimiter;
    out << cols[c].name;
  }
  out << "\n";
  out.precision(17);

  Batch b;
  auto cur = rel.scan();
  while (cur.next(b)) {
    for (std::size_t r = 0; r < b.size(); ++r) {
      std::size_t feat_i = 0, fk_i = 0;
      for (std::size_t c = 0; c < cols.size(); ++c) {
        if (c) out << delimiter;
        switch (cols[c].kind) {
          case ColumnKind::Key:
            out << b.keys[r];
            break;
          case ColumnKind::ForeignKey:
            out << b.fks[fk_i++][r];
            break;
          case ColumnKind::Feature:
            out << b.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(feat_i++));
            break;
          case ColumnKind::Target:
            out << b.targets[r];
            break;
        }
      }
      out << "\n";
    }
  }
}

}  // namespace facml
