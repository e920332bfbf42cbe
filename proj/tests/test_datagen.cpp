#include <doctest.h>

#include <fstream>

#include "facml/csv.hpp"
#include "facml/datagen.hpp"
#include "facml/errors.hpp"
#include "test_util.hpp"

using namespace facml;
using namespace facml::test;

namespace {

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("same seed, same bytes") {
  TempDir a, b;
  SynthSpec spec;
  spec.n_s = 40;
  spec.n_r = {7};
  spec.d_s = 3;
  spec.d_r = {2};
  spec.seed = 1;
  spec.with_target = true;

  Catalog ca = Catalog::create(a.path);
  Catalog cb = Catalog::create(b.path);
  gen_binary(spec, ca);
  gen_binary(spec, cb);
  CHECK(file_bytes(a.path / "S.rel") == file_bytes(b.path / "S.rel"));
  CHECK(file_bytes(a.path / "R1.rel") == file_bytes(b.path / "R1.rel"));

  TempDir c;
  SynthSpec other = spec;
  other.seed = 2;
  Catalog cc = Catalog::create(c.path);
  gen_binary(other, cc);
  CHECK(file_bytes(a.path / "S.rel") != file_bytes(c.path / "S.rel"));
}

TEST_CASE("every R key referenced; mean group size equals rr") {
  TempDir tmp;
  SynthSpec spec;
  spec.n_s = 200;
  spec.n_r = {20};
  spec.d_s = 2;
  spec.d_r = {2};
  spec.seed = 3;
  Catalog cat = Catalog::create(tmp.path);
  SynthResult res = gen_binary(spec, cat);

  std::uint64_t total = 0;
  for (std::uint32_t m : res.truth.multiplicity[0]) {
    CHECK(m >= 1);  // adjustment pass guarantees coverage
    total += m;
  }
  CHECK(total == spec.n_s);
  CHECK(total / res.truth.multiplicity[0].size() == 10);  // rr = n_S / n_R exactly

  // cross-check the bookkeeping against a real probe
  res.s.build_fk_index("fk1");
  Batch r_all = read_all(res.tables[0]);
  GroupedProbe probe = probe_matching(res.s, r_all, "fk1");
  for (std::size_t g = 0; g < probe.groups.size(); ++g)
    CHECK(probe.groups[g].count == res.truth.multiplicity[0][g]);
}

TEST_CASE("referential integrity of generated data") {
  TempDir tmp;
  SynthSpec spec;
  spec.n_s = 100;
  spec.n_r = {9};
  spec.d_s = 1;
  spec.d_r = {1};
  spec.seed = 4;
  Catalog cat = Catalog::create(tmp.path);
  SynthResult res = gen_binary(spec, cat);
  CHECK_NOTHROW(materialize_join(res.join, cat, "t"));
}

TEST_CASE("multiway generation controls each table independently") {
  TempDir tmp;
  SynthSpec spec;
  spec.n_s = 60;
  spec.n_r = {6, 3};
  spec.d_s = 2;
  spec.d_r = {2, 4};
  spec.seed = 5;
  Catalog cat = Catalog::create(tmp.path);
  SynthResult res = gen_multiway(spec, cat);
  CHECK(res.tables.size() == 2);
  CHECK(res.tables[0].row_count() == 6);
  CHECK(res.tables[1].row_count() == 3);
  CHECK(res.join.fk_columns == std::vector<std::string>{"fk1", "fk2"});

  std::uint64_t t0 = 0, t1 = 0;
  for (auto m : res.truth.multiplicity[0]) t0 += m;
  for (auto m : res.truth.multiplicity[1]) t1 += m;
  CHECK(t0 == spec.n_s);
  CHECK(t1 == spec.n_s);

  SynthSpec one = spec;
  one.n_r = {1, 1};
  one.prefix = "one_";
  one.n_s = 1;
  SynthResult single = gen_multiway(one, cat);
  CHECK(single.s.row_count() == 1);

  CHECK_THROWS_AS(gen_multiway(SynthSpec{}, cat), SchemaError);  // q == 1
}

TEST_CASE("csv import round-trips a well-formed file") {
  TempDir tmp;
  const auto csv = tmp.path / "in.csv";
  {
    std::ofstream out(csv);
    out << "id,f0,f1\n1,0.5,2\n2,1.5,4\n3,2.5,8\n";
  }
  Catalog cat = Catalog::create(tmp.path / "cat");
  Relation rel = import_csv(csv, simple_schema(2), cat, "x");
  CHECK(rel.row_count() == 3);
  Batch all = read_all(rel);
  CHECK(all.features(2, 1) == 8);

  export_csv(rel, tmp.path / "out.csv");
  Catalog cat2 = Catalog::create(tmp.path / "cat2");
  Relation again = import_csv(tmp.path / "out.csv", simple_schema(2), cat2, "x");
  CHECK(read_all(again).features == all.features);
}

TEST_CASE("csv import reports the offending line") {
  TempDir tmp;
  const auto csv = tmp.path / "in.csv";
  {
    std::ofstream out(csv);
    out << "id,f0\n1,0.5\n2,not_a_number\n";
  }
  Catalog cat = Catalog::create(tmp.path / "cat");
  try {
    import_csv(csv, simple_schema(1), cat, "x");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("csv header must match the schema") {
  TempDir tmp;
  const auto csv = tmp.path / "in.csv";
  {
    std::ofstream out(csv);
    out << "id,wrong\n1,0.5\n";
  }
  Catalog cat = Catalog::create(tmp.path / "cat");
  CHECK_THROWS_AS(import_csv(csv, simple_schema(1), cat, "x"), FormatError);
}

TEST_CASE("movies-shaped widths load as declared") {
  TempDir tmp;
  const auto csv = tmp.path / "in.csv";
  {
    std::ofstream out(csv);
    out << "id,y,f0,fk\n";
    for (int i = 0; i < 5; ++i) out << i << "," << i * 0.5 << "," << i << "," << 0 << "\n";
  }
  Schema schema({Column::key("id"), Column::target("y"), Column::feature("f0"),
                 Column::foreign_key("fk", "movies")});
  Catalog cat = Catalog::create(tmp.path / "cat");
  Relation s = import_csv(csv, schema, cat, "ratings");
  CHECK(s.row_count() == 5);
  CHECK(s.schema().feature_count() == 1);

  const auto rcsv = tmp.path / "r.csv";
  {
    std::ofstream out(rcsv);
    out << "id";
    for (int c = 0; c < 21; ++c) out << ",g" << c;
    out << "\n0";
    for (int c = 0; c < 21; ++c) out << "," << c;
    out << "\n";
  }
  std::vector<Column> rcols{Column::key("id")};
  for (int c = 0; c < 21; ++c) rcols.push_back(Column::feature("g" + std::to_string(c)));
  Relation r = import_csv(rcsv, Schema(rcols), cat, "movies");
  CHECK(r.schema().feature_count() == 21);
}

TEST_CASE("one-hot expansion turns categories into indicator columns") {
  TempDir tmp;
  const auto csv = tmp.path / "in.csv";
  {
    std::ofstream out(csv);
    out << "id,color,size\n1,red,2\n2,blue,3\n3,red,4\n";
  }
  Schema schema({Column::key("id"), Column::feature("color"), Column::feature("size")});
  Catalog cat = Catalog::create(tmp.path / "cat");
  CsvOptions opts;
  opts.one_hot_columns = {"color"};
  Relation rel = import_csv(csv, schema, cat, "x", opts);
  CHECK(rel.schema().feature_count() == 3);  // blue, red indicators + size
  Batch all = read_all(rel);
  // categories sorted: color=blue, color=red
  CHECK(all.features(0, 1) == 1.0);
  CHECK(all.features(1, 0) == 1.0);
  CHECK(all.features(2, 2) == 4.0);
}
