#include "facml/datagen.hpp"

#include <Eigen/Cholesky>

#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "facml/errors.hpp"

namespace facml {

void SynthSpec::validate() const {
  if (n_r.empty()) throw SchemaError("synth spec needs at least one attribute table");
  if (n_r.size() != d_r.size())
    throw SchemaError("synth spec: n_r and d_r must have the same length");
  for (std::uint64_t n : n_r) {
    if (n < 1) throw SchemaError("synth spec: n_r must be >= 1");
    if (n_s < n) throw SchemaError("synth spec: n_s must be >= n_r");
  }
  if (d_s < 1) throw SchemaError("synth spec: d_s must be >= 1");
  for (std::size_t d : d_r)
    if (d < 1) throw SchemaError("synth spec: d_r must be >= 1");
  if (k_true < 1) throw SchemaError("synth spec: k_true must be >= 1");
  if (page_size_rows < 1) throw SchemaError("synth spec: page_size_rows must be >= 1");
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.n_s = j.at("n_s").get<std::uint64_t>();
  if (j.at("n_r").is_array())
    s.n_r = j.at("n_r").get<std::vector<std::uint64_t>>();
  else
    s.n_r = {j.at("n_r").get<std::uint64_t>()};
  s.d_s = j.at("d_s").get<std::size_t>();
  if (j.at("d_r").is_array())
    s.d_r = j.at("d_r").get<std::vector<std::size_t>>();
  else
    s.d_r = {j.at("d_r").get<std::size_t>()};
  s.k_true = j.value("k_true", s.k_true);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.seed = j.value("seed", s.seed);
  s.with_target = j.value("with_target", s.with_target);
  s.page_size_rows = j.value("page_size_rows", s.page_size_rows);
  s.prefix = j.value("prefix", s.prefix);
  return s;
}

nlohmann::json SynthSpec::to_json() const {
  return nlohmann::json{{"n_s", n_s},
                        {"n_r", n_r},
                        {"d_s", d_s},
                        {"d_r", d_r},
                        {"k_true", k_true},
                        {"noise_sigma", noise_sigma},
                        {"seed", seed},
                        {"with_target", with_target},
                        {"page_size_rows", page_size_rows},
                        {"prefix", prefix}};
}

SynthSpec SynthSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    return from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

namespace {

// Per-table Gaussian mixture used by the generator: k_true components with
// means in [-5,5]^d and random SPD covariances scaled to unit average
// variance.
struct TableMixture {
  std::vector<Eigen::VectorXd> mean;
  std::vector<Eigen::MatrixXd> chol;  // lower factors
};

TableMixture draw_mixture(std::mt19937_64& rng, std::size_t k_true, std::size_t dim) {
  std::uniform_real_distribution<double> mean_dist(-5.0, 5.0);
  std::normal_distribution<double> unit;
  TableMixture mx;
  for (std::size_t k = 0; k < k_true; ++k) {
    Eigen::VectorXd mu(dim);
    for (std::size_t i = 0; i < dim; ++i) mu(static_cast<Eigen::Index>(i)) = mean_dist(rng);
    Eigen::MatrixXd a(dim, dim);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = unit(rng);
    Eigen::MatrixXd cov = a * a.transpose() + Eigen::MatrixXd::Identity(dim, dim);
    cov *= static_cast<double>(dim) / cov.trace();
    mx.mean.push_back(std::move(mu));
    mx.chol.push_back(cov.llt().matrixL());
  }
  return mx;
}

Eigen::VectorXd draw_point(std::mt19937_64& rng, const TableMixture& mx, std::size_t k,
                           double noise_sigma) {
  std::normal_distribution<double> unit;
  const Eigen::Index dim = mx.mean[k].size();
  Eigen::VectorXd z(dim);
  for (Eigen::Index i = 0; i < dim; ++i) z(i) = unit(rng);
  Eigen::VectorXd x = mx.mean[k] + mx.chol[k] * z;
  if (noise_sigma > 0) {
    for (Eigen::Index i = 0; i < dim; ++i) x(i) += noise_sigma * unit(rng);
  }
  return x;
}

Schema attribute_schema(std::size_t d) {
  std::vector<Column> cols{Column::key("rid")};
  for (std::size_t i = 0; i < d; ++i) cols.push_back(Column::feature("xr" + std::to_string(i)));
  return Schema(std::move(cols));
}

Schema s_schema(const SynthSpec& spec, const std::vector<std::string>& table_names) {
  std::vector<Column> cols{Column::key("sid")};
  if (spec.with_target) cols.push_back(Column::target("y"));
  for (std::size_t i = 0; i < spec.d_s; ++i) cols.push_back(Column::feature("xs" + std::to_string(i)));
  for (std::size_t m = 0; m < spec.q(); ++m)
    cols.push_back(Column::foreign_key("fk" + std::to_string(m + 1), table_names[m]));
  return Schema(std::move(cols));
}

}  // namespace

SynthResult gen_dataset(const SynthSpec& spec, Catalog& catalog) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t q = spec.q();

  std::vector<std::string> table_names;
  for (std::size_t m = 0; m < q; ++m)
    table_names.push_back(spec.prefix + "R" + std::to_string(m + 1));
  const std::string s_name = spec.prefix + "S";

  // 1. Generator mixtures, one per table (S first), in a fixed draw order.
  std::vector<TableMixture> mixtures;
  mixtures.push_back(draw_mixture(rng, spec.k_true, spec.d_s));
  for (std::size_t m = 0; m < q; ++m) mixtures.push_back(draw_mixture(rng, spec.k_true, spec.d_r[m]));

  // 2. Teacher coefficients for the target (linear in joined features).
  std::size_t d_total = spec.d_s;
  for (std::size_t d : spec.d_r) d_total += d;
  GenTruth truth;
  if (spec.with_target) {
    std::uniform_real_distribution<double> coeff(-1.0, 1.0);
    truth.teacher.resize(d_total + 1);
    for (double& c : truth.teacher) c = coeff(rng);
  }

  // 3. Attribute tables (kept in memory to evaluate the teacher on S rows).
  std::uniform_int_distribution<std::size_t> comp(0, spec.k_true - 1);
  SynthResult res;
  std::vector<FeatureMatrix> r_features(q);
  truth.component_of_r_row.resize(q);
  truth.multiplicity.resize(q);
  for (std::size_t m = 0; m < q; ++m) {
    const std::uint64_t n = spec.n_r[m];
    const std::size_t d = spec.d_r[m];
    Batch b;
    b.keys.resize(n);
    b.row_ordinals.assign(n, 0);
    b.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    truth.component_of_r_row[m].resize(n);
    truth.multiplicity[m].assign(n, 0);
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::size_t z = comp(rng);
      truth.component_of_r_row[m][i] = static_cast<std::uint32_t>(z);
      b.keys[i] = i;
      b.features.row(static_cast<Eigen::Index>(i)) =
          draw_point(rng, mixtures[m + 1], z, spec.noise_sigma).transpose();
    }
    r_features[m] = b.features;
    Relation rel = catalog.create_relation(table_names[m], attribute_schema(d), spec.page_size_rows);
    rel.append(b);
    res.tables.push_back(rel);
  }

  // 4. S rows: each R key assigned once first, remaining FKs uniform.
  Relation s_rel = catalog.create_relation(s_name, s_schema(spec, table_names), spec.page_size_rows);
  std::vector<std::uniform_int_distribution<std::uint64_t>> fk_dists;
  for (std::size_t m = 0; m < q; ++m) fk_dists.emplace_back(0, spec.n_r[m] - 1);
  std::normal_distribution<double> unit;
  truth.component_of_s_row.resize(spec.n_s);

  constexpr std::uint64_t kChunk = 65536;
  Batch b;
  for (std::uint64_t first = 0; first < spec.n_s; first += kChunk) {
    const std::uint64_t n = std::min(kChunk, spec.n_s - first);
    b.keys.resize(n);
    b.row_ordinals.assign(n, 0);
    b.fks.assign(q, std::vector<std::uint64_t>(n));
    if (spec.with_target)
      b.targets.resize(n);
    else
      b.targets.clear();
    b.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.d_s));

    for (std::uint64_t r = 0; r < n; ++r) {
      const std::uint64_t row = first + r;
      b.keys[r] = row;
      const std::size_t z = comp(rng);
      truth.component_of_s_row[row] = static_cast<std::uint32_t>(z);
      b.features.row(static_cast<Eigen::Index>(r)) =
          draw_point(rng, mixtures[0], z, spec.noise_sigma).transpose();
      for (std::size_t m = 0; m < q; ++m) {
        const std::uint64_t fk = row < spec.n_r[m] ? row : fk_dists[m](rng);
        b.fks[m][r] = fk;
        ++truth.multiplicity[m][fk];
      }
      if (spec.with_target) {
        double y = truth.teacher.back();
        std::size_t off = 0;
        for (std::size_t i = 0; i < spec.d_s; ++i)
          y += truth.teacher[off + i] * b.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i));
        off += spec.d_s;
        for (std::size_t m = 0; m < q; ++m) {
          const auto rr = static_cast<Eigen::Index>(b.fks[m][r]);
          for (std::size_t i = 0; i < spec.d_r[m]; ++i)
            y += truth.teacher[off + i] * r_features[m](rr, static_cast<Eigen::Index>(i));
          off += spec.d_r[m];
        }
        y += spec.noise_sigma * unit(rng);
        b.targets[r] = y;
      }
    }
    s_rel.append(b);
  }

  res.s = s_rel;
  res.truth = std::move(truth);
  res.join.s = s_name;
  res.join.tables = table_names;
  for (std::size_t m = 0; m < q; ++m) res.join.fk_columns.push_back("fk" + std::to_string(m + 1));
  return res;
}

SynthResult gen_binary(const SynthSpec& spec, Catalog& catalog) {
  if (spec.q() != 1) throw SchemaError("gen_binary expects exactly one attribute table");
  return gen_dataset(spec, catalog);
}

SynthResult gen_multiway(const SynthSpec& spec, Catalog& catalog) {
  if (spec.q() < 2) throw SchemaError("gen_multiway expects q >= 2 attribute tables");
  return gen_dataset(spec, catalog);
}

}  // namespace facml
