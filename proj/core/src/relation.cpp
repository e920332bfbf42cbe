#include "facml/relation.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <bit>
#include <cstring>
#include <optional>
#include <unordered_set>

#include "facml/counters.hpp"
#include "facml/errors.hpp"

static_assert(std::endian::native == std::endian::little, "storage format is little-endian");

namespace facml {

namespace {

constexpr char kMagic[8] = {'F', 'A', 'C', 'M', 'L', 'P', 'G', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kHeaderAlign = 64;

// Fixed header prefix: magic, version, n_cols, page_size_rows, n_rows,
// data_offset. Column descriptors follow.
constexpr std::uint64_t kNRowsOffset = 24;

void put_u16(std::vector<std::uint8_t>& buf, std::uint16_t v) {
  buf.push_back(static_cast<std::uint8_t>(v & 0xff));
  buf.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct HeaderReader {
  const std::uint8_t* p;
  const std::uint8_t* end;
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end - p) < n) throw StorageError("truncated header");
  }
  std::uint8_t u8() {
    need(1);
    return *p++;
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, p, 8);
    p += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    return s;
  }
};

void pread_exact(int fd, void* dst, std::size_t n, std::uint64_t off, const char* what) {
  std::uint8_t* out = static_cast<std::uint8_t*>(dst);
  while (n > 0) {
    ssize_t got = ::pread(fd, out, n, static_cast<off_t>(off));
    if (got < 0) throw StorageError(std::string(what) + ": pread failed");
    if (got == 0) throw StorageError(std::string(what) + ": unexpected end of file");
    out += got;
    off += static_cast<std::uint64_t>(got);
    n -= static_cast<std::size_t>(got);
  }
}

void pwrite_exact(int fd, const void* src, std::size_t n, std::uint64_t off, const char* what) {
  const std::uint8_t* in = static_cast<const std::uint8_t*>(src);
  while (n > 0) {
    ssize_t put = ::pwrite(fd, in, n, static_cast<off_t>(off));
    if (put <= 0) throw StorageError(std::string(what) + ": pwrite failed");
    in += put;
    off += static_cast<std::uint64_t>(put);
    n -= static_cast<std::size_t>(put);
  }
}

}  // namespace

struct Relation::Impl {
  Schema schema;
  std::filesystem::path path;
  int fd = -1;
  std::uint64_t page_size_rows = 0;
  std::uint64_t n_rows = 0;
  std::uint64_t data_offset = 0;
  std::size_t row_stride = 0;

  std::optional<KeyIndex> key_index;
  std::unordered_map<std::string, FkIndex> fk_indexes;
  std::optional<std::unordered_set<std::uint64_t>> keys_seen;  // append-path uniqueness

  ~Impl() {
    if (fd >= 0) ::close(fd);
  }

  std::uint64_t page_count() const {
    return page_size_rows == 0 ? 0 : (n_rows + page_size_rows - 1) / page_size_rows;
  }

  void decode_rows(const std::uint8_t* raw, std::uint64_t first_ordinal, std::size_t count,
                   Batch& out, std::size_t out_pos) const {
    const auto& cols = schema.columns();
    const std::size_t n_feat = schema.feature_count();
    for (std::size_t r = 0; r < count; ++r) {
      const std::uint8_t* row = raw + r * row_stride;
      const std::size_t dst = out_pos + r;
      out.row_ordinals[dst] = first_ordinal + r;
      std::size_t feat_i = 0, fk_i = 0;
      for (std::size_t c = 0; c < cols.size(); ++c) {
        const std::uint8_t* cell = row + 8 * c;
        switch (cols[c].kind) {
          case ColumnKind::Key:
            std::memcpy(&out.keys[dst], cell, 8);
            break;
          case ColumnKind::ForeignKey:
            std::memcpy(&out.fks[fk_i++][dst], cell, 8);
            break;
          case ColumnKind::Feature:
            std::memcpy(&out.features(static_cast<Eigen::Index>(dst),
                                      static_cast<Eigen::Index>(feat_i++)),
                        cell, 8);
            break;
          case ColumnKind::Target:
            std::memcpy(&out.targets[dst], cell, 8);
            break;
        }
      }
    }
    counters::add_field_reads(static_cast<std::uint64_t>(count) * n_feat);
  }

  void resize_batch(Batch& out, std::size_t n) const {
    out.row_ordinals.resize(n);
    out.keys.resize(n);
    out.fks.assign(schema.fk_count(), std::vector<std::uint64_t>(n));
    if (schema.has_target())
      out.targets.resize(n);
    else
      out.targets.clear();
    out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(schema.feature_count()));
  }
};

Relation Relation::create(const Schema& schema, const std::filesystem::path& path,
                          std::uint64_t page_size_rows) {
  schema.validate();
  if (page_size_rows < 1) throw StorageError("page_size_rows must be >= 1");
  if (std::filesystem::exists(path)) throw AlreadyExists(path.string());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());

  std::vector<std::uint8_t> hdr;
  hdr.insert(hdr.end(), kMagic, kMagic + 8);
  put_u32(hdr, kVersion);
  put_u32(hdr, static_cast<std::uint32_t>(schema.column_count()));
  put_u64(hdr, page_size_rows);
  put_u64(hdr, 0);  // n_rows
  put_u64(hdr, 0);  // data_offset, patched below
  for (const Column& c : schema.columns()) {
    hdr.push_back(static_cast<std::uint8_t>(c.kind));
    put_u16(hdr, static_cast<std::uint16_t>(c.name.size()));
    hdr.insert(hdr.end(), c.name.begin(), c.name.end());
    put_u16(hdr, static_cast<std::uint16_t>(c.fk_target.size()));
    hdr.insert(hdr.end(), c.fk_target.begin(), c.fk_target.end());
  }
  std::uint64_t data_offset = (hdr.size() + kHeaderAlign - 1) / kHeaderAlign * kHeaderAlign;
  std::memcpy(hdr.data() + 32, &data_offset, 8);
  hdr.resize(data_offset, 0);

  int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_EXCL, 0644);
  if (fd < 0) throw StorageError("cannot create " + path.string());
  pwrite_exact(fd, hdr.data(), hdr.size(), 0, "write header");

  auto impl = std::make_shared<Impl>();
  impl->schema = schema;
  impl->path = path;
  impl->fd = fd;
  impl->page_size_rows = page_size_rows;
  impl->n_rows = 0;
  impl->data_offset = data_offset;
  impl->row_stride = 8 * schema.column_count();
  impl->keys_seen.emplace();
  return Relation(std::move(impl));
}

Relation Relation::open(const std::filesystem::path& path) {
  int fd = ::open(path.c_str(), O_RDWR);
  if (fd < 0) throw StorageError("cannot open " + path.string());

  std::uint8_t fixed[40];
  try {
    pread_exact(fd, fixed, sizeof fixed, 0, "read header");
  } catch (...) {
    ::close(fd);
    throw;
  }
  if (std::memcmp(fixed, kMagic, 8) != 0) {
    ::close(fd);
    throw StorageError(path.string() + " is not a relation file");
  }
  HeaderReader hr{fixed + 8, fixed + sizeof fixed};
  std::uint32_t version = hr.u32();
  std::uint32_t n_cols = hr.u32();
  std::uint64_t page_size_rows = hr.u64();
  std::uint64_t n_rows = hr.u64();
  std::uint64_t data_offset = hr.u64();
  if (version != kVersion) {
    ::close(fd);
    throw StorageError("unsupported format version " + std::to_string(version));
  }

  std::vector<std::uint8_t> rest(data_offset > 40 ? data_offset - 40 : 0);
  if (!rest.empty()) pread_exact(fd, rest.data(), rest.size(), 40, "read schema");
  HeaderReader sr{rest.data(), rest.data() + rest.size()};
  std::vector<Column> cols;
  cols.reserve(n_cols);
  for (std::uint32_t i = 0; i < n_cols; ++i) {
    Column c;
    c.kind = static_cast<ColumnKind>(sr.u8());
    c.name = sr.str(sr.u16());
    c.fk_target = sr.str(sr.u16());
    cols.push_back(std::move(c));
  }

  auto impl = std::make_shared<Impl>();
  impl->schema = Schema(std::move(cols));
  impl->schema.validate();
  impl->path = path;
  impl->fd = fd;
  impl->page_size_rows = page_size_rows;
  impl->n_rows = n_rows;
  impl->data_offset = data_offset;
  impl->row_stride = 8 * impl->schema.column_count();
  return Relation(std::move(impl));
}

const Schema& Relation::schema() const { return impl_->schema; }
const std::filesystem::path& Relation::path() const { return impl_->path; }
std::uint64_t Relation::row_count() const { return impl_->n_rows; }
std::uint64_t Relation::page_size_rows() const { return impl_->page_size_rows; }
std::uint64_t Relation::page_count() const { return impl_->page_count(); }

void Relation::append(const Batch& batch) {
  Impl& im = *impl_;
  const std::size_t n = batch.size();
  const std::size_t n_feat = im.schema.feature_count();
  if (batch.fks.size() != im.schema.fk_count())
    throw SchemaError("batch has " + std::to_string(batch.fks.size()) + " FK columns, schema has " +
                      std::to_string(im.schema.fk_count()));
  if (static_cast<std::size_t>(batch.features.rows()) != n ||
      static_cast<std::size_t>(batch.features.cols()) != n_feat)
    throw SchemaError("batch feature matrix shape mismatch");
  for (const auto& fk : batch.fks)
    if (fk.size() != n) throw SchemaError("batch FK column length mismatch");
  if (im.schema.has_target() && batch.targets.size() != n)
    throw SchemaError("batch target length mismatch");

  if (!im.keys_seen) {
    // First append into a preexisting file: load the key set once.
    im.keys_seen.emplace();
    im.keys_seen->reserve(im.n_rows);
    Batch tmp;
    BatchCursor cur(impl_, kDefaultBlockSizePages);
    while (cur.next(tmp))
      for (std::uint64_t k : tmp.keys) im.keys_seen->insert(k);
  }
  for (std::uint64_t k : batch.keys)
    if (!im.keys_seen->insert(k).second) throw KeyViolation("key " + std::to_string(k));

  std::vector<std::uint8_t> buf(n * im.row_stride);
  const auto& cols = im.schema.columns();
  for (std::size_t r = 0; r < n; ++r) {
    std::uint8_t* row = buf.data() + r * im.row_stride;
    std::size_t feat_i = 0, fk_i = 0;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      std::uint8_t* cell = row + 8 * c;
      switch (cols[c].kind) {
        case ColumnKind::Key:
          std::memcpy(cell, &batch.keys[r], 8);
          break;
        case ColumnKind::ForeignKey:
          std::memcpy(cell, &batch.fks[fk_i++][r], 8);
          break;
        case ColumnKind::Feature: {
          double v = batch.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(feat_i++));
          std::memcpy(cell, &v, 8);
          break;
        }
        case ColumnKind::Target: {
          double v = im.schema.has_target() ? batch.targets[r] : 0.0;
          std::memcpy(cell, &v, 8);
          break;
        }
      }
    }
  }

  const std::uint64_t first = im.n_rows;
  pwrite_exact(im.fd, buf.data(), buf.size(), im.data_offset + first * im.row_stride, "append rows");
  im.n_rows += n;
  pwrite_exact(im.fd, &im.n_rows, 8, kNRowsOffset, "update row count");

  if (n > 0) {
    std::uint64_t p0 = first / im.page_size_rows;
    std::uint64_t p1 = (im.n_rows - 1) / im.page_size_rows;
    counters::add_pages_written(p1 - p0 + 1);
  }

  im.key_index.reset();
  im.fk_indexes.clear();
}

BatchCursor Relation::scan(std::uint64_t block_size_pages) const {
  if (block_size_pages < 1) throw StorageError("block_size_pages must be >= 1");
  return BatchCursor(impl_, block_size_pages);
}

void Relation::read_rows(std::span<const std::uint64_t> sorted_ordinals, Batch& out) const {
  const Impl& im = *impl_;
  im.resize_batch(out, sorted_ordinals.size());
  if (sorted_ordinals.empty()) return;

  std::vector<std::uint8_t> pagebuf;
  std::size_t i = 0;
  std::uint64_t pages_touched = 0;
  while (i < sorted_ordinals.size()) {
    const std::uint64_t page = sorted_ordinals[i] / im.page_size_rows;
    std::size_t j = i;
    while (j < sorted_ordinals.size() && sorted_ordinals[j] / im.page_size_rows == page) ++j;
    const std::uint64_t lo = sorted_ordinals[i];
    const std::uint64_t hi = sorted_ordinals[j - 1];
    if (hi >= im.n_rows) throw StorageError("row ordinal out of range");
    pagebuf.resize((hi - lo + 1) * im.row_stride);
    pread_exact(im.fd, pagebuf.data(), pagebuf.size(), im.data_offset + lo * im.row_stride,
                "read rows");
    ++pages_touched;
    for (std::size_t r = i; r < j; ++r) {
      const std::uint64_t ord = sorted_ordinals[r];
      im.decode_rows(pagebuf.data() + (ord - lo) * im.row_stride, ord, 1, out, r);
    }
    i = j;
  }
  counters::add_pages_read(pages_touched);
}

Batch Relation::read_rows(std::span<const std::uint64_t> sorted_ordinals) const {
  Batch out;
  read_rows(sorted_ordinals, out);
  return out;
}

void Relation::build_key_index() {
  Impl& im = *impl_;
  KeyIndex idx;
  idx.reserve(im.n_rows);
  Batch tmp;
  BatchCursor cur(impl_, kDefaultBlockSizePages);
  while (cur.next(tmp)) {
    for (std::size_t r = 0; r < tmp.size(); ++r) {
      auto [it, fresh] = idx.emplace(tmp.keys[r], static_cast<std::uint32_t>(tmp.row_ordinals[r]));
      if (!fresh) throw KeyViolation("duplicate key " + std::to_string(tmp.keys[r]) + " in stored relation");
    }
  }
  im.key_index = std::move(idx);
}

void Relation::build_fk_index(const std::string& fk_column) {
  Impl& im = *impl_;
  const std::size_t fk_i = im.schema.fk_ordinal(fk_column);
  FkIndex idx;
  Batch tmp;
  BatchCursor cur(impl_, kDefaultBlockSizePages);
  while (cur.next(tmp)) {
    for (std::size_t r = 0; r < tmp.size(); ++r)
      idx[tmp.fks[fk_i][r]].push_back(static_cast<std::uint32_t>(tmp.row_ordinals[r]));
  }
  im.fk_indexes[fk_column] = std::move(idx);
}

bool Relation::has_key_index() const { return impl_->key_index.has_value(); }
bool Relation::has_fk_index(const std::string& fk_column) const {
  return impl_->fk_indexes.count(fk_column) > 0;
}

const KeyIndex& Relation::key_index() const {
  if (!impl_->key_index) throw IndexRequired("key index not built for " + impl_->path.string());
  return *impl_->key_index;
}

const FkIndex& Relation::fk_index(const std::string& fk_column) const {
  auto it = impl_->fk_indexes.find(fk_column);
  if (it == impl_->fk_indexes.end())
    throw IndexRequired("fk index on '" + fk_column + "' not built for " + impl_->path.string());
  return it->second;
}

BatchCursor::BatchCursor(std::shared_ptr<const Relation::Impl> impl, std::uint64_t block_size_pages)
    : impl_(std::move(impl)), block_size_pages_(block_size_pages) {}

bool BatchCursor::next(Batch& out) {
  const Relation::Impl& im = *impl_;
  const std::uint64_t n_pages = im.page_count();
  if (next_page_ >= n_pages) return false;

  const std::uint64_t pages = std::min(block_size_pages_, n_pages - next_page_);
  const std::uint64_t first = next_page_ * im.page_size_rows;
  const std::uint64_t last = std::min(im.n_rows, (next_page_ + pages) * im.page_size_rows);
  const std::size_t count = static_cast<std::size_t>(last - first);

  std::vector<std::uint8_t> buf(count * im.row_stride);
  pread_exact(im.fd, buf.data(), buf.size(), im.data_offset + first * im.row_stride, "scan block");
  counters::add_pages_read(pages);

  im.resize_batch(out, count);
  im.decode_rows(buf.data(), first, count, out, 0);

  next_page_ += pages;
  return true;
}

}  // namespace facml
