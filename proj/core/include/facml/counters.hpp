#pragma once

#include <cstdint>

namespace facml {

// Deterministic operation counters, kept at matrix-shape granularity rather
// than per executed flop. Storage charges logical page reads/writes and
// decoded feature fields; the trainers charge multiply/subtract counts for
// each block of the decomposed update at its outer-product size, whichever
// way the block is realized (a transposed copy of a symmetric block is
// charged the same as computing it). Scalar prefactors (responsibility
// weights) are not charged. This makes the counters reproducible across
// runs and directly comparable with the analytic cost model.
struct Counters {
  std::uint64_t pages_read = 0;
  std::uint64_t pages_written = 0;
  std::uint64_t field_reads = 0;  // feature fields decoded from storage
  std::uint64_t mults = 0;
  std::uint64_t subs = 0;

  Counters& operator+=(const Counters& o) {
    pages_read += o.pages_read;
    pages_written += o.pages_written;
    field_reads += o.field_reads;
    mults += o.mults;
    subs += o.subs;
    return *this;
  }
};

namespace counters {

// Thread-local active counter sink; null means "don't count".
Counters* current();
void set_current(Counters* c);

inline void add_pages_read(std::uint64_t n) {
  if (Counters* c = current()) c->pages_read += n;
}
inline void add_pages_written(std::uint64_t n) {
  if (Counters* c = current()) c->pages_written += n;
}
inline void add_field_reads(std::uint64_t n) {
  if (Counters* c = current()) c->field_reads += n;
}
inline void add_mults(std::uint64_t n) {
  if (Counters* c = current()) c->mults += n;
}
inline void add_subs(std::uint64_t n) {
  if (Counters* c = current()) c->subs += n;
}

}  // namespace counters

// Binds a Counters sink for the current scope (phase-scoped in trainers).
class CounterScope {
 public:
  explicit CounterScope(Counters& c) : prev_(counters::current()) { counters::set_current(&c); }
  ~CounterScope() { counters::set_current(prev_); }

  CounterScope(const CounterScope&) = delete;
  CounterScope& operator=(const CounterScope&) = delete;

 private:
  Counters* prev_;
};

}  // namespace facml
