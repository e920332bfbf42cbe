#include "facml/counters.hpp"

namespace facml::counters {

namespace {
thread_local Counters* t_current = nullptr;
}

Counters* current() { return t_current; }
void set_current(Counters* c) { t_current = c; }

}  // namespace facml::counters
