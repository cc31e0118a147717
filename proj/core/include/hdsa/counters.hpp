#pragma once

#include <atomic>
#include <cstdint>

namespace hdsa {

/// Instrumentation for the cost model. A "linearized solve" is one full
/// incremental state solve (pressure + every transport step) or one full
/// incremental adjoint solve (backward transport sweep + pressure).
struct SolveCounters {
  std::atomic<std::int64_t> forward_solves{0};
  std::atomic<std::int64_t> adjoint_solves{0};
  std::atomic<std::int64_t> incremental_forward_solves{0};
  std::atomic<std::int64_t> incremental_adjoint_solves{0};
  std::atomic<std::int64_t> hessian_applies{0};
  std::atomic<std::int64_t> b_applies{0};
  std::atomic<std::int64_t> bt_applies{0};

  std::int64_t linearized_solves() const {
    return incremental_forward_solves.load() + incremental_adjoint_solves.load();
  }

  void reset() {
    forward_solves = 0;
    adjoint_solves = 0;
    incremental_forward_solves = 0;
    incremental_adjoint_solves = 0;
    hessian_applies = 0;
    b_applies = 0;
    bt_applies = 0;
  }
};

}  // namespace hdsa
