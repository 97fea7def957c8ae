#pragma once

namespace mkat {

// Worker cap shared by the OpenMP kernels and the experiment orchestrator.
// MKAT_THREADS in the environment overrides hardware concurrency.
int max_worker_threads();

}  // namespace mkat
