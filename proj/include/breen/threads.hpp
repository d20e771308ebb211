#pragma once

namespace breen {

// Worker-thread cap for the OpenMP kernels. Defaults to 1; BREEN_THREADS
// overrides. All kernels are accumulation-order stable, so results are
// bit-identical for any cap.
int thread_cap();
void set_thread_cap(int n);

// Reads BREEN_THREADS and applies it. Called once from CLI/test mains.
void init_threads_from_env();

}  // namespace breen
