#include "breen/threads.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace breen {

namespace {
int g_cap = 1;
}

int thread_cap() { return g_cap; }

void set_thread_cap(int n) {
    g_cap = n < 1 ? 1 : n;
#ifdef _OPENMP
    omp_set_num_threads(g_cap);
#endif
}

void init_threads_from_env() {
    int n = 1;
    if (const char* env = std::getenv("BREEN_THREADS")) {
        try {
            n = std::stoi(env);
        } catch (...) {
            n = 1;
        }
    }
    set_thread_cap(n);
}

}  // namespace breen
