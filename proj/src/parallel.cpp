#include "cite/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cite {

namespace {
int g_threads = 0;
}

int thread_count() {
#ifdef _OPENMP
  return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
  return 1;
#endif
}

void set_thread_count(int n) { g_threads = n < 0 ? 0 : n; }

void init_threads_from_env() {
  if (const char* env = std::getenv("CITE_THREADS")) {
    try {
      set_thread_count(std::stoi(env));
    } catch (const std::exception&) {
      set_thread_count(0);
    }
  }
}

}  // namespace cite
