#pragma once

namespace cite {

// Thread cap for internal parallel regions. Initialized from CITE_THREADS
// (0 or unset = OpenMP default).
int thread_count();
void set_thread_count(int n);
void init_threads_from_env();

}  // namespace cite
