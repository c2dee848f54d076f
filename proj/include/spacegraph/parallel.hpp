#pragma once

#include <functional>

namespace spacegraph {

// Worker count for node-parallel maps: SPACEGRAPH_THREADS if set, otherwise
// the value given to set_thread_count, otherwise hardware concurrency.
int thread_count();
void set_thread_count(int n);

// Runs body(i) for i in [0, count). Each index is visited exactly once and
// bodies must only write to per-index storage, so results do not depend on
// the number of workers. A worker gets at least `grain` indices.
void parallel_for(int count, const std::function<void(int)>& body, int grain = 256);

}  // namespace spacegraph
