#ifndef LTRCJM_PARALLEL_HPP
#define LTRCJM_PARALLEL_HPP

#include <functional>

namespace ltrcjm {

// Worker count: LTRCJM_WORKERS env var if set, else hardware concurrency.
int worker_count();

// Runs body(i) for i in [0, n). Work items must write only to their own
// slots; callers reduce in index order afterwards, so results do not depend
// on the schedule. Nested calls run serially.
void parallel_for(int n, const std::function<void(int)>& body);

}  // namespace ltrcjm

#endif
