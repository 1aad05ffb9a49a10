#pragma once

namespace satnet {

/// Cap worker threads (OpenMP batch parallelism and Eigen GEMM threads).
void set_num_threads(int n);
int max_threads();

} // namespace satnet
