#ifndef CONTAGION_PARALLEL_HPP
#define CONTAGION_PARALLEL_HPP

namespace contagion {

// Kernels keep a serial reference path next to the OpenMP path. Path
// simulation agrees bit for bit; the DP step agrees to rounding.
enum class Backend { serial, openmp };

// Sets the OpenMP worker count (no-op without OpenMP). n <= 0 keeps the
// runtime default.
void set_worker_count(int n);
int worker_count();

}  // namespace contagion

#endif  // CONTAGION_PARALLEL_HPP
