#pragma once

namespace nusg {

/// Worker threads used by the BLAS backend.
void set_compute_threads(int n);
int compute_threads();

/// Applies NUSG_THREADS when set to a positive integer. Returns false if the
/// variable is set but malformed.
bool apply_thread_env();

}  // namespace nusg
