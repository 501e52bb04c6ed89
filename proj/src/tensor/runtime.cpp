#include "nusg/runtime.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

extern "C" {
void openblas_set_num_threads(int num_threads);
int openblas_get_num_threads(void);
}

namespace nusg {

void set_compute_threads(int n) {
    if (n < 1) throw std::invalid_argument("thread count must be positive, got " + std::to_string(n));
    openblas_set_num_threads(n);
}

int compute_threads() { return openblas_get_num_threads(); }

bool apply_thread_env() {
    const char* env = std::getenv("NUSG_THREADS");
    if (!env || !*env) return true;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1 || n > 4096) return false;
    set_compute_threads(static_cast<int>(n));
    return true;
}

}  // namespace nusg
