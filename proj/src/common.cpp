#include "symdistill/common.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

namespace symdistill {

namespace {
std::atomic<int> g_workers{0};

int default_workers() {
    if (const char* env = std::getenv("SYMDISTILL_WORKERS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}
}  // namespace

int worker_count() {
    const int n = g_workers.load();
    return n > 0 ? n : default_workers();
}

void set_worker_count(int n) { g_workers.store(n > 0 ? n : 0); }

}  // namespace symdistill
