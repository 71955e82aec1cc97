#include "dr/threading.hpp"

#include <atomic>

namespace dr {

static std::atomic<int> g_jobs{0};

void set_job_count(int jobs) {
    g_jobs.store(jobs < 0 ? 0 : jobs);
}

int job_count() {
    int j = g_jobs.load();
    if (j <= 0) {
        unsigned hc = std::thread::hardware_concurrency();
        j = hc == 0 ? 1 : (int)hc;
    }
    return j;
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    if (n <= 0)
        return;
    int jobs = job_count();
    if (jobs <= 1 || n == 1) {
        for (int64_t i = 0; i < n; i++)
            fn(i);
        return;
    }
    int workers = (int)std::min<int64_t>(jobs, n);
    int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (int w = 0; w < workers; w++) {
        int64_t lo = w * chunk;
        int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi)
            break;
        threads.emplace_back([&fn, lo, hi] {
            for (int64_t i = lo; i < hi; i++)
                fn(i);
        });
    }
    for (auto& t : threads)
        t.join();
}

}  // namespace dr
