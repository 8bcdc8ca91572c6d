#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace pseudoblur {

inline int worker_count() {
    static int n = [] {
        if (const char* env = std::getenv("PSEUDOBLUR_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }();
    return n;
}

// Static block partition; every element is written by exactly one worker, so
// results are bitwise identical for any thread count. `work_hint` is the
// approximate total scalar-op count; small jobs run serially to avoid
// thread-spawn overhead.
template <typename F>
void parallel_for(int begin, int end, F&& body, std::size_t work_hint = ~std::size_t{0}) {
    const int n = end - begin;
    if (n <= 0) return;
    int workers = std::min(worker_count(), n);
    if (workers <= 1 || n < 4 || work_hint < (std::size_t{1} << 20)) {
        for (int i = begin; i < end; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    const int chunk = (n + workers - 1) / workers;
    for (int w = 1; w < workers; ++w) {
        int lo = begin + w * chunk;
        int hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (int i = lo; i < hi; ++i) body(i);
        });
    }
    int hi0 = std::min(end, begin + chunk);
    for (int i = begin; i < hi0; ++i) body(i);
    for (auto& t : pool) t.join();
}

} // namespace pseudoblur
