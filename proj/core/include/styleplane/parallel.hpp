#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace styleplane {

inline int default_worker_count() {
    const unsigned n = std::thread::hardware_concurrency();
    return n ? static_cast<int>(n) : 1;
}

// Static range split. fn(begin, end) must not touch shared mutable state.
inline void parallel_for(int n, int workers, const std::function<void(int, int)>& fn) {
    workers = std::clamp(workers, 1, std::max(n, 1));
    if (workers == 1 || n <= 1) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    const int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const int b = w * chunk;
        const int e = std::min(n, b + chunk);
        if (b >= e) break;
        threads.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& t : threads) t.join();
}

}  // namespace styleplane
