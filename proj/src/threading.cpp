#include "topformer/threading.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace topformer {

namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }

int num_threads() { return g_threads.load(); }

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
    const std::int64_t count = end - begin;
    if (count <= 0) return;

    const int workers = static_cast<int>(
        std::min<std::int64_t>(g_threads.load(), count));
    if (workers <= 1) {
        fn(begin, end);
        return;
    }

    const std::int64_t chunk = (count + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};

    auto run = [&](std::int64_t b, std::int64_t e) {
        try {
            fn(b, e);
        } catch (...) {
            if (!failed.exchange(true)) first_error = std::current_exception();
        }
    };

    for (int t = 1; t < workers; ++t) {
        const std::int64_t b = begin + t * chunk;
        const std::int64_t e = std::min(end, b + chunk);
        if (b >= e) break;
        pool.emplace_back(run, b, e);
    }
    run(begin, std::min(end, begin + chunk));
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace topformer
