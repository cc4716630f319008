#ifndef PATCHLAB_SRC_PARALLEL_HPP
#define PATCHLAB_SRC_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace patchlab {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(chunk, begin, end) over [0, n) split into a FIXED number of chunks
// so floating-point reductions merged in chunk order are identical no matter
// how many worker threads actually run.
template <typename Fn>
void for_chunks(int n, int n_chunks, int threads, Fn&& fn) {
    if (n <= 0) return;
    n_chunks = std::clamp(n_chunks, 1, n);
    threads = std::clamp(resolve_threads(threads), 1, n_chunks);
    auto chunk_bounds = [&](int c) {
        int begin = static_cast<int>(static_cast<long long>(n) * c / n_chunks);
        int end = static_cast<int>(static_cast<long long>(n) * (c + 1) / n_chunks);
        return std::pair<int, int>(begin, end);
    };
    if (threads == 1) {
        for (int c = 0; c < n_chunks; ++c) {
            auto [b, e] = chunk_bounds(c);
            fn(c, b, e);
        }
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::atomic<bool> failed{false};
    auto worker = [&] {
        for (;;) {
            int c = next.fetch_add(1);
            if (c >= n_chunks || failed.load()) return;
            auto [b, e] = chunk_bounds(c);
            try {
                fn(c, b, e);
            } catch (...) {
                if (!failed.exchange(true)) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads) - 1);
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (failed.load() && err) std::rethrow_exception(err);
}

} // namespace patchlab

#endif
