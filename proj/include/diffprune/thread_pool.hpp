// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace diffprune {

namespace detail {
inline thread_local bool in_pool_worker = false;

// Training allocates and frees multi-megabyte scratch every step; keeping
// those chunks on the heap free-list instead of mmap/munmap cycles saves the
// page-fault cost of touching them anew each iteration.
#if defined(__GLIBC__)
inline const bool malloc_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();
#endif
}  // namespace detail

/// Persistent worker pool used for intra-op parallelism. Work items write to
/// disjoint output ranges, so results do not depend on the thread count; the
/// pool only changes wall time, never numbers.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int threads() const { return static_cast<int>(workers_.size()) + 1; }

    /// Runs fn(begin, end) over a static partition of [0, n). Runs inline when
    /// the pool is unavailable or we are already inside a worker.
    void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
        if (n <= 0) return;
        int nthreads = threads();
        if (nthreads <= 1 || n == 1 || detail::in_pool_worker) {
            fn(0, n);
            return;
        }
        int chunks = static_cast<int>(std::min<int64_t>(nthreads, n));
        int64_t base = n / chunks, rem = n % chunks;
        {
            std::unique_lock<std::mutex> lock(mu_);
            pending_ = chunks - 1;
            int64_t begin = 0;
            for (int c = 0; c < chunks; ++c) {
                int64_t end = begin + base + (c < rem ? 1 : 0);
                if (c < chunks - 1) tasks_.push_back([&fn, begin, end] { fn(begin, end); });
                else main_task_ = [&fn, begin, end] { fn(begin, end); };
                begin = end;
            }
        }
        cv_.notify_all();
        main_task_();  // the calling thread takes the last chunk
        std::unique_lock<std::mutex> lock(mu_);
        done_cv_.wait(lock, [this] { return pending_ == 0 && tasks_.empty(); });
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

private:
    ThreadPool() {
        int n = static_cast<int>(std::thread::hardware_concurrency());
        if (n < 1) n = 1;
        if (const char* env = std::getenv("DIFFPRUNE_THREADS")) {
            int cap = std::atoi(env);
            if (cap >= 1 && cap < n) n = cap;
        }
        for (int i = 0; i < n - 1; ++i) workers_.emplace_back([this] { worker_loop(); });
    }

    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    void worker_loop() {
        detail::in_pool_worker = true;
        for (;;) {
            std::function<void()> task;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_.wait(lock, [this] { return stop_ || !tasks_.empty(); });
                if (stop_ && tasks_.empty()) return;
                task = std::move(tasks_.back());
                tasks_.pop_back();
            }
            task();
            {
                std::unique_lock<std::mutex> lock(mu_);
                --pending_;
            }
            done_cv_.notify_one();
        }
    }

    std::vector<std::thread> workers_;
    std::vector<std::function<void()>> tasks_;
    std::function<void()> main_task_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    int pending_ = 0;
    bool stop_ = false;
};

inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    ThreadPool::instance().parallel_for(n, fn);
}

}  // namespace diffprune
