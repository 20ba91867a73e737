// SPDX-License-Identifier: Apache-2.0
#include "a2f/parallel.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace a2f {
namespace {

class Pool {
 public:
    Pool() {
        int n = static_cast<int>(std::thread::hardware_concurrency());
        if (const char* env = std::getenv("A2F_THREADS")) {
            n = std::atoi(env);
        }
        n = std::clamp(n, 1, 64);
        n_threads_ = n;
        for (int i = 1; i < n; ++i) {
            workers_.emplace_back([this, i] { worker_loop(i); });
        }
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    int size() const { return n_threads_; }

    void run(const std::function<void(int)>& task) {
        if (n_threads_ == 1) {
            task(0);
            return;
        }
        {
            std::lock_guard<std::mutex> lk(mu_);
            task_ = &task;
            remaining_ = n_threads_ - 1;
            ++generation_;
        }
        cv_.notify_all();
        task(0);
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return remaining_ == 0; });
        task_ = nullptr;
    }

 private:
    void worker_loop(int id) {
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int)>* task = nullptr;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                task = task_;
            }
            (*task)(id);
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (--remaining_ == 0) done_cv_.notify_one();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int)>* task_ = nullptr;
    uint64_t generation_ = 0;
    int remaining_ = 0;
    int n_threads_ = 1;
    bool stop_ = false;
};

Pool& pool() {
    static Pool p;
    return p;
}

}  // namespace

int thread_count() { return pool().size(); }

void parallel_for(size_t n, size_t min_grain,
                  const std::function<void(size_t, size_t)>& fn) {
    if (n == 0) return;
    const size_t nt = static_cast<size_t>(pool().size());
    if (nt == 1 || n < std::max<size_t>(2, min_grain * 2)) {
        fn(0, n);
        return;
    }
    const size_t chunk = (n + nt - 1) / nt;
    pool().run([&](int tid) {
        const size_t b = std::min(n, static_cast<size_t>(tid) * chunk);
        const size_t e = std::min(n, b + chunk);
        if (b < e) fn(b, e);
    });
}

}  // namespace a2f
