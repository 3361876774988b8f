#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace vibra_sr {

// Thrown for contract violations (bad arguments, malformed files, shape
// mismatches). The CLI maps these to exit code 2, runtime failures to 1.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class RuntimeFailure : public std::runtime_error {
public:
    explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG. SplitMix64 core so that streams are reproducible across
// platforms and independent of libstdc++ distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value per call (spare cached).
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    uint64_t next_below(uint64_t n) { return n ? next_u64() % n : 0; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream (e.g. per epoch) without advancing this one.
    Rng fork(uint64_t salt) const {
        return Rng(state_ ^ (0xd1342543de82ef95ULL * (salt + 1)));
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Fork-join pool used by the heavy kernels (conv, matmul, STFT, scan).
// Work is split into index chunks processed in a fixed partition, and all
// reductions happen on the calling thread in chunk order, so results are
// bit-identical regardless of thread count.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool(default_threads());
        return pool;
    }

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    static bool on_pool_thread() { return depth() > 0; }

    // Runs body(chunk) for chunk in [0, chunks); blocks until all complete.
    void run_chunks(int chunks, const std::function<void(int)>& body) {
        if (chunks <= 1 || workers_.empty() || on_pool_thread()) {
            ++depth();
            for (int c = 0; c < chunks; ++c) body(c);
            --depth();
            return;
        }
        auto task = std::make_shared<Task>();
        task->body = &body;
        task->chunks = chunks;
        task->pending = chunks;
        {
            std::lock_guard<std::mutex> lock(mu_);
            current_ = task;
            cv_start_.notify_all();
        }
        ++depth();
        drain(*task);
        --depth();
        std::unique_lock<std::mutex> lock(mu_);
        cv_done_.wait(lock, [&] { return task->pending.load() == 0; });
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            stop_ = true;
            cv_start_.notify_all();
        }
        for (auto& t : workers_) t.join();
    }

private:
    struct Task {
        const std::function<void(int)>* body = nullptr;
        int chunks = 0;
        std::atomic<int> next{0};
        std::atomic<int> pending{0};
    };

    explicit ThreadPool(int threads) {
        for (int i = 0; i < threads - 1; ++i) {
            workers_.emplace_back([this] { worker_main(); });
        }
    }

    static int default_threads() {
        if (const char* env = std::getenv("VIBRA_SR_THREADS")) {
            int n = std::atoi(env);
            if (n >= 1) return n;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc ? static_cast<int>(hc) : 1;
    }

    static int& depth() {
        thread_local int d = 0;
        return d;
    }

    // The body pointer stays valid while pending > 0: the caller cannot leave
    // run_chunks before the last chunk finishes.
    void drain(Task& task) {
        for (;;) {
            int c = task.next.fetch_add(1);
            if (c >= task.chunks) break;
            (*task.body)(c);
            if (task.pending.fetch_sub(1) == 1) {
                std::lock_guard<std::mutex> lock(mu_);
                cv_done_.notify_all();
            }
        }
    }

    void worker_main() {
        std::shared_ptr<Task> last;
        for (;;) {
            std::shared_ptr<Task> task;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_start_.wait(lock, [&] { return stop_ || current_ != last; });
                if (stop_) return;
                task = current_;
                last = task;
            }
            if (!task) continue;
            ++depth();
            drain(*task);
            --depth();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_start_;
    std::condition_variable cv_done_;
    std::vector<std::thread> workers_;
    std::shared_ptr<Task> current_;
    bool stop_ = false;
};

// Splits [begin, end) into contiguous chunks and runs them on the pool.
// Falls back to inline execution when the range is below min_parallel.
inline void parallel_for(int64_t begin, int64_t end,
                         const std::function<void(int64_t, int64_t)>& body,
                         int64_t min_parallel = 4) {
    int64_t n = end - begin;
    if (n <= 0) return;
    ThreadPool& pool = ThreadPool::instance();
    int chunks = pool.size();
    if (n < min_parallel || chunks <= 1) {
        body(begin, end);
        return;
    }
    if (chunks > n) chunks = static_cast<int>(n);
    int64_t per = (n + chunks - 1) / chunks;
    pool.run_chunks(chunks, [&](int c) {
        int64_t lo = begin + per * c;
        int64_t hi = std::min(end, lo + per);
        if (lo < hi) body(lo, hi);
    });
}

}  // namespace vibra_sr
