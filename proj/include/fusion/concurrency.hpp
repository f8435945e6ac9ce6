#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace fusion {

/// Caps the number of requests simultaneously in flight against one backend.
class AdmissionGate {
public:
    explicit AdmissionGate(std::size_t max_in_flight) : capacity_(max_in_flight == 0 ? 1 : max_in_flight) {}

    void acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return in_flight_ < capacity_; });
        ++in_flight_;
        peak_ = std::max(peak_, in_flight_);
    }

    void release() {
        {
            std::lock_guard lock(mu_);
            --in_flight_;
        }
        cv_.notify_one();
    }

    /// Highest concurrency observed since construction.
    std::size_t peak() const {
        std::lock_guard lock(mu_);
        return peak_;
    }

    class Ticket {
    public:
        explicit Ticket(AdmissionGate& gate) : gate_(&gate) { gate_->acquire(); }
        ~Ticket() {
            if (gate_) gate_->release();
        }
        Ticket(const Ticket&) = delete;
        Ticket& operator=(const Ticket&) = delete;

    private:
        AdmissionGate* gate_;
    };

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::size_t capacity_;
    std::size_t in_flight_ = 0;
    std::size_t peak_ = 0;
};

/// Runs fn(i) for i in [0, count) on up to max_workers threads.
/// The first exception thrown by any worker is rethrown on the caller.
inline void parallel_for(std::size_t count, std::size_t max_workers, const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    std::size_t workers = std::min(count, max_workers == 0 ? std::size_t{1} : max_workers);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace fusion
