#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <random>

namespace shardex::sim {

// Deterministic discrete-event scheduler: single thread of control, logical
// milliseconds, ties broken by insertion order. Every source of randomness in
// a simulation draws from the seeded generator here.
class Scheduler {
public:
    explicit Scheduler(std::uint64_t seed) : rng_(seed) {}

    using Task = std::function<void()>;

    void at(std::uint64_t time, Task task) {
        queue_.push(Item{time < now_ ? now_ : time, next_insert_++, std::move(task)});
    }
    void after(std::uint64_t delay, Task task) { at(now_ + delay, std::move(task)); }

    bool step() {
        if (queue_.empty()) return false;
        Item item = std::move(const_cast<Item&>(queue_.top()));
        queue_.pop();
        now_ = item.time;
        item.task();
        return true;
    }

    // Drains the queue; the guard bounds runaway retry loops.
    void run_until_idle(std::uint64_t max_time = ~0ull) {
        while (!queue_.empty() && queue_.top().time <= max_time) step();
    }

    std::uint64_t now() const { return now_; }
    bool idle() const { return queue_.empty(); }
    std::mt19937_64& rng() { return rng_; }

private:
    struct Item {
        std::uint64_t time;
        std::uint64_t seq;
        Task task;

        bool operator>(const Item& other) const {
            return time != other.time ? time > other.time : seq > other.seq;
        }
    };

    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue_;
    std::uint64_t now_ = 0;
    std::uint64_t next_insert_ = 0;
    std::mt19937_64 rng_;
};

} // namespace shardex::sim
