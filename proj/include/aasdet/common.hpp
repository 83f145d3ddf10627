#pragma once

#include <algorithm>
#include <cstdint>
#include <cstddef>
#include <exception>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace aas {

/// Base error type. The message is prefixed with the owning module, e.g.
/// "volume: size mismatch".
class Error : public std::runtime_error {
public:
    Error(std::string_view module, const std::string& what)
        : std::runtime_error(std::string(module) + ": " + what), module_(module) {}

    [[nodiscard]] const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Stage-local seed: hash(master, stage, item). Stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage,
                                 std::string_view item = {}) noexcept {
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ fnv1a(stage));
    h = splitmix64(h ^ fnv1a(item));
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index must
/// write only its own output slot; results are then independent of scheduling.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline unsigned default_threads() noexcept {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

}  // namespace aas
