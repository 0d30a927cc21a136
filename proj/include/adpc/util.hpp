#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace adpc::util {

// FNV-1a 64-bit; used to fingerprint configs in checkpoint headers.
inline uint64_t fnv1a(const std::string& data) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Runs fn(i) for i in [0, n) across up to n_threads workers. Results must be
// written to disjoint slots; determinism then comes from merging those slots
// in index order afterwards, independent of scheduling.
inline void parallel_for(size_t n, int n_threads,
                         const std::function<void(size_t)>& fn) {
    if (n == 0) return;
    unsigned workers = n_threads > 0 ? static_cast<unsigned>(n_threads)
                                     : std::thread::hardware_concurrency();
    if (workers <= 1 || n == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    workers = std::min<unsigned>(workers, static_cast<unsigned>(n));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// Shortest decimal that round-trips a double; keeps CSV/JSON artifacts
// byte-stable across runs.
std::string format_double(double v);

}  // namespace adpc::util
