#pragma once

// Deterministic parallelism helpers.
//
// Results must not depend on the number of worker threads, so reductions
// always merge chunk results in ascending chunk order: chunks are computed
// in waves of `threads` tasks and folded sequentially after each wave. The
// floating-point association is therefore fixed by the chunk grid alone.

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace rescomp {

struct ChunkRange {
    std::size_t begin;
    std::size_t end;
};

/// Split [0, total) into chunks of at most chunk_size.
inline std::vector<ChunkRange> make_chunks(std::size_t total, std::size_t chunk_size) {
    std::vector<ChunkRange> chunks;
    if (chunk_size == 0) chunk_size = 1;
    for (std::size_t b = 0; b < total; b += chunk_size)
        chunks.push_back({b, std::min(b + chunk_size, total)});
    return chunks;
}

/// Compute per-chunk partials in parallel and fold them in chunk order.
///
/// `compute(range) -> Partial` must be a pure function of the range;
/// `merge(accumulator, partial)` is applied sequentially for chunk 0, 1, ...
template <typename Partial, typename Compute, typename Merge>
void chunked_reduce(const std::vector<ChunkRange>& chunks, unsigned threads,
                    Compute&& compute, Merge&& merge) {
    if (threads == 0) threads = 1;
    for (std::size_t wave = 0; wave < chunks.size(); wave += threads) {
        const std::size_t count = std::min<std::size_t>(threads, chunks.size() - wave);
        std::vector<Partial> partials(count);
        std::vector<std::exception_ptr> errors(count);
        if (count == 1) {
            partials[0] = compute(chunks[wave]);
        } else {
            std::vector<std::thread> pool;
            pool.reserve(count);
            for (std::size_t t = 0; t < count; ++t) {
                pool.emplace_back([&, t] {
                    try {
                        partials[t] = compute(chunks[wave + t]);
                    } catch (...) {
                        errors[t] = std::current_exception();
                    }
                });
            }
            for (auto& th : pool) th.join();
        }
        for (std::size_t t = 0; t < count; ++t) {
            if (errors[t]) std::rethrow_exception(errors[t]);
            merge(partials[t]);
        }
    }
}

/// Run `fn(i)` for i in [0, total) on `threads` workers; completion order is
/// unspecified, so this is only for tasks with independent side effects.
template <typename Fn>
void parallel_for(std::size_t total, unsigned threads, Fn&& fn) {
    if (threads <= 1 || total <= 1) {
        for (std::size_t i = 0; i < total; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < total; i += threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

}  // namespace rescomp
