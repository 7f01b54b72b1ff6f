#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace fedsim::detail {

// Runs fn(0..n-1) either inline or on one thread per task. Each task must
// write only to its own output slot. The first exception is rethrown after
// all threads have joined.
template <class Fn>
void run_tasks(std::size_t n, bool parallel, Fn&& fn) {
  if (!parallel || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> threads;
    threads.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      threads.emplace_back([&, i] {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace fedsim::detail
