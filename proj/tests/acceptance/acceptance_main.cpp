// Acceptance gate: runs every release criterion end to end and prints one
// PASS/FAIL line per criterion. Exits non-zero if any criterion fails.
//
// Criteria are registered in acceptance_criteria.hpp; this file is only the
// runner so the list stays in one place.

#include <chrono>
#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <vector>

namespace acceptance {

struct Criterion {
    std::string name;
    std::function<void()> run;  // throws std::runtime_error on failure
};

std::vector<Criterion>& registry() {
    static std::vector<Criterion> r;
    return r;
}

struct Register {
    Register(std::string name, std::function<void()> fn) {
        registry().push_back({std::move(name), std::move(fn)});
    }
};

}  // namespace acceptance

#include "acceptance_criteria.hpp"

int main() {
    using clock = std::chrono::steady_clock;
    int failed = 0;
    const auto& checks = acceptance::registry();
    std::printf("running %zu acceptance criteria\n", checks.size());
    for (const auto& c : checks) {
        auto t0 = clock::now();
        std::string err;
        try {
            c.run();
        } catch (const std::exception& e) {
            err = e.what();
        } catch (...) {
            err = "unknown exception";
        }
        double secs = std::chrono::duration<double>(clock::now() - t0).count();
        if (err.empty()) {
            std::printf("PASS  %-58s (%.1fs)\n", c.name.c_str(), secs);
        } else {
            std::printf("FAIL  %-58s (%.1fs)\n      %s\n", c.name.c_str(), secs, err.c_str());
            ++failed;
        }
        std::fflush(stdout);
    }
    if (failed) {
        std::printf("%d/%zu criteria FAILED\n", failed, checks.size());
        return 1;
    }
    std::printf("all %zu criteria passed\n", checks.size());
    return 0;
}
