#pragma once

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "threebody/dynamics.hpp"

namespace testing {

inline double rel_err(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Random nonsingular state with positions in [-1, 1] and velocities in [-0.5, 0.5].
inline threebody::State random_state(std::mt19937_64& rng, int dim) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (;;) {
        threebody::State s(dim);
        for (int b = 0; b < threebody::kBodies; ++b)
            for (int k = 0; k < dim; ++k) {
                s.positions(k, b) = u(rng);
                s.velocities(k, b) = 0.5 * u(rng);
            }
        s.masses << 0.5 + 0.5 * (u(rng) + 1), 0.5 + 0.5 * (u(rng) + 1), 0.5 + 0.5 * (u(rng) + 1);
        if (threebody::min_separation(s) > 0.2) return s;
    }
}

// Fresh scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) {
        path = std::filesystem::temp_directory_path() / ("threebody_test_" + name + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace testing
