#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "driftlab/diffusion/denoiser.hpp"
#include "driftlab/gradcore/tensor.hpp"

namespace testutil {

/// Hand-rolled generator for property tests. Deliberately independent of
/// the library RNG so oracles do not share code with the system under test.
class Gen {
public:
    explicit Gen(std::uint64_t seed) : eng_(seed) {}
    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
    double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(eng_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng_); }
    dlab::Tensor tensor(dlab::Shape shape, double sd = 1.0) {
        dlab::Tensor t(std::move(shape));
        for (auto& v : t.data()) v = normal(sd);
        return t;
    }
    /// Random probability vector with some exact zeros.
    std::vector<double> simplex(std::size_t n, double zero_prob = 0.3) {
        std::vector<double> v(n, 0.0);
        double total = 0.0;
        for (auto& x : v) {
            x = uniform() < zero_prob ? 0.0 : uniform(0.01, 1.0);
            total += x;
        }
        if (total == 0.0) {
            v[static_cast<std::size_t>(integer(0, static_cast<int>(n) - 1))] = 1.0;
            total = 1.0;
        }
        for (auto& x : v) x /= total;
        return v;
    }
    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

/// A denoiser small enough for exhaustive checks.
inline dlab::DenoiserConfig tiny_denoiser() {
    dlab::DenoiserConfig c;
    c.height = 4;
    c.width = 4;
    c.channels = 3;
    c.hidden = 16;
    c.blocks = 2;
    c.time_features = 8;
    c.embed_dim = 8;
    c.base_tokens = 4;
    c.rare_tokens = 2;
    c.timesteps = 20;
    return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("driftlab_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testutil
