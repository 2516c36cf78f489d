#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace proxsurv {

// Input/validation problems: bad CSV cells, malformed configs, role mismatches.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical/statistical failures: non-convergence, singular systems, positivity violations.
struct EstimationError : std::runtime_error {
    explicit EstimationError(const std::string& msg) : std::runtime_error(msg) {}
};

inline double expit(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Deterministic random stream. Distributions are hand-rolled on top of
// mt19937_64 so that replication streams are bit-stable across standard
// library implementations.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : gen_(seed) {}
    RngStream(std::uint64_t master, std::uint64_t index) {
        std::seed_seq seq{static_cast<std::uint32_t>(master & 0xffffffffu),
                          static_cast<std::uint32_t>(master >> 32),
                          static_cast<std::uint32_t>(index & 0xffffffffu),
                          static_cast<std::uint32_t>(index >> 32)};
        gen_.seed(seq);
    }

    double uniform01() {
        // 53-bit uniform in (0,1); never returns exactly 0, safe for logs.
        const std::uint64_t r = gen_() >> 11;
        return (static_cast<double>(r) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01();
        const double u2 = uniform01();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double exponential(double rate) { return -std::log(uniform01()) / rate; }

    bool bernoulli(double p) { return uniform01() < p; }

    std::uint64_t raw() { return gen_(); }

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Inverse standard-normal CDF: Acklam's rational approximation polished by one
// Halley step; |relative error| < 1e-15 over (0,1).
double normal_quantile(double p);

// Nodes and weights of the m-point Gauss-Legendre rule on [-1,1].
void gauss_legendre(int m, std::vector<double>& nodes, std::vector<double>& weights);

// Composite rule on [a,b]: panels of the 16-point rule, total_nodes must be a
// positive multiple of 16. Fills (node, weight) pairs in ascending order.
void composite_gl16(double a, double b, int total_nodes,
                    std::vector<double>& nodes, std::vector<double>& weights);

}  // namespace proxsurv
