#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

namespace exfilscope {

struct NegativeDeltaT : std::invalid_argument {
    explicit NegativeDeltaT(const std::string& what) : std::invalid_argument(what) {}
};

// The five per-second decay rates and their matching effective windows
// (100 ms, 500 ms, 1.5 s, 10 s, 1 min).
inline constexpr std::array<double, 5> kDecayLambdas = {5.0, 3.0, 1.0, 0.1, 0.01};

// d = 2^(-lambda * dt), 1 at dt = 0, strictly decreasing in dt
inline double decay_factor(double lambda, double delta_t) {
    if (delta_t < 0.0)
        throw NegativeDeltaT("decay_factor: delta_t " + std::to_string(delta_t) + " < 0");
    return std::exp2(-lambda * delta_t);
}

struct Stats1D {
    double weight = 0.0;
    double mean = 0.0;
    double std_dev = 0.0;
};

struct Stats2D {
    double magnitude = 0.0;
    double radius = 0.0;
    double covariance = 0.0;
    double correlation = 0.0;
};

// Damped incremental statistics of one packet-size stream: decayed count
// weight, linear sum and squared sum, plus the residual of the most recent
// observation (consumed by the 2D covariance update).
struct DampedStat1D {
    double weight = 0.0;
    double lin_sum = 0.0;
    double sq_sum = 0.0;
    double last_t = 0.0;
    double last_residual = 0.0;

    void update(double x, double t, double lambda) {
        double d = decay_factor(lambda, t - last_t);
        weight = weight * d + 1.0;
        lin_sum = lin_sum * d + x;
        sq_sum = sq_sum * d + x * x;
        last_residual = x - lin_sum / weight;
        last_t = t;
    }

    // Statistics as of the last update; no decay is applied at read time.
    // An untouched stream reads all zeros.
    Stats1D query() const {
        if (weight <= 0.0) return {};
        double mean = lin_sum / weight;
        double var = sq_sum / weight - mean * mean;
        return {weight, mean, std::sqrt(std::fabs(var))};
    }
};

enum class PairSide : std::uint8_t { I, J };

// Two directional streams of one flow plus the decayed sum of residual
// products that approximates their covariance.
struct DampedPair2D {
    DampedStat1D stream_i;
    DampedStat1D stream_j;
    double sr = 0.0;
    double last_t = 0.0;

    void update(PairSide side, double x, double t, double lambda) {
        double d = decay_factor(lambda, t - last_t);
        sr *= d;
        DampedStat1D& updated = side == PairSide::I ? stream_i : stream_j;
        const DampedStat1D& other = side == PairSide::I ? stream_j : stream_i;
        updated.update(x, t, lambda);
        sr += updated.last_residual * other.last_residual;
        last_t = t;
    }

    // All 0/0 singularities (empty streams, zero variance) read as 0 so
    // downstream feature vectors stay finite.
    Stats2D query() const {
        Stats1D a = stream_i.query();
        Stats1D b = stream_j.query();
        Stats2D out;
        out.magnitude = std::sqrt(a.mean * a.mean + b.mean * b.mean);
        double var_a = a.std_dev * a.std_dev;
        double var_b = b.std_dev * b.std_dev;
        out.radius = std::sqrt(var_a * var_a + var_b * var_b);
        double w = a.weight + b.weight;
        out.covariance = w > 0.0 ? sr / w : 0.0;
        double sigma_prod = a.std_dev * b.std_dev;
        out.correlation = sigma_prod > 0.0 ? out.covariance / sigma_prod : 0.0;
        return out;
    }
};

}  // namespace exfilscope
