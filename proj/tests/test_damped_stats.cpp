#include <cmath>
#include <vector>

#include "doctest.h"
#include "exfilscope/damped_stats.hpp"
#include "exfilscope/rng.hpp"

using namespace exfilscope;

namespace {

struct Obs {
    double x;
    double t;
};

// Brute-force closed forms: each observation contributes its value decayed
// by the full elapsed time to the final observation. O(n) per query, no
// shared state with the streaming implementation.
struct Oracle1D {
    double weight = 0.0, lin = 0.0, sq = 0.0;
    double mean = 0.0, std_dev = 0.0;
};

Oracle1D oracle_1d(const std::vector<Obs>& seq, double lambda) {
    Oracle1D o;
    if (seq.empty()) return o;
    double t_n = seq.back().t;
    for (const Obs& ob : seq) {
        double d = std::exp2(-lambda * (t_n - ob.t));
        o.weight += d;
        o.lin += ob.x * d;
        o.sq += ob.x * ob.x * d;
    }
    o.mean = o.lin / o.weight;
    o.std_dev = std::sqrt(std::fabs(o.sq / o.weight - o.mean * o.mean));
    return o;
}

struct PairEvent {
    int side;  // 0 = i, 1 = j
    double x;
    double t;
};

// Replays the residual-product sum from closed-form prefix means over the
// merged event sequence; quadratic in the event count, which keeps it
// independent of the streaming recurrence.
double oracle_sr(const std::vector<PairEvent>& events, double lambda) {
    auto prefix_mean = [&](int side, std::size_t upto, double at_t) {
        double w = 0.0, lin = 0.0;
        for (std::size_t k = 0; k <= upto; ++k) {
            if (events[k].side != side) continue;
            double d = std::exp2(-lambda * (at_t - events[k].t));
            w += d;
            lin += events[k].x * d;
        }
        return lin / w;
    };

    double sr = 0.0;
    double last_event_t = 0.0;
    double res_i = 0.0, res_j = 0.0;
    for (std::size_t e = 0; e < events.size(); ++e) {
        sr *= std::exp2(-lambda * (events[e].t - last_event_t));
        last_event_t = events[e].t;
        double mean = prefix_mean(events[e].side, e, events[e].t);
        double res = events[e].x - mean;
        if (events[e].side == 0) {
            sr += res * res_j;
            res_i = res;
        } else {
            sr += res * res_i;
            res_j = res;
        }
    }
    return sr;
}

double rel_err(double a, double b) {
    double denom = std::max({std::fabs(a), std::fabs(b), 1e-30});
    return std::fabs(a - b) / denom;
}

}  // namespace

TEST_CASE("decay factor closed-form spot values") {
    CHECK(decay_factor(5.0, 0.0) == 1.0);
    CHECK(decay_factor(5.0, 0.2) == 0.5);
    CHECK(decay_factor(0.01, 100.0) == 0.5);
    CHECK(decay_factor(3.0, 1.0) == doctest::Approx(0.125).epsilon(1e-15));
    CHECK_THROWS_AS(decay_factor(5.0, -0.1), NegativeDeltaT);
}

TEST_CASE("decay factor strictly decreases in elapsed time") {
    double prev = decay_factor(1.0, 0.0);
    for (double dt = 0.1; dt < 5.0; dt += 0.1) {
        double d = decay_factor(1.0, dt);
        CHECK(d < prev);
        prev = d;
    }
}

TEST_CASE("single observation reads weight 1, mean x, zero deviation") {
    DampedStat1D st;
    st.update(100.0, 0.0, 5.0);
    CHECK(st.weight == 1.0);
    CHECK(st.lin_sum == 100.0);
    CHECK(st.sq_sum == 10000.0);
    Stats1D q = st.query();
    CHECK(q.weight == 1.0);
    CHECK(q.mean == 100.0);
    CHECK(q.std_dev == 0.0);
    CHECK(st.last_residual == 0.0);
}

TEST_CASE("two equal packets 0.2 s apart at lambda 5 halve the history") {
    DampedStat1D st;
    st.update(100.0, 0.0, 5.0);
    st.update(100.0, 0.2, 5.0);
    CHECK(st.weight == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(st.lin_sum == doctest::Approx(150.0).epsilon(1e-15));
    CHECK(st.sq_sum == doctest::Approx(15000.0).epsilon(1e-15));
    Stats1D q = st.query();
    CHECK(q.weight == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(q.mean == doctest::Approx(100.0).epsilon(1e-15));
    CHECK(q.std_dev == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("x=0 then x=100 at the same instant") {
    DampedStat1D st;
    st.update(0.0, 0.0, 5.0);
    st.update(100.0, 0.0, 5.0);
    Stats1D q = st.query();
    CHECK(q.weight == 2.0);
    CHECK(q.mean == doctest::Approx(50.0).epsilon(1e-15));
    CHECK(q.std_dev == doctest::Approx(50.0).epsilon(1e-15));
}

TEST_CASE("fresh stat queries to zeros") {
    DampedStat1D st;
    Stats1D q = st.query();
    CHECK(q.weight == 0.0);
    CHECK(q.mean == 0.0);
    CHECK(q.std_dev == 0.0);
}

TEST_CASE("clock regression throws") {
    DampedStat1D st;
    st.update(10.0, 1.0, 5.0);
    CHECK_THROWS_AS(st.update(10.0, 0.5, 5.0), NegativeDeltaT);
}

TEST_CASE("pair first update leaves SR at zero") {
    DampedPair2D pair;
    pair.update(PairSide::I, 100.0, 0.0, 5.0);
    CHECK(pair.sr == 0.0);
}

TEST_CASE("pair residual product accumulates") {
    // side i holds residual 10, then side j produces residual 5 at the same
    // instant: SR increases by 50
    DampedPair2D pair;
    pair.stream_i.last_residual = 10.0;
    pair.stream_i.weight = 1.0;
    pair.stream_j.update(95.0, 0.0, 5.0);     // residual 0 after first update
    double before = pair.sr;
    pair.update(PairSide::J, 105.0, 0.0, 5.0);  // mean 100, residual 5
    CHECK(pair.sr - before == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("one-sided traffic keeps SR at zero") {
    DampedPair2D pair;
    Rng rng(5);
    double t = 0.0;
    for (int i = 0; i < 200; ++i) {
        pair.update(PairSide::I, rng.uniform(60.0, 1514.0), t, 1.0);
        t += rng.uniform(0.0, 0.2);
    }
    CHECK(pair.sr == 0.0);
    CHECK(pair.query().covariance == 0.0);
}

TEST_CASE("2D query spot values") {
    DampedPair2D pair;
    SUBCASE("3-4-5 magnitude") {
        pair.stream_i.weight = 1.0;
        pair.stream_i.lin_sum = 3.0;
        pair.stream_i.sq_sum = 9.0;
        pair.stream_j.weight = 1.0;
        pair.stream_j.lin_sum = 4.0;
        pair.stream_j.sq_sum = 16.0;
        CHECK(pair.query().magnitude == doctest::Approx(5.0).epsilon(1e-15));
    }
    SUBCASE("fresh pair is all zeros") {
        Stats2D q = pair.query();
        CHECK(q.magnitude == 0.0);
        CHECK(q.radius == 0.0);
        CHECK(q.covariance == 0.0);
        CHECK(q.correlation == 0.0);
    }
    SUBCASE("constructed covariance and correlation") {
        // sigma_i = 2, sigma_j = 1, SR = 6, w_i = 2, w_j = 1
        pair.stream_i.weight = 2.0;
        pair.stream_i.lin_sum = 0.0;
        pair.stream_i.sq_sum = 8.0;  // var 4
        pair.stream_j.weight = 1.0;
        pair.stream_j.lin_sum = 0.0;
        pair.stream_j.sq_sum = 1.0;  // var 1
        pair.sr = 6.0;
        Stats2D q = pair.query();
        CHECK(q.covariance == doctest::Approx(2.0).epsilon(1e-15));
        CHECK(q.correlation == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("streamed 1D statistics match the brute-force oracle") {
    Rng rng(1234);
    for (double lambda : kDecayLambdas) {
        std::vector<Obs> seq;
        DampedStat1D st;
        double t = 0.0;
        for (int i = 0; i < 2000; ++i) {
            double x = rng.uniform(60.0, 1514.0);
            seq.push_back({x, t});
            st.update(x, t, lambda);
            t += rng.uniform(0.0, 0.05);
        }
        Oracle1D o = oracle_1d(seq, lambda);
        Stats1D q = st.query();
        CHECK(rel_err(q.weight, o.weight) < 1e-9);
        CHECK(rel_err(q.mean, o.mean) < 1e-9);
        CHECK(rel_err(q.std_dev, o.std_dev) < 1e-9);
        CHECK(rel_err(st.lin_sum, o.lin) < 1e-9);
        CHECK(rel_err(st.sq_sum, o.sq) < 1e-9);
    }
}

TEST_CASE("streamed 2D statistics match the event-replay oracle") {
    Rng rng(777);
    for (double lambda : {5.0, 1.0, 0.01}) {
        std::vector<PairEvent> events;
        std::vector<Obs> side_i;
        DampedPair2D pair;
        double t = 0.0;
        for (int i = 0; i < 800; ++i) {
            double x = rng.uniform(60.0, 1514.0);
            int side = rng.uniform() < 0.5 ? 0 : 1;
            events.push_back({side, x, t});
            if (side == 0) side_i.push_back({x, t});
            pair.update(side == 0 ? PairSide::I : PairSide::J, x, t, lambda);
            t += rng.uniform(0.0, 0.05);
        }
        double sr_expect = oracle_sr(events, lambda);
        CHECK(rel_err(pair.sr, sr_expect) < 1e-9);

        Oracle1D oi = oracle_1d(side_i, lambda);
        // side i's stream decays to ITS last update, not the global one
        Stats1D qi = pair.stream_i.query();
        CHECK(rel_err(qi.weight, oi.weight) < 1e-9);
        CHECK(rel_err(qi.mean, oi.mean) < 1e-9);
    }
}

TEST_CASE("pure decay shrinks history") {
    DampedStat1D st;
    st.update(1000.0, 0.0, 1.0);
    st.update(1000.0, 0.1, 1.0);
    double w0 = st.weight, ls0 = st.lin_sum, ss0 = st.sq_sum;
    DampedStat1D later = st;
    later.update(10.0, 5.0, 1.0);
    DampedStat1D sooner = st;
    sooner.update(10.0, 1.0, 1.0);
    // history contribution = post-update value minus the new observation
    CHECK(later.weight - 1.0 < sooner.weight - 1.0);
    CHECK(later.lin_sum - 10.0 < sooner.lin_sum - 10.0);
    CHECK(later.sq_sum - 100.0 < sooner.sq_sum - 100.0);
    CHECK(sooner.weight - 1.0 < w0);
    CHECK(sooner.lin_sum - 10.0 < ls0);
    CHECK(sooner.sq_sum - 100.0 < ss0);
}

TEST_CASE("time-shift invariance") {
    Rng rng(31);
    std::vector<Obs> seq;
    double t = 0.0;
    for (int i = 0; i < 300; ++i) {
        seq.push_back({rng.uniform(60.0, 1514.0), t});
        t += rng.uniform(0.0, 0.1);
    }
    for (double lambda : kDecayLambdas) {
        DampedStat1D base, shifted;
        for (const Obs& o : seq) base.update(o.x, o.t, lambda);
        for (const Obs& o : seq) shifted.update(o.x, o.t + 1000.0, lambda);
        Stats1D qb = base.query(), qs = shifted.query();
        CHECK(rel_err(qb.weight, qs.weight) < 1e-12);
        CHECK(rel_err(qb.mean, qs.mean) < 1e-12);
        CHECK(rel_err(qb.std_dev, qs.std_dev) < 1e-9);
    }
}

TEST_CASE("scale covariance") {
    Rng rng(47);
    const double c = 3.5;
    DampedPair2D base, scaled;
    double t = 0.0;
    for (int i = 0; i < 500; ++i) {
        double x = rng.uniform(60.0, 1514.0);
        PairSide side = rng.uniform() < 0.5 ? PairSide::I : PairSide::J;
        base.update(side, x, t, 1.0);
        scaled.update(side, c * x, t, 1.0);
        t += rng.uniform(0.0, 0.05);
    }
    Stats2D qb = base.query(), qs = scaled.query();
    Stats1D b1 = base.stream_i.query(), s1 = scaled.stream_i.query();
    CHECK(rel_err(s1.mean, c * b1.mean) < 1e-9);
    CHECK(rel_err(s1.std_dev, c * b1.std_dev) < 1e-9);
    CHECK(rel_err(qs.magnitude, c * qb.magnitude) < 1e-9);
    CHECK(rel_err(qs.radius, c * c * qb.radius) < 1e-9);
    CHECK(rel_err(scaled.sr, c * c * base.sr) < 1e-9);
    CHECK(rel_err(qs.covariance, c * c * qb.covariance) < 1e-9);
    CHECK(rel_err(qs.correlation, qb.correlation) < 1e-9);
}

TEST_CASE("sigma is never negative and weight never negative") {
    Rng rng(8);
    DampedStat1D st;
    double t = 0.0;
    for (int i = 0; i < 1000; ++i) {
        st.update(rng.uniform(60.0, 1514.0), t, 5.0);
        t += rng.uniform(0.0, 2.0);
        Stats1D q = st.query();
        CHECK(q.std_dev >= 0.0);
        CHECK(q.weight >= 0.0);
        CHECK(std::isfinite(q.std_dev));
    }
}
