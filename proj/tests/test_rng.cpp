#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "mtlab/rng.hpp"

using namespace mtlab;

TEST_CASE("splitmix64 matches the reference sequence") {
    // Reference values for the published splitmix64 algorithm seeded with 0.
    std::uint64_t s = 0;
    CHECK(splitmix64(s) == 0xE220A8397B1DCDAFULL);
    CHECK(splitmix64(s) == 0x6E789E6AA1B965F4ULL);
    CHECK(splitmix64(s) == 0x06C45D188009454FULL);
}

TEST_CASE("fnv1a matches reference vectors") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);   // offset basis
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);  // published FNV-1a test vector
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("derive_seed is deterministic and label-sensitive") {
    CHECK(derive_seed(42, "x") == derive_seed(42, "x"));
    CHECK(derive_seed(42, "x") != derive_seed(42, "y"));
    CHECK(derive_seed(42, "x") != derive_seed(43, "x"));
}

TEST_CASE("identical seeds give identical streams, different seeds differ") {
    Rng a(7), b(7), c(8);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
        all_equal = all_equal && (x == y);
        any_diff = any_diff || (x != z);
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("state round trip resumes the exact stream") {
    Rng a(123);
    for (int i = 0; i < 10; ++i) a.next_u64();
    const auto snapshot = a.state();
    std::vector<std::uint64_t> expect;
    for (int i = 0; i < 20; ++i) expect.push_back(a.next_u64());
    Rng b;
    b.set_state(snapshot);
    for (auto v : expect) CHECK(b.next_u64() == v);
}

TEST_CASE("uniform_u64 stays in range and is roughly uniform") {
    Rng rng(1);
    const std::uint64_t n = 6;
    const int draws = 60000;
    std::map<std::uint64_t, int> hist;
    for (int i = 0; i < draws; ++i) {
        const auto v = rng.uniform_u64(n);
        REQUIRE(v < n);
        ++hist[v];
    }
    // Binomial sd ~ sqrt(p(1-p)N) ~ 91; allow 5 sd.
    for (std::uint64_t k = 0; k < n; ++k)
        CHECK(std::abs(hist[k] - draws / static_cast<int>(n)) < 460);
}

TEST_CASE("uniform_int covers both inclusive endpoints") {
    Rng rng(2);
    bool lo_seen = false, hi_seen = false;
    for (int i = 0; i < 1000; ++i) {
        const auto v = rng.uniform_int(-3, 4);
        REQUIRE(v >= -3);
        REQUIRE(v <= 4);
        lo_seen = lo_seen || v == -3;
        hi_seen = hi_seen || v == 4;
    }
    CHECK(lo_seen);
    CHECK(hi_seen);
}

TEST_CASE("uniform_real lies in [0,1) with mean near one half") {
    Rng rng(3);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform_real();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.005);  // sd of mean ~ 0.0009
}

TEST_CASE("bernoulli frequency tracks p") {
    Rng rng(4);
    int hits = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) hits += rng.bernoulli(0.3) ? 1 : 0;
    CHECK(std::abs(hits / static_cast<double>(n) - 0.3) < 0.01);  // sd ~ 0.0014
}

TEST_CASE("normal has mean zero and unit variance") {
    Rng rng(5);
    double sum = 0.0, sumsq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sumsq += x * x;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("categorical draws follow the weights") {
    Rng rng(6);
    const std::vector<double> w = {1.0, 2.0, 7.0};
    std::array<int, 3> hist{};
    const int n = 90000;
    for (int i = 0; i < n; ++i) ++hist[rng.categorical(w)];
    CHECK(std::abs(hist[0] / static_cast<double>(n) - 0.1) < 0.01);
    CHECK(std::abs(hist[1] / static_cast<double>(n) - 0.2) < 0.01);
    CHECK(std::abs(hist[2] / static_cast<double>(n) - 0.7) < 0.01);
}
