#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "uatr/error.hpp"
#include "uatr/pruning.hpp"

using namespace uatr;

namespace {

std::vector<double> near_one_hot(std::size_t d, std::size_t hot, double delta = 1e-9) {
    std::vector<double> s(d, delta / static_cast<double>(d - 1));
    s[hot] = 1.0 - delta;
    return s;
}

}  // namespace

TEST_CASE("prune scores from the linear layer") {
    const std::vector<double> emb{0.3, -1.2, 2.0, 0.5};
    const PruneScore uniform = prune_score(emb, Tensor({16, 4}), Tensor({16}), 7);
    CHECK(uniform.segment_id == 7);
    for (double v : uniform.s) CHECK(v == doctest::Approx(1.0 / 16).epsilon(1e-15));

    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    Tensor w({16, 4}), b({16});
    for (double& v : w.data) v = g(rng);
    for (double& v : b.data) v = g(rng);
    const PruneScore a = prune_score(emb, w, b, 1);
    const PruneScore c = prune_score(emb, w, b, 2);
    CHECK(a.s == c.s);
    CHECK(std::accumulate(a.s.begin(), a.s.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (double v : a.s) CHECK(v >= 0.0);
    CHECK_THROWS_AS(prune_score(emb, Tensor({16, 3}), b, 0), ShapeError);
}

TEST_CASE("pairwise cross-entropy") {
    const std::vector<double> u(16, 1.0 / 16);
    CHECK(pairwise_ce(u, u) == doctest::Approx(std::log(16.0)).epsilon(1e-14));
    CHECK(pairwise_ce(u, u) == doctest::Approx(2.77259).epsilon(1e-5));
    const auto hot = near_one_hot(16, 3);
    CHECK(pairwise_ce(hot, hot) < 1e-5);

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> r(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> p(8), q(8);
        for (auto& v : p) v = r(rng);
        for (auto& v : q) v = r(rng);
        const double sp = std::accumulate(p.begin(), p.end(), 0.0), sq = std::accumulate(q.begin(), q.end(), 0.0);
        double oracle = 0;
        for (int k = 0; k < 8; ++k) oracle += -(p[k] / sp) * std::log(q[k] / sq);
        for (auto& v : p) v /= sp;
        for (auto& v : q) v /= sq;
        CHECK(std::abs(pairwise_ce(p, q) - oracle) < 1e-12);
        CHECK(pairwise_ce(p, q) >= pairwise_ce(p, p) - 1e-12);
    }
}

TEST_CASE("prune_batch warmup gate and pair rule") {
    const std::vector<int> ids{10, 11, 12, 13};
    PruneOptions opt;  // tau 10, epsilon 1e-5
    const auto hot = near_one_hot(16, 0);
    std::vector<PruneScore> pair{{hot, 10}, {hot, 11}};

    PruneState gated(ids, opt, 1);
    CHECK(gated.prune_batch(pair, 10).empty());
    CHECK(gated.active().size() == 4);

    PruneState st(ids, opt, 1);
    const auto removed = st.prune_batch(pair, 11);
    REQUIRE(removed.size() == 1);
    CHECK((removed[0] == 10 || removed[0] == 11));
    CHECK(st.active().size() == 3);
    REQUIRE(st.log().size() == 1);
    CHECK(st.log()[0].epoch == 11);
    CHECK(st.log()[0].kept_id + st.log()[0].pruned_id == 21);

    // Distinct near-one-hot scores are far apart: no pruning.
    PruneState far(ids, opt, 1);
    std::vector<PruneScore> distinct{{near_one_hot(16, 0), 12}, {near_one_hot(16, 5), 13}};
    CHECK(far.prune_batch(distinct, 20).empty());

    // Pruned ids are never reconsidered.
    CHECK(st.prune_batch(pair, 12).empty());
}

TEST_CASE("three mutually matching scores leave exactly one survivor") {
    // Pair loop: (0,1), (0,2), (1,2), skipping pruned members. Every tie-break
    // path removes exactly two, and any member can be the survivor.
    const auto hot = near_one_hot(16, 2);
    std::vector<PruneScore> batch{{hot, 0}, {hot, 1}, {hot, 2}};
    std::set<int> survivors;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        PruneState st(std::vector<int>{0, 1, 2}, PruneOptions{}, seed);
        const auto removed = st.prune_batch(batch, 11);
        CHECK(removed.size() == 2);
        REQUIRE(st.active().size() == 1);
        survivors.insert(*st.active().begin());
    }
    CHECK(survivors == std::set<int>{0, 1, 2});
}

TEST_CASE("symmetric comparison flag") {
    // H(a, b) is large but H(b, a) small: only the symmetric variant prunes.
    std::vector<double> a(4, 0.25);
    const std::vector<double> b{1.0 - 3e-13, 1e-13, 1e-13, 1e-13};
    PruneOptions opt;
    opt.epsilon = 2.0;  // H(b, a) = ln 4 ~ 1.386 < 2 < H(a, b)
    PruneState plain(std::vector<int>{0, 1}, opt, 3);
    CHECK(pairwise_ce(b, a) < 2.0);
    CHECK(pairwise_ce(a, b) > 2.0);
    std::vector<PruneScore> reversed{{a, 1}, {b, 0}};
    CHECK(plain.prune_batch(reversed, 11).empty());
    opt.symmetric = true;
    PruneState sym(std::vector<int>{0, 1}, opt, 3);
    CHECK(sym.prune_batch(reversed, 11).size() == 1);
}

TEST_CASE("early stopping traces") {
    SUBCASE("improving losses continue") {
        EarlyStop es(10);
        for (double l : {1.0, 0.9, 0.8}) CHECK(es.update(l) == StopDecision::keep_going);
    }
    SUBCASE("constant loss stops after the tenth non-improving epoch") {
        EarlyStop es(10);
        CHECK(es.update(1.0) == StopDecision::keep_going);
        for (int i = 1; i < 10; ++i) CHECK(es.update(1.0) == StopDecision::keep_going);
        CHECK(es.update(1.0) == StopDecision::stop);
    }
    SUBCASE("hand-simulated counter trace") {
        EarlyStop es(10);
        std::vector<double> losses{1.0};
        for (int i = 0; i < 9; ++i) losses.push_back(1.0);
        losses.push_back(0.5);
        for (int i = 0; i < 10; ++i) losses.push_back(0.5);
        int stopped_at = -1;
        for (std::size_t k = 0; k < losses.size(); ++k)
            if (es.update(losses[k]) == StopDecision::stop) {
                stopped_at = static_cast<int>(k);
                break;
            }
        CHECK(stopped_at == 20);
        CHECK(es.best() == 0.5);
    }
    SUBCASE("non-finite loss counts as no improvement") {
        EarlyStop es(2);
        es.update(1.0);
        CHECK(es.update(std::nan("")) == StopDecision::keep_going);
        CHECK(es.epochs_since_improve() == 1);
    }
}

TEST_CASE("prune log round trip") {
    const auto path = (std::filesystem::temp_directory_path() / "uatr_prune_log.tsv").string();
    std::vector<PruneRecord> log{{11, 3, 4, 1e-7}, {12, 5, 9, 2.5e-6}};
    write_prune_log(path, log, {{3, 0}, {4, 0}});
    const auto back = read_prune_log(path);
    REQUIRE(back.size() == 2);
    CHECK(back[1].pruned_id == 9);
    CHECK(back[0].ce == doctest::Approx(1e-7));
    std::filesystem::remove(path);
}
