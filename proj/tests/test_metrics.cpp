#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <map>

#include "fedlora/linalg.hpp"
#include "fedlora/metrics.hpp"

using namespace fedlora;

TEST_SUITE("metrics") {

TEST_CASE("perfect predictions give a diagonal matrix") {
    const std::vector<int> y{0, 1, 2, 1, 0};
    const ConfusionMatrix cm = confusion_from_predictions(y, y, 3);
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p) CHECK(cm.at(t, p) == (t == p ? (t == 2 ? 1 : 2) : 0));
}

TEST_CASE("single pair lands in the right cell") {
    const ConfusionMatrix cm =
        confusion_from_predictions(std::vector<int>{2}, std::vector<int>{0}, 3);
    CHECK(cm.at(2, 0) == 1);
    CHECK(cm.total() == 1);
}

TEST_CASE("random tally matches a per-pair oracle") {
    RngStream rng(7);
    std::vector<int> yt(200), yp(200);
    for (auto& v : yt) v = int(rng.next_below(5));
    for (auto& v : yp) v = int(rng.next_below(5));
    const ConfusionMatrix cm = confusion_from_predictions(yt, yp, 5);
    std::map<std::pair<int, int>, int64_t> oracle;
    for (size_t i = 0; i < yt.size(); ++i) ++oracle[{yt[i], yp[i]}];
    for (int t = 0; t < 5; ++t)
        for (int p = 0; p < 5; ++p) {
            const auto it = oracle.find({t, p});
            CHECK(cm.at(t, p) == (it == oracle.end() ? 0 : it->second));
        }
}

TEST_CASE("out-of-range labels are rejected") {
    CHECK_THROWS_AS(confusion_from_predictions(std::vector<int>{3}, std::vector<int>{0}, 3),
                    std::invalid_argument);
    CHECK_THROWS_AS(confusion_from_predictions(std::vector<int>{0}, std::vector<int>{-1}, 3),
                    std::invalid_argument);
}

TEST_CASE("all-correct metrics are 1.0") {
    const std::vector<int> y{0, 1, 1, 0};
    const ConfusionMatrix cm = confusion_from_predictions(y, y, 2);
    const MetricsReport r = macro_metrics(cm, std::vector<double>{0.1, 0.2, 0.1, 0.2});
    CHECK(r.accuracy == 1.0);
    CHECK(r.macro_precision == 1.0);
    CHECK(r.macro_recall == 1.0);
    CHECK(r.macro_f1 == 1.0);
    CHECK(r.mean_loss == doctest::Approx(0.15));
}

TEST_CASE("hand-tallied macro example") {
    const std::vector<int> yt{0, 0, 1, 1};
    const std::vector<int> yp{0, 1, 1, 1};
    const MetricsReport r =
        macro_metrics(confusion_from_predictions(yt, yp, 2), std::vector<double>{});
    CHECK(r.accuracy == doctest::Approx(0.75));
    CHECK(r.macro_precision == doctest::Approx(5.0 / 6.0));
    CHECK(r.macro_recall == doctest::Approx(0.75));
    CHECK(r.macro_f1 == doctest::Approx((2.0 / 3.0 + 0.8) / 2.0));
}

TEST_CASE("all wrong in two classes") {
    const std::vector<int> yt{0, 1};
    const std::vector<int> yp{1, 0};
    const MetricsReport r =
        macro_metrics(confusion_from_predictions(yt, yp, 2), std::vector<double>{});
    CHECK(r.accuracy == 0.0);
    CHECK(r.macro_f1 == 0.0);
}

TEST_CASE("empty matrix is rejected") {
    ConfusionMatrix cm(3);
    CHECK_THROWS_AS(macro_metrics(cm, std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("permutation of example order leaves metrics unchanged") {
    RngStream rng(17);
    std::vector<int> yt(100), yp(100);
    for (auto& v : yt) v = int(rng.next_below(4));
    for (auto& v : yp) v = int(rng.next_below(4));
    const MetricsReport a =
        macro_metrics(confusion_from_predictions(yt, yp, 4), std::vector<double>{});
    std::vector<size_t> order(100);
    for (size_t i = 0; i < 100; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<int> yt2, yp2;
    for (size_t i : order) {
        yt2.push_back(yt[i]);
        yp2.push_back(yp[i]);
    }
    const MetricsReport b =
        macro_metrics(confusion_from_predictions(yt2, yp2, 4), std::vector<double>{});
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.macro_precision == b.macro_precision);
    CHECK(a.macro_recall == b.macro_recall);
    CHECK(a.macro_f1 == b.macro_f1);
}

TEST_CASE("majority-class predictor achieves exactly the majority frequency") {
    const std::vector<int> yt{0, 0, 0, 1, 1, 2};
    const std::vector<int> yp(yt.size(), 0);
    const MetricsReport r =
        macro_metrics(confusion_from_predictions(yt, yp, 3), std::vector<double>{});
    CHECK(r.accuracy == doctest::Approx(0.5));
}

TEST_CASE("macro metrics are invariant under class relabeling") {
    RngStream rng(23);
    std::vector<int> yt(200), yp(200);
    for (auto& v : yt) v = int(rng.next_below(4));
    for (auto& v : yp) v = int(rng.next_below(4));
    const MetricsReport a =
        macro_metrics(confusion_from_predictions(yt, yp, 4), std::vector<double>{});
    const std::vector<int> perm{2, 0, 3, 1};
    std::vector<int> yt2, yp2;
    for (int v : yt) yt2.push_back(perm[size_t(v)]);
    for (int v : yp) yp2.push_back(perm[size_t(v)]);
    const MetricsReport b =
        macro_metrics(confusion_from_predictions(yt2, yp2, 4), std::vector<double>{});
    CHECK(a.accuracy == doctest::Approx(b.accuracy).epsilon(1e-15));
    CHECK(a.macro_precision == doctest::Approx(b.macro_precision).epsilon(1e-15));
    CHECK(a.macro_recall == doctest::Approx(b.macro_recall).epsilon(1e-15));
    CHECK(a.macro_f1 == doctest::Approx(b.macro_f1).epsilon(1e-15));
}

TEST_CASE("classes absent from true labels are excluded from the macro mean") {
    // only classes 0 and 1 appear as true labels; class 2 is predicted once
    const std::vector<int> yt{0, 0, 1, 1};
    const std::vector<int> yp{0, 2, 1, 1};
    const MetricsReport r =
        macro_metrics(confusion_from_predictions(yt, yp, 3), std::vector<double>{});
    // class 0: P=1, R=0.5; class 1: P=1, R=1 — class 2 contributes nothing
    CHECK(r.macro_precision == doctest::Approx(1.0));
    CHECK(r.macro_recall == doctest::Approx(0.75));
}

TEST_CASE("micro metrics collapse to accuracy") {
    const std::vector<int> yt{0, 0, 1, 1};
    const std::vector<int> yp{0, 1, 1, 1};
    const MetricsReport r =
        micro_metrics(confusion_from_predictions(yt, yp, 2), std::vector<double>{});
    CHECK(r.accuracy == doctest::Approx(0.75));
    CHECK(r.macro_precision == r.accuracy);
    CHECK(r.macro_recall == r.accuracy);
}

TEST_CASE("confusion matrices merge by addition") {
    ConfusionMatrix a = confusion_from_predictions(std::vector<int>{0}, std::vector<int>{1}, 2);
    const ConfusionMatrix b =
        confusion_from_predictions(std::vector<int>{1}, std::vector<int>{1}, 2);
    a.merge(b);
    CHECK(a.total() == 2);
    CHECK(a.at(0, 1) == 1);
    CHECK(a.at(1, 1) == 1);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
    CHECK(argmax_lowest_tie(std::vector<double>{1.0, 3.0, 3.0}) == 1);
    CHECK(argmax_lowest_tie(std::vector<double>{2.0, 2.0, 2.0}) == 0);
    CHECK(argmax_lowest_tie(std::vector<double>{-1.0, -3.0}) == 0);
}

}  // TEST_SUITE
