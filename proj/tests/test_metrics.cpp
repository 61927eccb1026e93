#include <doctest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "semicon/metrics.hpp"

using namespace semicon::metrics;

TEST_CASE("confusion counts") {
    const std::vector<int> truth = {1, 1, 0, 0, 0, 1};
    const std::vector<int> pred = {1, 0, 0, 1, 0, 1};
    const auto cm = confusion(truth, pred);
    CHECK(cm == Confusion{2, 1, 2, 1});
    CHECK_THROWS(confusion({1, 0}, {1}));
}

TEST_CASE("worked examples") {
    const Confusion cm{50, 19, 600, 21};
    CHECK(balanced_accuracy(cm) == doctest::Approx(0.5 * (50.0 / 71 + 600.0 / 619)).epsilon(1e-15));
    CHECK(std::abs(balanced_accuracy(cm) - 0.8367) < 1e-4);

    const Confusion perfect{71, 0, 619, 0};
    CHECK(balanced_accuracy(perfect) == 1.0);
    CHECK(macro_f1(perfect) == 1.0);

    // predicting negative for every one of 71 positive / 619 negative tiles
    const Confusion none{0, 0, 619, 71};
    CHECK(balanced_accuracy(none) == 0.5);
    const double f_neg = 2.0 * 619 / (2.0 * 619 + 71);
    CHECK(std::abs(f_neg - 0.9458) < 5e-5);
    CHECK(macro_f1(none) == doctest::Approx(f_neg / 2).epsilon(1e-15));
    CHECK(std::abs(macro_f1(none) - 0.4729) < 5e-5);
}

TEST_CASE("identities on random confusion matrices") {
    std::mt19937_64 g(1);
    std::uniform_int_distribution<int> count(1, 1000);
    for (int t = 0; t < 20; ++t) {
        const Confusion cm{static_cast<std::uint64_t>(count(g)), static_cast<std::uint64_t>(count(g)),
                           static_cast<std::uint64_t>(count(g)), static_cast<std::uint64_t>(count(g))};
        const double tp = cm.tp, fp = cm.fp, tn = cm.tn, fn = cm.fn;
        CHECK(std::abs(balanced_accuracy(cm) - oracle::balanced_accuracy(tp, fp, tn, fn)) <= 1e-12);
        CHECK(std::abs(macro_f1(cm) - oracle::macro_f1(tp, fp, tn, fn)) <= 1e-12);
        const auto report = make_report("arm", "test", 3, cm);
        CHECK(report.balanced_accuracy == balanced_accuracy(cm));
        CHECK(report.macro_f1 == macro_f1(cm));
    }
}

TEST_CASE("metrics csv round trip keeps full precision") {
    auto dir = std::filesystem::temp_directory_path() / "semicon_test_metrics";
    std::filesystem::create_directories(dir);
    const auto path = dir / "metrics.csv";
    const auto a = make_report("loss1", "val", 7, {13, 4, 200, 9});
    const auto b = make_report("loss1+2", "test", 12, {3, 1, 117, 7});
    {
        MetricsCsv csv(path, false);
        csv.append(a);
        csv.append(b);
    }
    const auto rows = MetricsCsv::read(path);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].arm == "loss1+2");
    CHECK(rows[1].cm == b.cm);
    CHECK(rows[0].balanced_accuracy == a.balanced_accuracy);
    CHECK(rows[0].macro_f1 == a.macro_f1);
    // the logged counts reproduce the logged scores
    for (const auto& r : rows) {
        CHECK(std::abs(balanced_accuracy(r.cm) - r.balanced_accuracy) <= 1e-12);
        CHECK(std::abs(macro_f1(r.cm) - r.macro_f1) <= 1e-12);
    }
    CHECK(MetricsCsv::header() == "arm,split,epoch,tp,fp,tn,fn,macro_f1,balanced_accuracy");
    std::filesystem::remove_all(dir);
}
