#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace semicon::metrics {

// Binary confusion counts; positive is class 1.
struct Confusion {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
    bool operator==(const Confusion&) const = default;
};

Confusion confusion(const std::vector<int>& truth, const std::vector<int>& predicted);

// Mean of per-class recall over the classes present in the ground truth.
double balanced_accuracy(const Confusion& cm);
// Mean of per-class F1 = 2TP / (2TP + FP + FN) over classes that occur in
// the truth or the predictions.
double macro_f1(const Confusion& cm);

struct MetricsReport {
    std::string arm;
    std::string split;
    int epoch = 0;
    Confusion cm;
    double macro_f1 = 0.0;
    double balanced_accuracy = 0.0;
};

MetricsReport make_report(std::string arm, std::string split, int epoch, const Confusion& cm);

// arm,split,epoch,tp,fp,tn,fn,macro_f1,balanced_accuracy
class MetricsCsv {
public:
    MetricsCsv(const std::filesystem::path& path, bool append);
    void append(const MetricsReport& report);

    static std::string header();
    static std::string format_row(const MetricsReport& report);
    static std::vector<MetricsReport> read(const std::filesystem::path& path);

private:
    std::ofstream out_;
};

}  // namespace semicon::metrics
