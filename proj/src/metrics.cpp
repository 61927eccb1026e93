#include "semicon/metrics.hpp"

#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace semicon::metrics {
namespace {

double f1(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
    const std::uint64_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

Confusion confusion(const std::vector<int>& truth, const std::vector<int>& predicted) {
    if (truth.size() != predicted.size()) throw std::invalid_argument("confusion: length mismatch");
    Confusion cm;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool t = truth[i] != 0;
        const bool p = predicted[i] != 0;
        if (t && p) ++cm.tp;
        else if (!t && p) ++cm.fp;
        else if (!t && !p) ++cm.tn;
        else ++cm.fn;
    }
    return cm;
}

double balanced_accuracy(const Confusion& cm) {
    const std::uint64_t pos = cm.tp + cm.fn;
    const std::uint64_t neg = cm.tn + cm.fp;
    if (pos == 0 && neg == 0) throw std::invalid_argument("balanced accuracy of an empty split");
    if (pos == 0) return static_cast<double>(cm.tn) / static_cast<double>(neg);
    if (neg == 0) return static_cast<double>(cm.tp) / static_cast<double>(pos);
    return 0.5 * (static_cast<double>(cm.tp) / static_cast<double>(pos) +
                  static_cast<double>(cm.tn) / static_cast<double>(neg));
}

double macro_f1(const Confusion& cm) {
    const bool pos_seen = cm.tp + cm.fn + cm.fp > 0;
    const bool neg_seen = cm.tn + cm.fp + cm.fn > 0;
    if (!pos_seen && !neg_seen) throw std::invalid_argument("macro F1 of an empty split");
    const double f_pos = f1(cm.tp, cm.fp, cm.fn);
    const double f_neg = f1(cm.tn, cm.fn, cm.fp);
    if (!pos_seen) return f_neg;
    if (!neg_seen) return f_pos;
    return 0.5 * (f_pos + f_neg);
}

MetricsReport make_report(std::string arm, std::string split, int epoch, const Confusion& cm) {
    return {std::move(arm), std::move(split), epoch, cm, macro_f1(cm), balanced_accuracy(cm)};
}

MetricsCsv::MetricsCsv(const std::filesystem::path& path, bool append) {
    const bool fresh = !append || !std::filesystem::exists(path);
    out_.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out_) throw std::runtime_error("cannot open metrics file " + path.string());
    if (fresh) out_ << header() << '\n';
}

void MetricsCsv::append(const MetricsReport& report) {
    out_ << format_row(report) << '\n';
    out_.flush();
}

std::string MetricsCsv::header() { return "arm,split,epoch,tp,fp,tn,fn,macro_f1,balanced_accuracy"; }

std::string MetricsCsv::format_row(const MetricsReport& r) {
    return fmt::format("{},{},{},{},{},{},{},{:.17g},{:.17g}", r.arm, r.split, r.epoch, r.cm.tp,
                       r.cm.fp, r.cm.tn, r.cm.fn, r.macro_f1, r.balanced_accuracy);
}

std::vector<MetricsReport> MetricsCsv::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics file " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != header()) {
        throw std::runtime_error(path.string() + ": unexpected metrics header");
    }
    std::vector<MetricsReport> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::vector<std::string> f;
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 9) throw std::runtime_error("malformed metrics row: " + line);
        MetricsReport r;
        r.arm = f[0];
        r.split = f[1];
        r.epoch = std::stoi(f[2]);
        r.cm = {std::stoull(f[3]), std::stoull(f[4]), std::stoull(f[5]), std::stoull(f[6])};
        r.macro_f1 = std::stod(f[7]);
        r.balanced_accuracy = std::stod(f[8]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace semicon::metrics
