#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "gseunet/errors.hpp"
#include "gseunet/train.hpp"

namespace gseunet {

// Header plus one `epoch,train_loss,val_loss,val_miou` row per record, floats
// at six decimals, newline-terminated. Pure function of the records, so
// identical runs produce byte-identical files.
inline std::string format_metrics_csv(const std::vector<MetricRecord>& records) {
    if (records.empty()) throw UsageError("no metric records to write");
    std::string out = "epoch,train_loss,val_loss,val_miou\n";
    char line[128];
    for (const auto& r : records) {
        std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f\n", r.epoch, r.train_loss, r.val_loss,
                      r.val_miou);
        out += line;
    }
    return out;
}

inline void write_metrics_csv(const std::vector<MetricRecord>& records, const std::string& path) {
    const std::string text = format_metrics_csv(records);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    f.flush();
    if (!f) throw IoError("failed while writing " + path);
}

}  // namespace gseunet
