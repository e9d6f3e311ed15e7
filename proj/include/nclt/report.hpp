#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace nclt {

// One CSV row. Column order is fixed: experiment,n,d,value,stderr,slope,extra.
// Rows never carry wall-clock times; outputs must be byte-identical for a
// given (config, seed) under any --jobs value.
struct ReportRow {
    std::string experiment;
    long n = 0;
    int d = 0;
    double value = 0.0;
    double stderr_ = 0.0;
    std::optional<double> slope;
    std::string extra;
};

extern const char* kCsvHeader;  // "experiment,n,d,value,stderr,slope,extra"

// Deterministic shortest-roundtrip formatting ("%.12g").
std::string format_double(double v);

std::string to_csv(const std::vector<ReportRow>& rows);
void write_csv(const std::string& path, const std::vector<ReportRow>& rows);
void write_text(const std::string& path, const std::string& text);

nlohmann::json rows_to_json(const std::vector<ReportRow>& rows);

}  // namespace nclt
