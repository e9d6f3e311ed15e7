#include "nclt/report.hpp"

#include <cstdio>
#include <fstream>

#include "nclt/errors.hpp"

namespace nclt {

const char* kCsvHeader = "experiment,n,d,value,stderr,slope,extra";

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string to_csv(const std::vector<ReportRow>& rows) {
    std::string out = kCsvHeader;
    out += '\n';
    for (const auto& r : rows) {
        out += r.experiment;
        out += ',';
        out += std::to_string(r.n);
        out += ',';
        out += std::to_string(r.d);
        out += ',';
        out += format_double(r.value);
        out += ',';
        out += format_double(r.stderr_);
        out += ',';
        if (r.slope) out += format_double(*r.slope);
        out += ',';
        out += r.extra;  // callers keep extras comma-free
        out += '\n';
    }
    return out;
}

void write_csv(const std::string& path, const std::vector<ReportRow>& rows) {
    write_text(path, to_csv(rows));
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for writing: " + path);
    f << text;
    if (!f) throw Error("write failed: " + path);
}

nlohmann::json rows_to_json(const std::vector<ReportRow>& rows) {
    auto arr = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json j{{"experiment", r.experiment}, {"n", r.n},
                         {"d", r.d},
                         {"value", r.value},
                         {"stderr", r.stderr_},
                         {"extra", r.extra}};
        if (r.slope) j["slope"] = *r.slope;
        arr.push_back(std::move(j));
    }
    return arr;
}

}  // namespace nclt
