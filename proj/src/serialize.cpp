#include "conveq/serialize.hpp"

#include "conveq/error.hpp"

#include <cmath>
#include <cstdio>

namespace conveq {

std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.11e", v);
    return buf;
}

void write_csv(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& comments,
               const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
    for (const auto& [k, v] : comments) out << "# " << k << ": " << v << '\n';
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& row : rows) {
        if (row.size() != header.size()) throw InvalidInput("csv row width does not match header");
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_real(row[i]);
        out << '\n';
    }
}

} // namespace conveq
