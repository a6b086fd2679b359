#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace conveq {

/// Writes "# key: value" comment lines, a header row and "%.11e" rows.
/// Readers skip lines starting with '#'.
void write_csv(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& comments,
               const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows);

std::string format_real(double v);

} // namespace conveq
