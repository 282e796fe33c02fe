#pragma once

#include <string>
#include <string_view>
#include <vector>

// Small CSV helpers shared by the trace loader, metrics writer and heatmap export.
namespace dapr::csv {

// Shortest round-trip decimal form; identical bytes for identical doubles.
std::string format_double(double v);

// Splits one line on commas. No quoting: none of our files need it.
std::vector<std::string> split(std::string_view line);

}  // namespace dapr::csv
