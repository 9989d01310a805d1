#pragma once

// Small text-format helpers shared by the file writers.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlcc/numkit.hpp"

namespace mlcc::io {

// Decimal with 17 significant digits; parses back to the identical double.
std::string format_double(double v);

void append_array(std::string& out, std::span<const double> values);
void append_array(std::string& out, std::span<const std::uint8_t> bits);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Parses one JSON-lines record; ParseError names the 1-based line.
nlohmann::json parse_record(const std::string& line, std::size_t line_no);

// Reads a numeric array field. SchemaError on a non-number or non-finite value
// or when `expected` is nonzero and the length differs.
std::vector<double> number_array(const nlohmann::json& record, const char* key,
                                 std::size_t expected, std::size_t line_no);

// Matrix as a JSON object {"rows","cols","data"}.
nlohmann::json mat_to_json(const Mat& m);
Mat mat_from_json(const nlohmann::json& j);

// Plain CSV, one matrix row per line, no header.
std::string mat_to_csv(const Mat& m);

}  // namespace mlcc::io
