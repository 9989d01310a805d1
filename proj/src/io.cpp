#include "mlcc/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mlcc/error.hpp"

namespace mlcc::io {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void append_array(std::string& out, std::span<const double> values) {
  out += '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_double(values[i]);
  }
  out += ']';
}

void append_array(std::string& out, std::span<const std::uint8_t> bits) {
  out += '[';
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (i) out += ',';
    out += bits[i] ? '1' : '0';
  }
  out += ']';
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(std::move(line));
  return lines;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json parse_record(const std::string& line, std::size_t line_no) {
  try {
    auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw ParseError("record is not a JSON object", line_no);
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
  }
}

std::vector<double> number_array(const nlohmann::json& record, const char* key,
                                 std::size_t expected, std::size_t line_no) {
  const auto where = [&] { return std::string(" (line ") + std::to_string(line_no) + ")"; };
  auto it = record.find(key);
  if (it == record.end() || !it->is_array()) {
    throw SchemaError(std::string("missing array field \"") + key + "\"" + where());
  }
  if (expected != 0 && it->size() != expected) {
    throw SchemaError(std::string("field \"") + key + "\" has " + std::to_string(it->size()) +
                      " entries, expected " + std::to_string(expected) + where());
  }
  std::vector<double> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_number()) throw SchemaError(std::string("non-numeric entry in \"") + key + "\"" + where());
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw SchemaError(std::string("non-finite entry in \"") + key + "\"" + where());
    out.push_back(d);
  }
  return out;
}

nlohmann::json mat_to_json(const Mat& m) {
  return {{"rows", m.rows()},
          {"cols", m.cols()},
          {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

Mat mat_from_json(const nlohmann::json& j) {
  try {
    return Mat(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
               j.at("data").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad matrix object: ") + e.what());
  } catch (const DomainError& e) {
    throw SchemaError(e.what());
  }
}

std::string mat_to_csv(const Mat& m) {
  std::string out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += format_double(m(r, c));
    }
    out += '\n';
  }
  return out;
}

}  // namespace mlcc::io
