#include "qlink/io/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "qlink/io/tags.hpp"

namespace qlink::io {

namespace {

void append_escaped(std::string& out, const std::string& s) {
  out.push_back('"');
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char esc[8];
          std::snprintf(esc, sizeof esc, "\\u%04x", c);
          out += esc;
        } else {
          out.push_back(c);
        }
    }
  }
  out.push_back('"');
}

void append_double(std::string& out, double v) {
  if (!std::isfinite(v)) {  // JSON has no inf/nan
    out += "null";
    return;
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void dump(const Json& j, std::string& out, int depth) {
  const std::string pad(2 * static_cast<std::size_t>(depth), ' ');
  const std::string pad_in(2 * static_cast<std::size_t>(depth + 1), ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      std::size_t i = 0;
      for (auto it = j.begin(); it != j.end(); ++it, ++i) {
        out += pad_in;
        append_escaped(out, it.key());
        out += ": ";
        dump(it.value(), out, depth + 1);
        if (i + 1 < j.size()) out.push_back(',');
        out.push_back('\n');
      }
      out += pad + "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        out += pad_in;
        dump(j[i], out, depth + 1);
        if (i + 1 < j.size()) out.push_back(',');
        out.push_back('\n');
      }
      out += pad + "]";
      return;
    }
    case Json::value_t::string:
      append_escaped(out, j.get<std::string>());
      return;
    case Json::value_t::boolean:
      out += j.get<bool>() ? "true" : "false";
      return;
    case Json::value_t::number_integer:
      out += std::to_string(j.get<std::int64_t>());
      return;
    case Json::value_t::number_unsigned:
      out += std::to_string(j.get<std::uint64_t>());
      return;
    case Json::value_t::number_float:
      append_double(out, j.get<double>());
      return;
    default:
      out += "null";
      return;
  }
}

}  // namespace

std::string dump_report(const Json& report) {
  std::string out;
  dump(report, out, 0);
  out.push_back('\n');
  return out;
}

void write_report(const Json& report, const std::filesystem::path& destination) {
  std::ofstream out(destination, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + destination.string());
  const std::string text = dump_report(report);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + destination.string());
}

}  // namespace qlink::io
