#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace qlink::io {

using Json = nlohmann::ordered_json;

// Deterministic JSON text: insertion key order, floating-point numbers with
// 17 significant digits (round-trip exact), two-space indentation.
std::string dump_report(const Json& report);

void write_report(const Json& report, const std::filesystem::path& destination);

}  // namespace qlink::io
