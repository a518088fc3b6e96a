#pragma once

#include <string>

#include <json.hpp>

namespace flashsplit {

using json = nlohmann::json;

json read_json_file(const std::string& path);

// Atomic (temp + rename) write with a trailing newline, 2-space indent.
void write_json_file(const std::string& path, const json& j);

void write_text_file(const std::string& path, const std::string& text);

// FNV-1a64 over the compact dump. nlohmann objects are key-sorted maps, so
// the hash is stable under key reordering in the source text.
uint64_t json_hash(const json& j);
std::string json_hash_hex(const json& j);

} // namespace flashsplit
