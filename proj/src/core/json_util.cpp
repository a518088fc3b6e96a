#include "flashsplit/core/json_util.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "flashsplit/core/error.hpp"
#include "flashsplit/core/hash.hpp"

namespace flashsplit {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::load, "cannot open JSON file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    json j = json::parse(ss.str(), nullptr, false);
    require(!j.is_discarded(), ErrorKind::load, "malformed JSON: " + path);
    return j;
}

void write_text_file(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(out.good(), ErrorKind::io, "cannot write file: " + path);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        require(out.good(), ErrorKind::io, "short write: " + path);
    }
    std::filesystem::rename(tmp, path);
}

void write_json_file(const std::string& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

uint64_t json_hash(const json& j) { return fnv1a64(j.dump()); }

std::string json_hash_hex(const json& j) { return hex64(json_hash(j)); }

} // namespace flashsplit
