#include "flashsplit/core/params.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "flashsplit/core/error.hpp"
#include "flashsplit/core/hash.hpp"

namespace flashsplit {

Tensor& ParamStore::add(const std::string& name, Tensor init) {
    require(!has(name), ErrorKind::contract, "duplicate parameter: " + name);
    grads[name] = Tensor(init.n, init.c, init.h, init.w);
    return values[name] = std::move(init);
}

Tensor& ParamStore::value(const std::string& name) {
    auto it = values.find(name);
    require(it != values.end(), ErrorKind::contract, "unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::value(const std::string& name) const {
    auto it = values.find(name);
    require(it != values.end(), ErrorKind::contract, "unknown parameter: " + name);
    return it->second;
}

Tensor& ParamStore::grad(const std::string& name) {
    auto it = grads.find(name);
    require(it != grads.end(), ErrorKind::contract, "unknown parameter: " + name);
    return it->second;
}

void ParamStore::zero_grads() {
    for (auto& [name, g] : grads) g.fill(0.0);
}

int64_t ParamStore::scalar_count() const {
    int64_t total = 0;
    for (const auto& [name, t] : values) total += static_cast<int64_t>(t.size());
    return total;
}

Tensor conv_weight_init(Rng& rng, int cout, int cin, int kh, int kw) {
    Tensor w(cout, cin, kh, kw);
    const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * kh * kw));
    for (auto& v : w.v) v = stddev * rng.normal();
    return w;
}

namespace {

constexpr char kMagic[8] = {'F', 'S', 'P', 'L', 'I', 'T', 'C', '1'};

} // namespace

void save_checkpoint(const std::string& path, const std::string& kind, const json& config,
                     const json& meta, const ParamStore& params) {
    json header;
    header["kind"] = kind;
    header["config"] = config;
    header["meta"] = meta;
    json tensors = json::array();
    for (const auto& [name, t] : params.values) {
        tensors.push_back({{"name", name}, {"n", t.n}, {"c", t.c}, {"h", t.h}, {"w", t.w}});
    }
    header["tensors"] = tensors;
    const std::string htext = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(out.good(), ErrorKind::io, "cannot write checkpoint: " + tmp);
        out.write(kMagic, 8);
        const uint64_t hlen = htext.size();
        out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
        out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
        for (const auto& [name, t] : params.values)
            out.write(reinterpret_cast<const char*>(t.v.data()),
                      static_cast<std::streamsize>(t.size() * sizeof(double)));
        require(out.good(), ErrorKind::io, "short write on checkpoint: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::usage, "missing checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    require(in.good() && std::memcmp(magic, kMagic, 8) == 0, ErrorKind::load,
            "not a checkpoint file: " + path);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    require(in.good() && hlen > 0 && hlen < (1ULL << 30), ErrorKind::load,
            "corrupt checkpoint header: " + path);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    require(in.good(), ErrorKind::load, "truncated checkpoint header: " + path);
    json header = json::parse(htext, nullptr, false);
    require(!header.is_discarded(), ErrorKind::load, "bad checkpoint header JSON: " + path);

    Checkpoint ck;
    ck.kind = header.at("kind").get<std::string>();
    ck.config = header.value("config", json::object());
    ck.meta = header.value("meta", json::object());
    for (const auto& td : header.at("tensors")) {
        const std::string name = td.at("name").get<std::string>();
        Tensor t(td.at("n").get<int>(), td.at("c").get<int>(), td.at("h").get<int>(),
                 td.at("w").get<int>());
        in.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        require(in.good(), ErrorKind::load, "truncated checkpoint tensor " + name + ": " + path);
        ck.params.add(name, std::move(t));
    }
    return ck;
}

uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::io, "cannot hash missing file: " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const std::streamsize got = in.gcount();
        if (got > 0) h = fnv1a64(buf.data(), static_cast<size_t>(got), h);
    }
    return h;
}

} // namespace flashsplit
