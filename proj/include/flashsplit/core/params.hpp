#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "flashsplit/core/rng.hpp"
#include "flashsplit/core/tensor.hpp"

namespace flashsplit {

using json = nlohmann::json;

// Named parameter tensors plus matching gradient accumulators. std::map keeps
// iteration (and therefore checkpoint layout and optimizer order) sorted by
// name, which the determinism guarantees rely on.
struct ParamStore {
    std::map<std::string, Tensor> values;
    std::map<std::string, Tensor> grads;

    Tensor& add(const std::string& name, Tensor init);
    bool has(const std::string& name) const { return values.count(name) != 0; }
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name);
    void zero_grads();
    int64_t scalar_count() const;
};

// He-normal weights for a conv feeding a SiLU.
Tensor conv_weight_init(Rng& rng, int cout, int cin, int kh, int kw);

// Versioned checkpoint: fixed magic, a JSON header describing kind, config,
// metadata and tensor shapes, then raw little-endian doubles in header order.
// Writes go through a temp file and rename.
void save_checkpoint(const std::string& path, const std::string& kind, const json& config,
                     const json& meta, const ParamStore& params);

struct Checkpoint {
    std::string kind;
    json config;
    json meta;
    ParamStore params;
};

Checkpoint load_checkpoint(const std::string& path);

} // namespace flashsplit
