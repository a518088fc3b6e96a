#pragma once

#include <map>
#include <string>

#include "flashsplit/core/graph.hpp"
#include "flashsplit/core/params.hpp"

namespace flashsplit {

// Binds named parameters into a graph once each; train controls whether
// gradients accumulate back into the store.
struct Bind {
    Graph& g;
    ParamStore& p;
    bool train = false;
    std::map<std::string, int> ids;

    int operator()(const std::string& name) {
        auto it = ids.find(name);
        if (it != ids.end()) return it->second;
        int id = g.param(&p.value(name), train ? &p.grad(name) : nullptr);
        ids.emplace(name, id);
        return id;
    }
};

} // namespace flashsplit
