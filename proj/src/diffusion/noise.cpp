#include "flashsplit/diffusion/noise.hpp"

#include <cmath>

#include "flashsplit/core/error.hpp"

namespace flashsplit {

void validate_noise_config(const MultiResNoiseConfig& cfg) {
    require(!cfg.scales.empty(), ErrorKind::config, "noise needs at least one scale");
    for (int s : cfg.scales) {
        require(s >= 1, ErrorKind::config, "noise scales must be positive");
        require((s & (s - 1)) == 0, ErrorKind::config, "noise scales must be powers of two");
    }
    require(cfg.scales[0] == 1, ErrorKind::config, "noise scales must start at 1");
    require(cfg.anneal >= 0.0 && cfg.anneal <= 1.0, ErrorKind::config,
            "noise anneal must lie in [0,1]");
}

Tensor sample_white_noise(int n, int c, int h, int w, Rng& rng) {
    Tensor out(n, c, h, w);
    for (double& v : out.v) v = rng.normal();
    return out;
}

Tensor sample_multires_noise(int n, int c, int h, int w, const MultiResNoiseConfig& cfg,
                             double progress, Rng& rng) {
    validate_noise_config(cfg);
    require(progress >= 0.0 && progress <= 1.0, ErrorKind::contract,
            "noise progress must lie in [0,1]");
    for (int s : cfg.scales)
        require(h % s == 0 && w % s == 0, ErrorKind::config,
                "noise scale must divide the spatial dims");

    double m = std::max(0.0, 1.0 - progress * cfg.anneal);
    Tensor out(n, c, h, w);
    double wsq = 0.0;
    for (int s : cfg.scales) {
        double weight = std::pow(m, std::log2(double(s)));
        wsq += weight * weight;
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
                Tensor coarse(1, 1, h / s, w / s);
                for (double& v : coarse.v) v = rng.normal();
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        out.at(ni, ci, y, x) += weight * coarse.at(0, 0, y / s, x / s);
            }
    }
    double norm = 1.0 / std::sqrt(wsq);
    for (double& v : out.v) v *= norm;
    return out;
}

} // namespace flashsplit
