#include "flashsplit/warp/sweep.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "flashsplit/core/chart.hpp"
#include "flashsplit/core/error.hpp"
#include "flashsplit/core/hash.hpp"
#include "flashsplit/core/rng.hpp"
#include "flashsplit/eval/metrics.hpp"
#include "flashsplit/warp/registration.hpp"
#include "flashsplit/warp/warp.hpp"

namespace fs = std::filesystem;

namespace flashsplit {
namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size() - 1));
}

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace

json misalignment_sweep(const Dataset& ds, const std::vector<int>& ids,
                        const std::vector<double>& magnitudes,
                        const std::vector<std::string>& methods, const LearnedStack& stack,
                        const std::string& out_dir, const json& extra) {
    require(!ids.empty(), ErrorKind::config, "sweep got no sample ids");
    require(!magnitudes.empty(), ErrorKind::config, "sweep got no magnitudes");
    for (size_t i = 0; i < magnitudes.size(); ++i) {
        require(magnitudes[i] >= 0.0, ErrorKind::config, "sweep magnitudes must be non-negative");
        if (i > 0)
            require(magnitudes[i] > magnitudes[i - 1], ErrorKind::config,
                    "sweep magnitudes must ascend strictly");
    }
    check_methods(methods, stack, ds.cfg.tonemapped);
    for (const std::string& m : methods)
        require(m != "flash_split_vanilla_decode" && m != "flash_split_single_image",
                ErrorKind::config, "sweep supports naive_diff, prealign_diff and flash_split");
    fs::create_directories(out_dir);

    std::vector<LoadedSample> samples;
    for (int id : ids) samples.push_back(load_sample(ds, id));

    json summary;
    summary["magnitudes"] = magnitudes;
    summary["samples"] = ids;
    summary["dataset_manifest_fnv1a64"] = hex64(dataset_manifest_hash(ds));
    std::string csv = "magnitude,method,psnr_mean,psnr_std\n";
    std::vector<ChartSeries> series;
    size_t color = 0;

    std::vector<std::vector<CapturePair>> mag_pairs(magnitudes.size());
    for (size_t mi = 0; mi < magnitudes.size(); ++mi) {
        for (size_t i = 0; i < samples.size(); ++i) {
            const LoadedSample& s = samples[i];
            Rng ar = Rng(stack.seed).child(2).child(mi * 100003 + uint64_t(s.id) + 1);
            double ang = ar.uniform(0.0, 2.0 * 3.14159265358979323846);
            WarpParams wp = translation_warp(magnitudes[mi] * std::cos(ang),
                                             magnitudes[mi] * std::sin(ang));
            CapturePair p;
            p.no_flash = s.pair.no_flash;
            Warped warped = apply_warp(s.flash_aligned, wp, &s.spec.depth);
            p.flash = std::move(warped.img);
            p.flash_mask = std::move(warped.mask);
            p.misalignment = wp;
            p.tonemapped = ds.cfg.tonemapped;
            p.scene_seed = s.spec.seed;
            mag_pairs[mi].push_back(std::move(p));
        }
    }

    for (const std::string& m : methods) {
        ChartSeries sr;
        sr.label = m;
        const uint8_t* c = kChartPalette[color % 6];
        sr.color[0] = c[0];
        sr.color[1] = c[1];
        sr.color[2] = c[2];
        json jm;
        for (size_t mi = 0; mi < magnitudes.size(); ++mi) {
            std::vector<double> ps;
            if (m == "flash_split") {
                std::vector<const CapturePair*> pairs;
                for (const CapturePair& p : mag_pairs[mi]) pairs.push_back(&p);
                std::vector<uint64_t> seeds = separation_seeds(stack, ids, 100 + mi);
                SeparatedLatents lat = separate(*stack.stage1, *stack.codec, pairs, stack.steps, seeds);
                size_t lsz = size_t(lat.lat_t.c) * lat.lat_t.h * lat.lat_t.w;
                for (size_t i = 0; i < samples.size(); ++i) {
                    Tensor zt(1, lat.lat_t.c, lat.lat_t.h, lat.lat_t.w);
                    std::copy(lat.lat_t.v.begin() + i * lsz, lat.lat_t.v.begin() + (i + 1) * lsz,
                              zt.v.begin());
                    Tensor et = cross_latent_decode(*stack.dec_t, zt, samples[i].pair.no_flash);
                    ps.push_back(psnr(et, samples[i].spec.transmission));
                }
            } else {
                for (size_t i = 0; i < samples.size(); ++i) {
                    const CapturePair& p = mag_pairs[mi][i];
                    Tensor gt = flash_term(samples[i].spec);
                    if (m == "naive_diff") {
                        ps.push_back(psnr(flash_difference(p), gt, 1.0, &p.flash_mask));
                    } else {
                        PrealignResult pr = baseline_prealign_difference(p);
                        ps.push_back(psnr(pr.diff, gt, 1.0, &pr.mask));
                    }
                }
            }
            double mean = mean_of(ps), sd = std_of(ps);
            csv += fmt(magnitudes[mi]) + "," + m + "," + fmt(mean) + "," + fmt(sd) + "\n";
            sr.x.push_back(magnitudes[mi]);
            sr.y.push_back(mean);
            jm[fmt(magnitudes[mi])] = {{"psnr_mean", mean}, {"psnr_std", sd}};
        }
        summary["methods"][m] = jm;
        series.push_back(sr);
        ++color;
    }

    write_text_file((fs::path(out_dir) / "sweep.csv").string(), csv);
    for (auto it = extra.begin(); it != extra.end(); ++it) summary[it.key()] = it.value();
    write_json_file((fs::path(out_dir) / "sweep.json").string(), summary);
    render_line_chart((fs::path(out_dir) / "sweep.png").string(),
                      "robustness to flash misalignment", "misalignment (px)", "PSNR dB", series);
    return summary;
}

} // namespace flashsplit
