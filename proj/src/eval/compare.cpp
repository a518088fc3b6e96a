#include "flashsplit/eval/compare.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "flashsplit/core/chart.hpp"
#include "flashsplit/core/error.hpp"
#include "flashsplit/core/hash.hpp"
#include "flashsplit/core/json_util.hpp"
#include "flashsplit/eval/metrics.hpp"
#include "flashsplit/warp/registration.hpp"

namespace fs = std::filesystem;

namespace flashsplit {

const std::vector<std::string> kAllMethods = {
    "naive_diff", "prealign_diff", "flash_split", "flash_split_vanilla_decode",
    "flash_split_single_image",
};

namespace {

bool is_difference(const std::string& m) { return m == "naive_diff" || m == "prealign_diff"; }

bool needs_separation(const std::string& m) {
    return m == "flash_split" || m == "flash_split_vanilla_decode";
}

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

void check_methods(const std::vector<std::string>& methods, const LearnedStack& stack,
                   bool tonemapped) {
    require(!methods.empty(), ErrorKind::config, "no methods requested");
    for (const std::string& m : methods) {
        require(std::find(kAllMethods.begin(), kAllMethods.end(), m) != kAllMethods.end(),
                ErrorKind::config, "unknown method: " + m);
        require(!(tonemapped && is_difference(m)), ErrorKind::config,
                m + " needs linear radiance, dataset is tonemapped");
        auto need = [&](const void* p, const std::string& what) {
            require(p != nullptr, ErrorKind::config, m + " needs " + what);
        };
        if (needs_separation(m)) {
            need(stack.codec, "a codec checkpoint");
            need(stack.stage1, "a stage-1 checkpoint");
        }
        if (m == "flash_split") {
            need(stack.dec_t, "a transmission stage-2 checkpoint");
            need(stack.dec_r, "a reflection stage-2 checkpoint");
        }
        if (m == "flash_split_single_image") {
            need(stack.codec, "a codec checkpoint");
            need(stack.stage1_single, "a single-image stage-1 checkpoint");
        }
    }
}

std::vector<uint64_t> separation_seeds(const LearnedStack& stack, const std::vector<int>& ids,
                                       uint64_t salt) {
    std::vector<uint64_t> seeds;
    Rng root = Rng(stack.seed).child(salt);
    for (int id : ids) seeds.push_back(root.child(uint64_t(id) + 1).seed());
    return seeds;
}

std::vector<EvalRow> evaluate_separation(const Dataset& ds, const std::string& method,
                                         const std::string& target,
                                         const std::vector<MethodOutput>& outputs) {
    require(target == "T" || target == "R", ErrorKind::contract,
            "unknown evaluation target: " + target);
    std::vector<EvalRow> rows;
    for (const MethodOutput& out : outputs) {
        bool known = false;
        for (const SampleRef& r : ds.samples) known = known || r.id == out.sample_id;
        require(known, ErrorKind::contract,
                "evaluate_separation: sample id not in the dataset: " + std::to_string(out.sample_id));
        LoadedSample s = load_sample(ds, out.sample_id);
        // difference methods estimate the flash term, so their transmission
        // rows are judged against theta*T rather than T
        Tensor gt = target == "R" ? s.spec.reflection
                                  : (is_difference(method) ? flash_term(s.spec)
                                                           : s.spec.transmission);
        const Tensor* mask = out.mask.size() > 0 ? &out.mask : nullptr;
        EvalRow row;
        row.sample_id = out.sample_id;
        row.method = method;
        row.target = target;
        row.psnr_db = psnr(out.estimate, gt, 1.0, mask);
        row.ssim_val = ssim(out.estimate, gt, 11, 0.01, 0.03, 1.0, mask);
        rows.push_back(row);
    }
    return rows;
}

json compare_methods(const Dataset& ds, const std::vector<int>& ids,
                     const std::vector<std::string>& methods, const LearnedStack& stack,
                     const std::string& out_dir, const json& extra) {
    require(!ids.empty(), ErrorKind::config, "compare_methods got no sample ids");
    check_methods(methods, stack, ds.cfg.tonemapped);
    fs::create_directories(out_dir);

    std::vector<LoadedSample> samples;
    for (int id : ids) samples.push_back(load_sample(ds, id));

    bool want_main = false, want_single = false;
    for (const std::string& m : methods) {
        want_main = want_main || needs_separation(m);
        want_single = want_single || m == "flash_split_single_image";
    }
    SeparatedLatents lat_main, lat_single;
    if (want_main || want_single) {
        std::vector<const CapturePair*> pairs;
        for (const LoadedSample& s : samples) pairs.push_back(&s.pair);
        std::vector<uint64_t> seeds = separation_seeds(stack, ids, 1);
        if (want_main)
            lat_main = separate(*stack.stage1, *stack.codec, pairs, stack.steps, seeds);
        if (want_single)
            lat_single = separate(*stack.stage1_single, *stack.codec, pairs, stack.steps, seeds);
    }

    std::vector<EvalRow> rows;
    for (const std::string& m : methods) {
        if (m == "naive_diff") {
            std::vector<MethodOutput> outs;
            for (const LoadedSample& s : samples)
                outs.push_back({s.id, flash_difference(s.pair), s.pair.flash_mask});
            auto r = evaluate_separation(ds, m, "T", outs);
            rows.insert(rows.end(), r.begin(), r.end());
        } else if (m == "prealign_diff") {
            std::vector<MethodOutput> outs;
            for (const LoadedSample& s : samples) {
                PrealignResult pr = baseline_prealign_difference(s.pair);
                outs.push_back({s.id, std::move(pr.diff), std::move(pr.mask)});
            }
            auto r = evaluate_separation(ds, m, "T", outs);
            rows.insert(rows.end(), r.begin(), r.end());
        } else {
            const SeparatedLatents& lat = m == "flash_split_single_image" ? lat_single : lat_main;
            std::vector<MethodOutput> outs_t, outs_r;
            for (size_t i = 0; i < samples.size(); ++i) {
                Tensor zt(1, lat.lat_t.c, lat.lat_t.h, lat.lat_t.w);
                Tensor zr = zt;
                size_t lsz = zt.size();
                std::copy(lat.lat_t.v.begin() + i * lsz, lat.lat_t.v.begin() + (i + 1) * lsz,
                          zt.v.begin());
                std::copy(lat.lat_r.v.begin() + i * lsz, lat.lat_r.v.begin() + (i + 1) * lsz,
                          zr.v.begin());
                Tensor et, er;
                if (m == "flash_split") {
                    et = cross_latent_decode(*stack.dec_t, zt, samples[i].pair.no_flash);
                    er = cross_latent_decode(*stack.dec_r, zr, samples[i].pair.no_flash);
                } else {
                    et = decode(*stack.codec, zt);
                    er = decode(*stack.codec, zr);
                }
                outs_t.push_back({samples[i].id, std::move(et), Tensor()});
                outs_r.push_back({samples[i].id, std::move(er), Tensor()});
            }
            auto rt = evaluate_separation(ds, m, "T", outs_t);
            auto rr = evaluate_separation(ds, m, "R", outs_r);
            rows.insert(rows.end(), rt.begin(), rt.end());
            rows.insert(rows.end(), rr.begin(), rr.end());
        }
    }

    std::string csv = "sample_id,method,target,psnr,ssim\n";
    for (const EvalRow& r : rows)
        csv += std::to_string(r.sample_id) + "," + r.method + "," + r.target + ","
            + fmt(r.psnr_db) + "," + fmt(r.ssim_val) + "\n";
    write_text_file((fs::path(out_dir) / "eval.csv").string(), csv);

    json summary;
    summary["samples"] = ids;
    summary["dataset_manifest_fnv1a64"] = hex64(dataset_manifest_hash(ds));
    std::vector<ChartBar> bars;
    size_t color = 0;
    for (const std::string& m : methods) {
        json per;
        for (const std::string& t : {std::string("T"), std::string("R")}) {
            std::vector<double> ps, ss;
            for (const EvalRow& r : rows)
                if (r.method == m && r.target == t) {
                    ps.push_back(r.psnr_db);
                    ss.push_back(r.ssim_val);
                }
            if (ps.empty()) continue;
            per[t] = {{"psnr_mean", mean_of(ps)}, {"psnr_std", std_of(ps)},
                      {"ssim_mean", mean_of(ss)}, {"count", ps.size()}};
            if (t == "T") {
                per["headline_psnr"] = mean_of(ps);
                ChartBar bar;
                bar.label = m;
                bar.value = mean_of(ps);
                const uint8_t* c = kChartPalette[color % 6];
                bar.color[0] = c[0];
                bar.color[1] = c[1];
                bar.color[2] = c[2];
                bars.push_back(bar);
            }
        }
        summary["methods"][m] = per;
        ++color;
    }
    for (auto it = extra.begin(); it != extra.end(); ++it) summary[it.key()] = it.value();
    write_json_file((fs::path(out_dir) / "summary.json").string(), summary);
    render_bar_chart((fs::path(out_dir) / "methods.png").string(),
                     "separation quality (higher is better)", "PSNR dB", bars);
    return summary;
}

} // namespace flashsplit
