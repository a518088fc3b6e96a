#include "flashsplit/warp/registration.hpp"

#include <cmath>
#include <complex>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "flashsplit/core/error.hpp"

namespace flashsplit {

namespace {

std::mutex& plan_mutex() {
    static std::mutex m;
    return m;
}

// channel mean with the image mean removed
std::vector<double> prepared_gray(const Tensor& t) {
    size_t plane = size_t(t.h) * t.w;
    std::vector<double> g(plane, 0.0);
    for (int ci = 0; ci < t.c; ++ci) {
        const double* p = t.data() + size_t(ci) * plane;
        for (size_t i = 0; i < plane; ++i) g[i] += p[i];
    }
    double mean = 0.0;
    for (double v : g) mean += v / (double(t.c) * double(plane));
    double var = 0.0;
    for (double& v : g) {
        v = v / t.c - mean;
        var += v * v / double(plane);
    }
    require(var >= 1e-12, ErrorKind::degenerate,
            "estimate_translation: image is near constant");
    return g;
}

// quadratic peak refinement from circular neighbors, clamped to half a pixel
double refine(double cm, double c0, double cp) {
    double den = cm - 2.0 * c0 + cp;
    if (std::abs(den) < 1e-12) return 0.0;
    double d = 0.5 * (cm - cp) / den;
    return std::clamp(d, -0.5, 0.5);
}

} // namespace

TranslationEstimate estimate_translation(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), ErrorKind::shape, "estimate_translation: shapes differ");
    require(a.n == 1, ErrorKind::shape, "estimate_translation takes single images");
    int hh = a.h, ww = a.w;
    require(hh >= 8 && ww >= 8, ErrorKind::shape, "estimate_translation: image too small");
    std::vector<double> ga = prepared_gray(a), gb = prepared_gray(b);

    size_t plane = size_t(hh) * ww;
    size_t cplane = size_t(hh) * (ww / 2 + 1);
    std::vector<std::complex<double>> fa(cplane), fb(cplane), cross(cplane);
    std::vector<double> corr(plane);
    {
        std::lock_guard<std::mutex> lock(plan_mutex());
        fftw_plan pa = fftw_plan_dft_r2c_2d(hh, ww, ga.data(),
                                            reinterpret_cast<fftw_complex*>(fa.data()), FFTW_ESTIMATE);
        fftw_plan pb = fftw_plan_dft_r2c_2d(hh, ww, gb.data(),
                                            reinterpret_cast<fftw_complex*>(fb.data()), FFTW_ESTIMATE);
        fftw_plan pc = fftw_plan_dft_c2r_2d(hh, ww, reinterpret_cast<fftw_complex*>(cross.data()),
                                            corr.data(), FFTW_ESTIMATE);
        fftw_execute(pa);
        fftw_execute(pb);
        for (size_t i = 0; i < cplane; ++i) {
            std::complex<double> c = fb[i] * std::conj(fa[i]);
            double mag = std::abs(c);
            cross[i] = mag > 1e-12 ? c / mag : std::complex<double>(0.0, 0.0);
        }
        fftw_execute(pc);
        fftw_destroy_plan(pa);
        fftw_destroy_plan(pb);
        fftw_destroy_plan(pc);
    }

    size_t best = 0;
    for (size_t i = 1; i < plane; ++i)
        if (corr[i] > corr[best]) best = i;
    int py = int(best / size_t(ww)), px = int(best % size_t(ww));
    auto at = [&](int y, int x) {
        y = (y % hh + hh) % hh;
        x = (x % ww + ww) % ww;
        return corr[size_t(y) * ww + x];
    };
    double fx = px + refine(at(py, px - 1), at(py, px), at(py, px + 1));
    double fy = py + refine(at(py - 1, px), at(py, px), at(py + 1, px));

    TranslationEstimate e;
    e.dx = fx > ww / 2.0 ? fx - ww : fx;
    e.dy = fy > hh / 2.0 ? fy - hh : fy;
    e.response = corr[best] / double(plane);
    return e;
}

PrealignResult baseline_prealign_difference(const CapturePair& p) {
    require(!p.tonemapped, ErrorKind::contract,
            "prealign difference needs linear radiance, got a tonemapped pair");
    TranslationEstimate est = estimate_translation(p.no_flash, p.flash);
    WarpParams undo = translation_warp(-est.dx, -est.dy);
    Warped realigned = apply_warp(p.flash, undo);

    PrealignResult out;
    out.estimate = est;
    out.mask = realigned.mask;
    if (p.flash_mask.size() == realigned.mask.size() && p.flash_mask.size() > 0) {
        Warped m = apply_warp(p.flash_mask, undo);
        for (size_t i = 0; i < out.mask.size(); ++i)
            if (m.img.v[i] < 0.999) out.mask.v[i] = 0.0;
    }
    CapturePair aligned;
    aligned.no_flash = p.no_flash;
    aligned.flash = std::move(realigned.img);
    aligned.tonemapped = false;
    out.diff = flash_difference(aligned);
    return out;
}

} // namespace flashsplit
