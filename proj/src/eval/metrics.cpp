#include "flashsplit/eval/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "flashsplit/core/error.hpp"
#include "flashsplit/core/exec.hpp"
#include "flashsplit/core/kernels.hpp"

namespace flashsplit {

namespace {

void check_pair(const Tensor& a, const Tensor& b, const Tensor* mask) {
    require(a.same_shape(b), ErrorKind::shape, "metric inputs must have identical shapes");
    require(a.n == 1, ErrorKind::shape, "metrics take single images [1,C,H,W]");
    if (mask) {
        require(mask->n == 1 && mask->c == 1 && mask->h == a.h && mask->w == a.w,
                ErrorKind::shape, "metric mask must be [1,1,H,W] matching the images");
    }
}

} // namespace

double psnr(const Tensor& a, const Tensor& b, double peak, const Tensor* mask) {
    check_pair(a, b, mask);
    require(peak > 0.0, ErrorKind::contract, "psnr peak must be positive");
    size_t plane = size_t(a.h) * a.w;
    double se = 0.0, cnt = 0.0;
    for (int ci = 0; ci < a.c; ++ci) {
        const double* pa = a.data() + size_t(ci) * plane;
        const double* pb = b.data() + size_t(ci) * plane;
        const double* pm = mask ? mask->data() : nullptr;
        se += block_sum(plane, [&](size_t i) {
            double keep = pm ? (pm[i] > 0.5 ? 1.0 : 0.0) : 1.0;
            double d = pa[i] - pb[i];
            return keep * d * d;
        });
        cnt += pm ? block_sum(plane, [&](size_t i) { return pm[i] > 0.5 ? 1.0 : 0.0; })
                  : double(plane);
    }
    require(cnt > 0.0, ErrorKind::degenerate, "psnr: no valid pixels under mask");
    double mse = se / cnt;
    if (mse <= 0.0) return 60.0;
    double v = 10.0 * std::log10(peak * peak / mse);
    return std::clamp(v, 0.0, 60.0);
}

std::vector<double> gaussian_taps(int size, double sigma) {
    require(size >= 1 && size % 2 == 1, ErrorKind::contract, "gaussian window size must be odd");
    require(sigma > 0.0, ErrorKind::contract, "gaussian sigma must be positive");
    std::vector<double> t(static_cast<size_t>(size));
    int half = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        double d = double(i - half);
        t[size_t(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += t[size_t(i)];
    }
    for (double& v : t) v /= sum;
    return t;
}

double ssim(const Tensor& a, const Tensor& b, int window, double k1, double k2, double peak,
            const Tensor* mask) {
    check_pair(a, b, mask);
    require(a.h >= window && a.w >= window, ErrorKind::shape, "ssim: images smaller than window");
    std::vector<double> taps = gaussian_taps(window, 1.5);
    std::vector<double> k(size_t(window) * window);
    for (int y = 0; y < window; ++y)
        for (int x = 0; x < window; ++x) k[size_t(y) * window + x] = taps[size_t(y)] * taps[size_t(x)];

    auto blur = [&](const Tensor& t) { return kern::depthwise_valid(t, k, window, window); };
    Tensor aa = a, bb = b, ab = a;
    for (size_t i = 0; i < a.size(); ++i) {
        aa.v[i] = a.v[i] * a.v[i];
        bb.v[i] = b.v[i] * b.v[i];
        ab.v[i] = a.v[i] * b.v[i];
    }
    Tensor mu_a = blur(a), mu_b = blur(b), m_aa = blur(aa), m_bb = blur(bb), m_ab = blur(ab);

    // valid window positions: all covered pixels valid
    std::vector<char> keep;
    size_t oplane = size_t(mu_a.h) * mu_a.w;
    if (mask) {
        std::vector<double> ones(size_t(window) * window, 1.0);
        Tensor cover = kern::depthwise_valid(*mask, ones, window, window);
        keep.resize(oplane);
        double full = double(window) * window;
        for (size_t i = 0; i < oplane; ++i) keep[i] = cover.v[i] > full - 0.5 ? 1 : 0;
    }

    double c1 = (k1 * peak) * (k1 * peak);
    double c2 = (k2 * peak) * (k2 * peak);
    double total = 0.0, cnt = 0.0;
    for (int ci = 0; ci < a.c; ++ci) {
        const double* ma = mu_a.data() + size_t(ci) * oplane;
        const double* mb = mu_b.data() + size_t(ci) * oplane;
        const double* saa = m_aa.data() + size_t(ci) * oplane;
        const double* sbb = m_bb.data() + size_t(ci) * oplane;
        const double* sab = m_ab.data() + size_t(ci) * oplane;
        total += block_sum(oplane, [&](size_t i) {
            if (mask && !keep[i]) return 0.0;
            double va = saa[i] - ma[i] * ma[i];
            double vb = sbb[i] - mb[i] * mb[i];
            double cov = sab[i] - ma[i] * mb[i];
            double num = (2.0 * ma[i] * mb[i] + c1) * (2.0 * cov + c2);
            double den = (ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2);
            return num / den;
        });
        cnt += mask ? block_sum(oplane, [&](size_t i) { return keep[i] ? 1.0 : 0.0; })
                    : double(oplane);
    }
    require(cnt > 0.0, ErrorKind::degenerate, "ssim: no fully valid windows under mask");
    return total / cnt;
}

} // namespace flashsplit
