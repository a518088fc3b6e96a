#include "flashsplit/train/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "flashsplit/core/error.hpp"
#include "flashsplit/core/optim.hpp"
#include "flashsplit/eval/metrics.hpp"
#include "flashsplit/train/losses.hpp"
#include "flashsplit/warp/warp.hpp"

namespace flashsplit {

int mean_sq(Graph& g, int x) { return g.mean_all(g.mul(x, x)); }

int mean_sq_diff(Graph& g, int a, int b) {
    int d = g.sub(a, b);
    return g.mean_all(g.mul(d, d));
}

int l1_diff(Graph& g, int a, int b) { return g.mean_all(g.abs_(g.sub(a, b))); }

int ssim_graph(Graph& g, int a, int b, int window, double k1, double k2, double peak) {
    std::vector<double> taps = gaussian_taps(window, 1.5);
    std::vector<double> k(size_t(window) * window);
    for (int y = 0; y < window; ++y)
        for (int x = 0; x < window; ++x) k[size_t(y) * window + x] = taps[size_t(y)] * taps[size_t(x)];

    auto dw = [&](int t) { return g.depthwise_fixed(t, k, window, window); };
    int mu_a = dw(a), mu_b = dw(b);
    int m_aa = dw(g.mul(a, a)), m_bb = dw(g.mul(b, b)), m_ab = dw(g.mul(a, b));
    int va = g.sub(m_aa, g.mul(mu_a, mu_a));
    int vb = g.sub(m_bb, g.mul(mu_b, mu_b));
    int cov = g.sub(m_ab, g.mul(mu_a, mu_b));

    double c1 = (k1 * peak) * (k1 * peak);
    double c2 = (k2 * peak) * (k2 * peak);
    int num = g.mul(g.offset(g.scale(g.mul(mu_a, mu_b), 2.0), c1), g.offset(g.scale(cov, 2.0), c2));
    int den = g.mul(g.offset(g.add(g.mul(mu_a, mu_a), g.mul(mu_b, mu_b)), c1),
                    g.offset(g.add(va, vb), c2));
    return g.mean_all(g.div(num, den));
}


namespace {

void set_row(Tensor& dst, int i, const Tensor& src) {
    require(src.n == 1 && src.c == dst.c && src.h == dst.h && src.w == dst.w, ErrorKind::shape,
            "batch row shape mismatch");
    std::copy(src.v.begin(), src.v.end(), dst.v.begin() + size_t(i) * src.size());
}

Tensor get_row(const Tensor& src, int i) {
    Tensor out(1, src.c, src.h, src.w);
    std::copy(src.v.begin() + size_t(i) * out.size(), src.v.begin() + size_t(i + 1) * out.size(),
              out.v.begin());
    return out;
}

void check_finite(double loss, int step) {
    if (!std::isfinite(loss))
        raise(ErrorKind::training,
              "loss became non-finite at step " + std::to_string(step)
                  + "; the last checkpoint on disk is the last good state");
}

std::string log_line(int step, double loss) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%d,%.10g", step, loss);
    return buf;
}

void push_log(TrainLog* log, const TrainConfig& tc, int step, double loss) {
    if (!log) return;
    if (step == 0) log->initial_loss = loss;
    log->final_loss = loss;
    if (step % std::max(1, tc.log_every) == 0) log->lines.push_back(log_line(step, loss));
}

std::vector<LoadedSample> load_split(const Dataset& ds, const std::string& split) {
    std::vector<LoadedSample> out;
    for (int id : split_ids(ds, split)) out.push_back(load_sample(ds, id));
    require(!out.empty(), ErrorKind::config, "split has no samples: " + split);
    return out;
}

// two reconstruction terms averaged, mirroring the evaluation metrics
int recon_loss(Graph& g, int pred, int gt, double peak, PerceptualLoss* perceptual) {
    int l1 = l1_diff(g, pred, gt);
    int ssim_term = g.offset(g.scale(ssim_graph(g, pred, gt, 11, 0.01, 0.03, peak), -1.0), 1.0);
    int sum = g.add(l1, ssim_term);
    int terms = 2;
    if (perceptual) {
        sum = g.add(sum, perceptual->build(g, pred, gt));
        ++terms;
    }
    return g.scale(sum, 1.0 / terms);
}

} // namespace

void validate_train_config(const TrainConfig& tc) {
    require(tc.steps >= 1, ErrorKind::config, "training needs at least one step");
    require(tc.batch >= 1, ErrorKind::config, "batch size must be positive");
    require(tc.lr >= 0.0, ErrorKind::config, "learning rate must be non-negative");
    require(tc.misalign_max >= 0.0 && tc.misalign_jitter >= 0.0, ErrorKind::config,
            "misalignment magnitudes must be non-negative");
    require(tc.kl_weight >= 0.0, ErrorKind::config, "kl weight must be non-negative");
    require(tc.perceptual == "none" || tc.perceptual == "encoder", ErrorKind::config,
            "perceptual must be none or encoder");
    require(tc.log_every >= 1, ErrorKind::config, "log_every must be positive");
    require(tc.ckpt_every >= 0, ErrorKind::config, "ckpt_every must be non-negative");
}

json train_config_to_json(const TrainConfig& tc) {
    json j;
    j["steps"] = tc.steps;
    j["batch"] = tc.batch;
    j["lr"] = tc.lr;
    j["seed"] = tc.seed;
    j["misalign_max"] = tc.misalign_max;
    j["misalign_jitter"] = tc.misalign_jitter;
    j["kl_weight"] = tc.kl_weight;
    j["perceptual"] = tc.perceptual;
    j["log_every"] = tc.log_every;
    j["ckpt_every"] = tc.ckpt_every;
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig tc;
    tc.steps = j.at("steps").get<int>();
    tc.batch = j.at("batch").get<int>();
    tc.lr = j.at("lr").get<double>();
    tc.seed = j.at("seed").get<uint64_t>();
    tc.misalign_max = j.at("misalign_max").get<double>();
    tc.misalign_jitter = j.at("misalign_jitter").get<double>();
    tc.kl_weight = j.at("kl_weight").get<double>();
    tc.perceptual = j.at("perceptual").get<std::string>();
    tc.log_every = j.at("log_every").get<int>();
    tc.ckpt_every = j.at("ckpt_every").get<int>();
    validate_train_config(tc);
    return tc;
}

int EncoderPerceptualLoss::build(Graph& g, int pred, int gt) {
    ParamStore& p = const_cast<ParamStore&>(codec->params);
    auto conv = [&](int x, const std::string& name, int stride) {
        return g.conv2d(x, g.param(&p.value(name + ".w"), nullptr),
                        g.param(&p.value(name + ".b"), nullptr), stride, 1);
    };
    int fp0 = g.silu(conv(pred, "enc.c0", 1));
    int fg0 = g.silu(conv(gt, "enc.c0", 1));
    int fp1 = g.silu(conv(fp0, "enc.c1", 2));
    int fg1 = g.silu(conv(fg0, "enc.c1", 2));
    return g.scale(g.add(l1_diff(g, fp0, fg0), l1_diff(g, fp1, fg1)), 0.5);
}

CodecState train_codec(const TrainConfig& tc, const CodecConfig& cc, const Dataset& ds,
                       TrainLog* log, const std::function<void(const CodecState&, int)>& sink) {
    validate_train_config(tc);
    validate_codec_config(cc);
    require(cc.tonemapped == ds.cfg.tonemapped, ErrorKind::mode,
            "codec and dataset disagree on tonemapped mode");
    require(cc.image_channels == ds.cfg.scene.channels, ErrorKind::config,
            "codec channels must match the dataset");

    std::vector<Tensor> pool;
    for (const LoadedSample& s : load_split(ds, "train")) {
        pool.push_back(s.spec.transmission);
        pool.push_back(s.spec.reflection);
        pool.push_back(s.pair.no_flash);
        pool.push_back(s.flash_aligned);
    }

    CodecState st = codec_init(cc, tc.seed);
    Adam opt(tc.lr > 0.0 ? tc.lr : 1e-3);
    Rng rng = Rng(tc.seed).child(1);
    double peak = cc.tonemapped ? 1.0 : cc.max_scale;
    int hh = pool[0].h, ww = pool[0].w;

    for (int step = 0; step < tc.steps; ++step) {
        Tensor batch(tc.batch, cc.image_channels, hh, ww);
        for (int i = 0; i < tc.batch; ++i)
            set_row(batch, i, pool[size_t(rng.uniform_int(0, int(pool.size()) - 1))]);

        Graph g;
        st.params.zero_grads();
        Bind b{g, st.params, true, {}};
        int x = g.input(std::move(batch));
        int z = encode_graph(b, st, x, false);
        int y = decode_graph(b, st, z, false, false);
        int loss = g.add(recon_loss(g, y, x, peak, nullptr), g.scale(mean_sq(g, z), tc.kl_weight));
        double lv = g.val(loss).v[0];
        push_log(log, tc, step, lv);
        check_finite(lv, step);
        g.backward(loss);
        opt.step(st.params);
        if (tc.ckpt_every > 0 && (step + 1) % tc.ckpt_every == 0 && sink) sink(st, step + 1);
    }

    // fit the per-channel latent affine on the training pool
    int c = cc.latent_channels;
    std::vector<double> sum(size_t(c), 0.0), sumsq(size_t(c), 0.0);
    int64_t count = 0;
    for (size_t i = 0; i < pool.size(); ++i) {
        Graph g;
        Bind b{g, st.params, false, {}};
        const Tensor& z = g.val(encode_graph(b, st, g.input(pool[i]), false));
        size_t plane = size_t(z.h) * z.w;
        for (int ci = 0; ci < c; ++ci) {
            const double* p = z.data() + size_t(ci) * plane;
            for (size_t k = 0; k < plane; ++k) {
                sum[size_t(ci)] += p[k];
                sumsq[size_t(ci)] += p[k] * p[k];
            }
        }
        count += int64_t(plane);
    }
    for (int ci = 0; ci < c; ++ci) {
        double mean = sum[size_t(ci)] / double(count);
        double var = sumsq[size_t(ci)] / double(count) - mean * mean;
        require(var > 1e-12, ErrorKind::degenerate, "latent channel collapsed during training");
        st.lat_mean[size_t(ci)] = mean;
        st.lat_std[size_t(ci)] = std::sqrt(var);
    }
    st.trained = true;
    return st;
}

double codec_roundtrip_psnr(const CodecState& st, const Dataset& ds, const std::string& split) {
    require(st.trained, ErrorKind::usage, "codec round trip needs a trained codec");
    std::vector<LoadedSample> samples = load_split(ds, split);
    double acc = 0.0;
    int n = 0;
    for (const LoadedSample& s : samples) {
        const Tensor* imgs[2] = {&s.pair.no_flash, &s.flash_aligned};
        for (const Tensor* img : imgs) {
            acc += psnr(decode(st, encode(st, *img)), *img);
            ++n;
        }
    }
    return acc / n;
}

DualDenoiserState train_stage1(const TrainConfig& tc, DenoiserConfig dc, const Dataset& ds,
                               const CodecState& codec, bool single_image, TrainLog* log,
                               const std::function<void(const DualDenoiserState&, int)>& sink) {
    validate_train_config(tc);
    require(codec.trained, ErrorKind::usage, "stage-1 training needs a trained codec");
    require(codec.cfg.tonemapped == ds.cfg.tonemapped, ErrorKind::mode,
            "codec and dataset disagree on tonemapped mode");
    dc.latent_channels = codec.cfg.latent_channels;
    validate_denoiser_config(dc);

    std::vector<LoadedSample> samples = load_split(ds, "train");
    int ns = int(samples.size());
    std::vector<Tensor> z_t(samples.size()), z_r(samples.size()), z_nf(samples.size());
    for (int i = 0; i < ns; ++i) {
        z_t[size_t(i)] = encode(codec, samples[size_t(i)].spec.transmission);
        z_r[size_t(i)] = encode(codec, samples[size_t(i)].spec.reflection);
        z_nf[size_t(i)] = encode(codec, samples[size_t(i)].pair.no_flash);
    }
    NoiseSchedule sched = build_schedule(dc.diff_steps, dc.beta_start, dc.beta_end, dc.schedule_kind);

    DualDenoiserState st = denoiser_init(dc, tc.seed);
    st.tonemapped = ds.cfg.tonemapped;
    st.single_image = single_image;
    Adam opt(tc.lr > 0.0 ? tc.lr : 3e-5);
    Rng rng = Rng(tc.seed).child(2);
    int c = codec.cfg.latent_channels;
    int lh = z_t[0].h, lw = z_t[0].w;
    int size = samples[0].spec.transmission.h;

    for (int step = 0; step < tc.steps; ++step) {
        double progress = tc.steps <= 1 ? 1.0 : double(step) / double(tc.steps - 1);
        std::vector<int> pick(size_t(tc.batch));
        for (int& idx : pick) idx = rng.uniform_int(0, ns - 1);

        Tensor zfl_b(tc.batch, c, lh, lw);
        if (single_image) {
            for (int i = 0; i < tc.batch; ++i) set_row(zfl_b, i, z_nf[size_t(pick[size_t(i)])]);
        } else {
            Tensor flash_b(tc.batch, codec.cfg.image_channels, size, size);
            for (int i = 0; i < tc.batch; ++i) {
                WarpParams wp = random_misalignment(rng, tc.misalign_max, tc.misalign_jitter, size);
                set_row(flash_b, i, apply_warp(samples[size_t(pick[size_t(i)])].flash_aligned, wp).img);
            }
            zfl_b = encode(codec, flash_b);
        }
        Tensor znf_b(tc.batch, c, lh, lw), z0t_b(tc.batch, c, lh, lw), z0r_b(tc.batch, c, lh, lw);
        for (int i = 0; i < tc.batch; ++i) {
            set_row(znf_b, i, z_nf[size_t(pick[size_t(i)])]);
            set_row(z0t_b, i, z_t[size_t(pick[size_t(i)])]);
            set_row(z0r_b, i, z_r[size_t(pick[size_t(i)])]);
        }
        std::vector<int> ts(size_t(tc.batch));
        for (int& t : ts) t = rng.uniform_int(1, sched.steps);
        Tensor eps_t = sample_multires_noise(tc.batch, c, lh, lw, dc.noise, progress, rng);
        Tensor eps_r = sample_multires_noise(tc.batch, c, lh, lw, dc.noise, progress, rng);

        Tensor st_b = z0t_b, sr_b = z0r_b;
        size_t lsz = size_t(c) * lh * lw;
        for (int i = 0; i < tc.batch; ++i) {
            double ab = sched.alpha_bar(ts[size_t(i)]);
            double a = std::sqrt(ab), bb = std::sqrt(1.0 - ab);
            for (size_t k = size_t(i) * lsz; k < size_t(i + 1) * lsz; ++k) {
                st_b.v[k] = a * z0t_b.v[k] + bb * eps_t.v[k];
                sr_b.v[k] = a * z0r_b.v[k] + bb * eps_r.v[k];
            }
        }

        Graph g;
        st.params.zero_grads();
        Bind b{g, st.params, true, {}};
        int in_et = g.input(std::move(eps_t)), in_er = g.input(std::move(eps_r));
        DenoiserOut out = denoiser_graph(b, st, g.input(std::move(st_b)), g.input(std::move(sr_b)),
                                         g.input(std::move(zfl_b)), g.input(std::move(znf_b)),
                                         g.input(timestep_features(ts, dc.width)), true);
        int loss = g.add(mean_sq_diff(g, out.eps_t, in_et), mean_sq_diff(g, out.eps_r, in_er));
        double lv = g.val(loss).v[0];
        push_log(log, tc, step, lv);
        check_finite(lv, step);
        g.backward(loss);
        opt.step(st.params);
        if (tc.ckpt_every > 0 && (step + 1) % tc.ckpt_every == 0 && sink) sink(st, step + 1);
    }
    st.trained = true;
    return st;
}

std::vector<Stage2Tuple> generate_stage2_dataset(const DualDenoiserState& st,
                                                 const CodecState& codec, const Dataset& ds,
                                                 const std::vector<int>& ids, int ddim_steps,
                                                 uint64_t seed, json* provenance) {
    require(st.trained && codec.trained, ErrorKind::usage,
            "stage-2 data generation needs trained stage-1 and codec models");
    require(!ids.empty(), ErrorKind::config, "stage-2 data generation got no sample ids");

    std::vector<Stage2Tuple> tuples;
    Rng root(seed);
    const int chunk = 8;
    for (size_t base = 0; base < ids.size(); base += chunk) {
        size_t hi = std::min(ids.size(), base + chunk);
        std::vector<LoadedSample> loaded;
        std::vector<CapturePair> pairs;
        std::vector<uint64_t> seeds;
        for (size_t i = base; i < hi; ++i) {
            LoadedSample s = load_sample(ds, ids[i]);
            Rng sr = root.child(uint64_t(ids[i]) + 1);
            Rng wr = sr.child(1);
            WarpParams wp = random_misalignment(wr, ds.cfg.eval_warp_max, ds.cfg.eval_warp_jitter,
                                                s.flash_aligned.h);
            CapturePair p;
            p.no_flash = s.pair.no_flash;
            Warped warped = apply_warp(s.flash_aligned, wp, &s.spec.depth);
            p.flash = std::move(warped.img);
            p.flash_mask = std::move(warped.mask);
            p.misalignment = wp;
            p.tonemapped = ds.cfg.tonemapped;
            p.scene_seed = s.spec.seed;
            pairs.push_back(std::move(p));
            seeds.push_back(sr.seed());
            loaded.push_back(std::move(s));
        }
        std::vector<const CapturePair*> refs;
        for (const CapturePair& p : pairs) refs.push_back(&p);
        SeparatedLatents lat = separate(st, codec, refs, ddim_steps, seeds);
        for (size_t i = 0; i < refs.size(); ++i) {
            Stage2Tuple t;
            t.sample_id = loaded[i].id;
            t.target = "transmission";
            t.lat = get_row(lat.lat_t, int(i));
            t.composite = loaded[i].pair.no_flash;
            t.gt = loaded[i].spec.transmission;
            tuples.push_back(t);
            Stage2Tuple r;
            r.sample_id = loaded[i].id;
            r.target = "reflection";
            r.lat = get_row(lat.lat_r, int(i));
            r.composite = loaded[i].pair.no_flash;
            r.gt = loaded[i].spec.reflection;
            tuples.push_back(std::move(r));
        }
    }
    if (provenance) {
        (*provenance)["ddim_steps"] = ddim_steps;
        (*provenance)["seed"] = seed;
        (*provenance)["ids"] = ids;
        (*provenance)["warp_max"] = ds.cfg.eval_warp_max;
        (*provenance)["warp_jitter"] = ds.cfg.eval_warp_jitter;
        (*provenance)["tuples"] = int(tuples.size());
    }
    return tuples;
}

CrossDecoderState train_stage2(const TrainConfig& tc, const std::vector<Stage2Tuple>& tuples,
                               const CodecState& codec, const std::string& target,
                               PerceptualLoss* perceptual, TrainLog* log,
                               const std::function<void(const CrossDecoderState&, int)>& sink) {
    validate_train_config(tc);
    std::vector<const Stage2Tuple*> mine;
    for (const Stage2Tuple& t : tuples)
        if (t.target == target) mine.push_back(&t);
    require(!mine.empty(), ErrorKind::config, "no stage-2 tuples for target " + target);

    CrossDecoderState st = cross_decoder_init(codec, target);
    Adam opt(tc.lr > 0.0 ? tc.lr : 1e-5);
    Rng rng = Rng(tc.seed).child(3);
    double peak = codec.cfg.tonemapped ? 1.0 : codec.cfg.max_scale;
    int c = codec.cfg.latent_channels;
    int lh = mine[0]->lat.h, lw = mine[0]->lat.w;
    int ih = mine[0]->composite.h, iw = mine[0]->composite.w;

    for (int step = 0; step < tc.steps; ++step) {
        Tensor lat_b(tc.batch, c, lh, lw);
        Tensor comp_b(tc.batch, codec.cfg.image_channels, ih, iw);
        Tensor gt_b(tc.batch, codec.cfg.image_channels, ih, iw);
        for (int i = 0; i < tc.batch; ++i) {
            const Stage2Tuple& t = *mine[size_t(rng.uniform_int(0, int(mine.size()) - 1))];
            set_row(lat_b, i, t.lat);
            set_row(comp_b, i, t.composite);
            set_row(gt_b, i, t.gt);
        }
        Graph g;
        st.params.zero_grads();
        Bind b{g, st.params, true, {}};
        int gt_in = g.input(std::move(gt_b));
        int pred = cross_decode_graph(b, st, g.input(std::move(lat_b)), g.input(std::move(comp_b)),
                                      false);
        int loss = recon_loss(g, pred, gt_in, peak, perceptual);
        double lv = g.val(loss).v[0];
        push_log(log, tc, step, lv);
        check_finite(lv, step);
        g.backward(loss);
        opt.step(st.params);
        if (tc.ckpt_every > 0 && (step + 1) % tc.ckpt_every == 0 && sink) sink(st, step + 1);
    }
    st.trained = true;
    return st;
}

} // namespace flashsplit
