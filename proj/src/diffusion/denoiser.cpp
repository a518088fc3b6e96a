#include "flashsplit/diffusion/denoiser.hpp"

#include <cmath>

#include "flashsplit/core/error.hpp"

namespace flashsplit {

namespace {

int pick_groups(int channels, int cap) {
    for (int g = std::min(cap, channels); g >= 2; --g)
        if (channels % g == 0) return g;
    return 1;
}

struct Builder {
    Bind& b;
    const DenoiserConfig& cfg;
    int temb_act = -1; // silu of the embedded timestep, shared by all blocks

    int gn(const std::string& name, int x, int channels) {
        return b.g.group_norm(x, b(name + ".g"), b(name + ".b"), pick_groups(channels, cfg.groups));
    }
    int conv(const std::string& name, int x, int stride, int pad) {
        return b.g.conv2d(x, b(name + ".w"), b(name + ".b"), stride, pad);
    }
    int resblock(const std::string& q, int x, int cin, int cout) {
        int h = gn(q + ".n1", x, cin);
        h = b.g.silu(h);
        h = conv(q + ".c1", h, 1, 1);
        h = b.g.add_nc11(h, conv(q + ".e", temb_act, 1, 0));
        h = gn(q + ".n2", h, cout);
        h = b.g.silu(h);
        h = conv(q + ".c2", h, 1, 1);
        int skip = cin == cout ? x : conv(q + ".s", x, 1, 0);
        return b.g.add(h, skip);
    }
    // q_src and kv_src are token tensors [N,C,T,1]; returns the projected
    // attention output (no residual)
    int attention(const std::string& q, int q_src, int kv_src, int channels,
                  const std::string& qnorm, const std::string& kvnorm) {
        int hq = gn(q + qnorm, q_src, channels);
        int hkv = q_src == kv_src && qnorm == kvnorm ? hq : gn(q + kvnorm, kv_src, channels);
        int qq = conv(q + ".q", hq, 1, 0);
        int kk = conv(q + ".k", hkv, 1, 0);
        int vv = conv(q + ".v", hkv, 1, 0);
        int scores = b.g.scale(b.g.bmm(qq, true, kk, false), 1.0 / std::sqrt(double(channels)));
        int attn = b.g.softmax_h(scores);
        int att = b.g.bmm(vv, false, attn, true);
        return conv(q + ".o", att, 1, 0);
    }
};

struct BranchFront {
    int tok = -1; // mid tokens after the self-attention residual
    int x1 = -1, x2 = -1; // skip features at full and half latent resolution
};

BranchFront branch_front(Builder& bl, const std::string& p, int noisy, int z_fl, int z_nf) {
    Graph& g = bl.b.g;
    int w = bl.cfg.width;
    int in = g.concat_c(g.concat_c(noisy, z_fl), z_nf);
    int x0 = bl.conv(p + "in", in, 1, 1);
    BranchFront f;
    f.x1 = bl.resblock(p + "rb1", x0, w, w);
    int d1 = bl.conv(p + "down1", f.x1, 2, 1);
    f.x2 = bl.resblock(p + "rb2", d1, w, 2 * w);
    int d2 = bl.conv(p + "down2", f.x2, 2, 1);
    int m1 = bl.resblock(p + "mid1", d2, 2 * w, 2 * w);
    int t = g.tokens(m1);
    f.tok = g.add(t, bl.attention(p + "sa", t, t, 2 * w, ".n", ".n"));
    return f;
}

int branch_back(Builder& bl, const std::string& p, int tok, const BranchFront& f, int mh, int mw) {
    Graph& g = bl.b.g;
    int w = bl.cfg.width;
    int m = g.untokens(tok, mh, mw);
    int m2 = bl.resblock(p + "mid2", m, 2 * w, 2 * w);
    int u2 = bl.conv(p + "up2", g.upsample2x(m2), 1, 1);
    int y3 = bl.resblock(p + "rb3", g.concat_c(u2, f.x2), 4 * w, 2 * w);
    int u1 = bl.conv(p + "up1", g.upsample2x(y3), 1, 1);
    int y4 = bl.resblock(p + "rb4", g.concat_c(u1, f.x1), 2 * w, w);
    int on = bl.gn(p + "out.n", y4, w);
    return bl.conv(p + "out.c", g.silu(on), 1, 1);
}

void add_conv_params(ParamStore& p, Rng& rng, const std::string& name, int cout, int cin, int k,
                     bool zero = false) {
    p.add(name + ".w", zero ? Tensor(cout, cin, k, k) : conv_weight_init(rng, cout, cin, k, k));
    p.add(name + ".b", Tensor(1, cout, 1, 1));
}

void add_norm_params(ParamStore& p, const std::string& name, int channels) {
    Tensor gamma(1, channels, 1, 1);
    gamma.fill(1.0);
    p.add(name + ".g", gamma);
    p.add(name + ".b", Tensor(1, channels, 1, 1));
}

void add_resblock_params(ParamStore& p, Rng& rng, const std::string& q, int cin, int cout, int temb) {
    add_norm_params(p, q + ".n1", cin);
    add_conv_params(p, rng, q + ".c1", cout, cin, 3);
    add_conv_params(p, rng, q + ".e", cout, temb, 1);
    add_norm_params(p, q + ".n2", cout);
    add_conv_params(p, rng, q + ".c2", cout, cout, 3);
    if (cin != cout) add_conv_params(p, rng, q + ".s", cout, cin, 1);
}

void add_branch_params(ParamStore& p, Rng& rng, const std::string& pre, const DenoiserConfig& cfg) {
    int w = cfg.width, c = cfg.latent_channels, temb = 4 * w;
    add_conv_params(p, rng, pre + "in", w, 3 * c, 3);
    add_resblock_params(p, rng, pre + "rb1", w, w, temb);
    add_conv_params(p, rng, pre + "down1", w, w, 3);
    add_resblock_params(p, rng, pre + "rb2", w, 2 * w, temb);
    add_conv_params(p, rng, pre + "down2", 2 * w, 2 * w, 3);
    add_resblock_params(p, rng, pre + "mid1", 2 * w, 2 * w, temb);
    add_norm_params(p, pre + "sa.n", 2 * w);
    add_conv_params(p, rng, pre + "sa.q", 2 * w, 2 * w, 1);
    add_conv_params(p, rng, pre + "sa.k", 2 * w, 2 * w, 1);
    add_conv_params(p, rng, pre + "sa.v", 2 * w, 2 * w, 1);
    add_conv_params(p, rng, pre + "sa.o", 2 * w, 2 * w, 1);
    add_norm_params(p, pre + "ca.nq", 2 * w);
    add_norm_params(p, pre + "ca.nkv", 2 * w);
    add_conv_params(p, rng, pre + "ca.q", 2 * w, 2 * w, 1, true); // zero: fresh exchange is silent
    add_conv_params(p, rng, pre + "ca.k", 2 * w, 2 * w, 1);
    add_conv_params(p, rng, pre + "ca.v", 2 * w, 2 * w, 1);
    add_conv_params(p, rng, pre + "ca.o", 2 * w, 2 * w, 1, true);
    add_resblock_params(p, rng, pre + "mid2", 2 * w, 2 * w, temb);
    add_conv_params(p, rng, pre + "up2", 2 * w, 2 * w, 3);
    add_resblock_params(p, rng, pre + "rb3", 4 * w, 2 * w, temb);
    add_conv_params(p, rng, pre + "up1", w, 2 * w, 3);
    add_resblock_params(p, rng, pre + "rb4", 2 * w, w, temb);
    add_norm_params(p, pre + "out.n", w);
    add_conv_params(p, rng, pre + "out.c", c, w, 3);
}

} // namespace

void validate_denoiser_config(const DenoiserConfig& cfg) {
    require(cfg.latent_channels >= 1, ErrorKind::config, "denoiser needs latent channels");
    require(cfg.width >= 4 && cfg.width % 2 == 0, ErrorKind::config,
            "denoiser width must be even and at least 4");
    require(cfg.groups >= 1, ErrorKind::config, "group cap must be positive");
    require(cfg.diff_steps >= 1, ErrorKind::config, "diffusion steps must be positive");
    build_schedule(cfg.diff_steps, cfg.beta_start, cfg.beta_end, cfg.schedule_kind);
    validate_noise_config(cfg.noise);
}

json denoiser_config_to_json(const DenoiserConfig& cfg) {
    json j;
    j["latent_channels"] = cfg.latent_channels;
    j["width"] = cfg.width;
    j["groups"] = cfg.groups;
    j["diff_steps"] = cfg.diff_steps;
    j["beta_start"] = cfg.beta_start;
    j["beta_end"] = cfg.beta_end;
    j["schedule_kind"] = cfg.schedule_kind;
    j["noise_scales"] = cfg.noise.scales;
    j["noise_anneal"] = cfg.noise.anneal;
    return j;
}

DenoiserConfig denoiser_config_from_json(const json& j) {
    DenoiserConfig cfg;
    cfg.latent_channels = j.at("latent_channels").get<int>();
    cfg.width = j.at("width").get<int>();
    cfg.groups = j.at("groups").get<int>();
    cfg.diff_steps = j.at("diff_steps").get<int>();
    cfg.beta_start = j.at("beta_start").get<double>();
    cfg.beta_end = j.at("beta_end").get<double>();
    cfg.schedule_kind = j.at("schedule_kind").get<std::string>();
    cfg.noise.scales = j.at("noise_scales").get<std::vector<int>>();
    cfg.noise.anneal = j.at("noise_anneal").get<double>();
    validate_denoiser_config(cfg);
    return cfg;
}

DualDenoiserState denoiser_init(const DenoiserConfig& cfg, uint64_t seed) {
    validate_denoiser_config(cfg);
    DualDenoiserState st;
    st.cfg = cfg;
    Rng rng(seed);
    int w = cfg.width;
    add_conv_params(st.params, rng, "emb.m0", 4 * w, w, 1);
    add_conv_params(st.params, rng, "emb.m1", 4 * w, 4 * w, 1);
    add_branch_params(st.params, rng, "t.", cfg);
    add_branch_params(st.params, rng, "r.", cfg);
    return st;
}

Tensor timestep_features(const std::vector<int>& t_steps, int dim) {
    require(dim >= 2 && dim % 2 == 0, ErrorKind::contract, "timestep feature dim must be even");
    int half = dim / 2;
    Tensor out(int(t_steps.size()), dim, 1, 1);
    for (size_t ni = 0; ni < t_steps.size(); ++ni)
        for (int k = 0; k < half; ++k) {
            double f = std::exp(-std::log(10000.0) * double(k) / double(half));
            double a = double(t_steps[ni]) * f;
            out.at(int(ni), k, 0, 0) = std::sin(a);
            out.at(int(ni), half + k, 0, 0) = std::cos(a);
        }
    return out;
}

DenoiserOut denoiser_graph(Bind& b, const DualDenoiserState& st, int noisy_t, int noisy_r,
                           int z_flash, int z_noflash, int tfeat, bool cross_attention) {
    Graph& g = b.g;
    // val() references go stale as nodes are added, so keep dims by value
    const int lh = g.val(noisy_t).h, lw = g.val(noisy_t).w;
    {
        const Tensor& nt = g.val(noisy_t);
        require(nt.c == st.cfg.latent_channels, ErrorKind::shape,
                "denoiser: latent channel mismatch");
        require(nt.h % 4 == 0 && nt.w % 4 == 0, ErrorKind::shape,
                "denoiser: latent dims must be divisible by 4");
        require(nt.same_shape(g.val(noisy_r)) && nt.same_shape(g.val(z_flash))
                    && nt.same_shape(g.val(z_noflash)),
                ErrorKind::shape, "denoiser: all latent inputs must share one shape");
        const Tensor& tf = g.val(tfeat);
        require(tf.n == nt.n && tf.c == st.cfg.width && tf.h == 1 && tf.w == 1, ErrorKind::shape,
                "denoiser: timestep features must be [N,width,1,1]");
    }

    Builder bl{b, st.cfg, -1};
    int e = bl.conv("emb.m0", tfeat, 1, 0);
    e = bl.conv("emb.m1", g.silu(e), 1, 0);
    bl.temb_act = g.silu(e);

    BranchFront ft = branch_front(bl, "t.", noisy_t, z_flash, z_noflash);
    BranchFront fr = branch_front(bl, "r.", noisy_r, z_flash, z_noflash);

    int tt = ft.tok, tr = fr.tok;
    if (cross_attention) {
        int w2 = 2 * st.cfg.width;
        int ct = bl.attention("t.ca", ft.tok, fr.tok, w2, ".nq", ".nkv");
        int cr = bl.attention("r.ca", fr.tok, ft.tok, w2, ".nq", ".nkv");
        tt = g.add(ft.tok, ct);
        tr = g.add(fr.tok, cr);
    }

    DenoiserOut out;
    out.eps_t = branch_back(bl, "t.", tt, ft, lh / 4, lw / 4);
    out.eps_r = branch_back(bl, "r.", tr, fr, lh / 4, lw / 4);
    return out;
}

std::pair<Tensor, Tensor> denoiser_forward(const DualDenoiserState& st, const Tensor& noisy_t,
                                           const Tensor& noisy_r, const Tensor& z_flash,
                                           const Tensor& z_noflash, const std::vector<int>& t_steps,
                                           bool cross_attention) {
    require(int(t_steps.size()) == noisy_t.n, ErrorKind::shape,
            "denoiser: one timestep per batch row");
    Graph g;
    ParamStore& p = const_cast<ParamStore&>(st.params);
    Bind b{g, p, false, {}};
    DenoiserOut out = denoiser_graph(b, st, g.input(noisy_t), g.input(noisy_r), g.input(z_flash),
                                     g.input(z_noflash),
                                     g.input(timestep_features(t_steps, st.cfg.width)),
                                     cross_attention);
    return {g.val(out.eps_t), g.val(out.eps_r)};
}

SeparatedLatents separate(const DualDenoiserState& st, const CodecState& codec,
                          const std::vector<const CapturePair*>& pairs, int steps,
                          const std::vector<uint64_t>& seeds) {
    require(st.trained, ErrorKind::usage, "separate needs a trained stage-1 model");
    require(codec.trained, ErrorKind::usage, "separate needs a trained codec");
    require(!pairs.empty() && pairs.size() == seeds.size(), ErrorKind::contract,
            "separate: one seed per pair");
    require(st.cfg.latent_channels == codec.cfg.latent_channels, ErrorKind::config,
            "separate: codec and denoiser disagree on latent channels");
    for (const CapturePair* p : pairs)
        require(p->tonemapped == st.tonemapped, ErrorKind::mode,
                st.tonemapped ? "model is tonemapped but the pair is linear radiance"
                              : "model is linear radiance but the pair is tonemapped");
    require(codec.cfg.tonemapped == st.tonemapped, ErrorKind::mode,
            "codec and stage-1 model disagree on tonemapped mode");

    int n = int(pairs.size());
    int hh = pairs[0]->no_flash.h, ww = pairs[0]->no_flash.w;
    Tensor nf(n, pairs[0]->no_flash.c, hh, ww), fl = nf;
    for (int i = 0; i < n; ++i) {
        const CapturePair& p = *pairs[size_t(i)];
        require(p.no_flash.h == hh && p.no_flash.w == ww, ErrorKind::shape,
                "separate: pairs must share one image size");
        std::copy(p.no_flash.v.begin(), p.no_flash.v.end(), nf.v.begin() + size_t(i) * p.no_flash.size());
        std::copy(p.flash.v.begin(), p.flash.v.end(), fl.v.begin() + size_t(i) * p.flash.size());
    }
    Tensor z_nf = encode(codec, nf);
    Tensor z_fl = st.single_image ? z_nf : encode(codec, fl);

    NoiseSchedule sched = build_schedule(st.cfg.diff_steps, st.cfg.beta_start, st.cfg.beta_end,
                                         st.cfg.schedule_kind);
    std::vector<int> grid = ddim_grid(sched.steps, steps);

    int c = z_nf.c, lh = z_nf.h, lw = z_nf.w;
    Tensor s_t(n, c, lh, lw), s_r(n, c, lh, lw);
    size_t lsz = size_t(c) * lh * lw;
    for (int i = 0; i < n; ++i) {
        Rng rng(seeds[size_t(i)]);
        Tensor et = sample_white_noise(1, c, lh, lw, rng);
        Tensor er = sample_white_noise(1, c, lh, lw, rng);
        std::copy(et.v.begin(), et.v.end(), s_t.v.begin() + size_t(i) * lsz);
        std::copy(er.v.begin(), er.v.end(), s_r.v.begin() + size_t(i) * lsz);
    }

    // At low-signal steps the implied clean estimate divides a small eps
    // error by sqrt(alpha_bar), so an imperfect predictor can push the
    // state far off the scale it trained on and never recover. Clamping
    // the clean estimate bounds the trajectory; the bound sits well above
    // any latent the codec emits, so converged predictions pass unchanged.
    const double clean_bound = 4.0;
    for (size_t gi = 0; gi + 1 < grid.size(); ++gi) {
        int t = grid[gi], t_prev = grid[gi + 1];
        std::vector<int> ts(size_t(n), t);
        auto [eps_t, eps_r] = denoiser_forward(st, s_t, s_r, z_fl, z_nf, ts);
        double ab = sched.alpha_bar(t);
        auto bound_eps = [&](const Tensor& s, Tensor& eps) {
            for (size_t i = 0; i < s.v.size(); ++i) {
                double s0 = (s.v[i] - std::sqrt(1.0 - ab) * eps.v[i]) / std::sqrt(ab);
                if (s0 > clean_bound || s0 < -clean_bound) {
                    s0 = std::clamp(s0, -clean_bound, clean_bound);
                    eps.v[i] = (s.v[i] - std::sqrt(ab) * s0) / std::sqrt(1.0 - ab);
                }
            }
        };
        bound_eps(s_t, eps_t);
        bound_eps(s_r, eps_r);
        s_t = ddim_step(s_t, eps_t, t, t_prev, sched);
        s_r = ddim_step(s_r, eps_r, t, t_prev, sched);
    }
    return {std::move(s_t), std::move(s_r)};
}

void save_denoiser(const std::string& path, const DualDenoiserState& st, const json& meta) {
    json cfg = denoiser_config_to_json(st.cfg);
    cfg["trained"] = st.trained;
    cfg["single_image"] = st.single_image;
    cfg["tonemapped"] = st.tonemapped;
    save_checkpoint(path, "stage1", cfg, meta, st.params);
}

DualDenoiserState load_denoiser(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    require(ck.kind == "stage1", ErrorKind::load, "not a stage-1 checkpoint: " + path);
    DualDenoiserState st;
    st.cfg = denoiser_config_from_json(ck.config);
    st.params = std::move(ck.params);
    st.trained = ck.config.at("trained").get<bool>();
    st.single_image = ck.config.at("single_image").get<bool>();
    st.tonemapped = ck.config.at("tonemapped").get<bool>();
    return st;
}

} // namespace flashsplit
