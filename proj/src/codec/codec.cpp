#include "flashsplit/codec/codec.hpp"

#include "flashsplit/core/error.hpp"

namespace flashsplit {

namespace {

void add_conv(ParamStore& p, Rng& rng, const std::string& name, int cout, int cin) {
    p.add(name + ".w", conv_weight_init(rng, cout, cin, 3, 3));
    p.add(name + ".b", Tensor(1, cout, 1, 1));
}

} // namespace

void validate_codec_config(const CodecConfig& cfg) {
    require(cfg.image_channels == 1 || cfg.image_channels == 3, ErrorKind::config,
            "codec image channels must be 1 or 3");
    require(cfg.width >= 2, ErrorKind::config, "codec width must be at least 2");
    require(cfg.factor == 4, ErrorKind::config, "codec downsample factor is fixed at 4");
    require(cfg.latent_channels >= 1, ErrorKind::config, "codec needs at least one latent channel");
    require(cfg.max_scale >= 1.0, ErrorKind::config, "codec max_scale must be at least 1");
}

json codec_config_to_json(const CodecConfig& cfg) {
    json j;
    j["image_channels"] = cfg.image_channels;
    j["width"] = cfg.width;
    j["factor"] = cfg.factor;
    j["latent_channels"] = cfg.latent_channels;
    j["tonemapped"] = cfg.tonemapped;
    j["max_scale"] = cfg.max_scale;
    return j;
}

CodecConfig codec_config_from_json(const json& j) {
    CodecConfig cfg;
    cfg.image_channels = j.at("image_channels").get<int>();
    cfg.width = j.at("width").get<int>();
    cfg.factor = j.at("factor").get<int>();
    cfg.latent_channels = j.at("latent_channels").get<int>();
    cfg.tonemapped = j.at("tonemapped").get<bool>();
    cfg.max_scale = j.at("max_scale").get<double>();
    validate_codec_config(cfg);
    return cfg;
}

CodecState codec_init(const CodecConfig& cfg, uint64_t seed) {
    validate_codec_config(cfg);
    CodecState st;
    st.cfg = cfg;
    Rng rng(seed);
    int b = cfg.width, c = cfg.latent_channels, ic = cfg.image_channels;
    add_conv(st.params, rng, "enc.c0", b, ic);
    add_conv(st.params, rng, "enc.c1", b, b);
    add_conv(st.params, rng, "enc.c2", 2 * b, b);
    add_conv(st.params, rng, "enc.c3", 2 * b, 2 * b);
    add_conv(st.params, rng, "enc.c4", c, 2 * b);
    add_conv(st.params, rng, "dec.c0", 2 * b, c);
    add_conv(st.params, rng, "dec.c1", 2 * b, 2 * b);
    add_conv(st.params, rng, "dec.c2", b, 2 * b);
    add_conv(st.params, rng, "dec.c3", b, b);
    add_conv(st.params, rng, "dec.c4", ic, b);
    st.lat_mean.assign(size_t(c), 0.0);
    st.lat_std.assign(size_t(c), 1.0);
    return st;
}

int encode_graph(Bind& b, const CodecState& st, int img, bool standardize) {
    const Tensor& x = b.g.val(img);
    require(x.c == st.cfg.image_channels, ErrorKind::shape, "encode: channel count mismatch");
    require(x.h % st.cfg.factor == 0 && x.w % st.cfg.factor == 0, ErrorKind::shape,
            "encode: spatial dims must be divisible by the downsample factor");
    int h = b.g.silu(b.g.conv2d(img, b("enc.c0.w"), b("enc.c0.b"), 1, 1));
    h = b.g.silu(b.g.conv2d(h, b("enc.c1.w"), b("enc.c1.b"), 2, 1));
    h = b.g.silu(b.g.conv2d(h, b("enc.c2.w"), b("enc.c2.b"), 2, 1));
    h = b.g.silu(b.g.conv2d(h, b("enc.c3.w"), b("enc.c3.b"), 1, 1));
    int z = b.g.conv2d(h, b("enc.c4.w"), b("enc.c4.b"), 1, 1);
    if (standardize) {
        std::vector<double> sc(st.lat_std.size()), sh(st.lat_std.size());
        for (size_t i = 0; i < sc.size(); ++i) {
            sc[i] = 1.0 / st.lat_std[i];
            sh[i] = -st.lat_mean[i] / st.lat_std[i];
        }
        z = b.g.channel_affine(z, sc, sh);
    }
    return z;
}

int decode_graph(Bind& b, const CodecState& st, int lat, bool standardize, bool clamp_output) {
    const Tensor& z = b.g.val(lat);
    require(z.c == st.cfg.latent_channels, ErrorKind::shape, "decode: latent channel mismatch");
    int h0 = lat;
    if (standardize)
        h0 = b.g.channel_affine(lat, st.lat_std, st.lat_mean);
    int h = b.g.silu(b.g.conv2d(h0, b("dec.c0.w"), b("dec.c0.b"), 1, 1));
    h = b.g.silu(b.g.conv2d(h, b("dec.c1.w"), b("dec.c1.b"), 1, 1));
    h = b.g.upsample2x(h);
    h = b.g.silu(b.g.conv2d(h, b("dec.c2.w"), b("dec.c2.b"), 1, 1));
    h = b.g.upsample2x(h);
    h = b.g.silu(b.g.conv2d(h, b("dec.c3.w"), b("dec.c3.b"), 1, 1));
    int y = b.g.conv2d(h, b("dec.c4.w"), b("dec.c4.b"), 1, 1);
    if (clamp_output)
        y = b.g.clamp(y, 0.0, st.cfg.tonemapped ? 1.0 : st.cfg.max_scale);
    return y;
}

Tensor encode(const CodecState& st, const Tensor& img) {
    Graph g;
    ParamStore& p = const_cast<ParamStore&>(st.params);
    Bind b{g, p, false, {}};
    int z = encode_graph(b, st, g.input(img));
    return g.val(z);
}

Tensor decode(const CodecState& st, const Tensor& lat) {
    Graph g;
    ParamStore& p = const_cast<ParamStore&>(st.params);
    Bind b{g, p, false, {}};
    int y = decode_graph(b, st, g.input(lat));
    return g.val(y);
}

void save_codec(const std::string& path, const CodecState& st, const json& meta) {
    json cfg = codec_config_to_json(st.cfg);
    cfg["lat_mean"] = st.lat_mean;
    cfg["lat_std"] = st.lat_std;
    cfg["trained"] = st.trained;
    save_checkpoint(path, "codec", cfg, meta, st.params);
}

CodecState load_codec(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    require(ck.kind == "codec", ErrorKind::load, "not a codec checkpoint: " + path);
    CodecState st;
    st.cfg = codec_config_from_json(ck.config);
    st.params = std::move(ck.params);
    st.lat_mean = ck.config.at("lat_mean").get<std::vector<double>>();
    st.lat_std = ck.config.at("lat_std").get<std::vector<double>>();
    st.trained = ck.config.at("trained").get<bool>();
    require(st.lat_mean.size() == size_t(st.cfg.latent_channels)
                && st.lat_std.size() == size_t(st.cfg.latent_channels),
            ErrorKind::load, "latent stats do not match latent channel count");
    for (double s : st.lat_std)
        require(s > 0.0, ErrorKind::load, "latent std must be positive");
    return st;
}

} // namespace flashsplit
