#include "flashsplit/codec/cross_decoder.hpp"

#include "flashsplit/core/error.hpp"

namespace flashsplit {

CrossDecoderState cross_decoder_init(const CodecState& codec, const std::string& target) {
    require(target == "transmission" || target == "reflection", ErrorKind::config,
            "cross decoder target must be transmission or reflection");
    require(codec.trained, ErrorKind::usage, "cross decoder needs a trained codec");
    CrossDecoderState st;
    st.cfg = codec.cfg;
    st.lat_mean = codec.lat_mean;
    st.lat_std = codec.lat_std;
    st.target = target;
    for (const auto& [name, value] : codec.params.values)
        st.params.add(name, value);
    int b = st.cfg.width;
    st.params.add("skip.s0.w", Tensor(b, b, 1, 1)); // full resolution
    st.params.add("skip.s0.b", Tensor(1, b, 1, 1));
    st.params.add("skip.s1.w", Tensor(b, b, 1, 1)); // half resolution
    st.params.add("skip.s1.b", Tensor(1, b, 1, 1));
    return st;
}

int cross_decode_graph(Bind& b, const CrossDecoderState& st, int lat, int composite,
                       bool clamp_output) {
    const Tensor& z = b.g.val(lat);
    const Tensor& x = b.g.val(composite);
    require(z.c == st.cfg.latent_channels, ErrorKind::shape, "cross decode: latent channel mismatch");
    require(x.c == st.cfg.image_channels, ErrorKind::shape, "cross decode: composite channel mismatch");
    require(x.h == z.h * st.cfg.factor && x.w == z.w * st.cfg.factor && x.n == z.n,
            ErrorKind::shape, "cross decode: composite must cover the latent footprint");

    int a0 = b.g.silu(b.g.conv2d(composite, b("enc.c0.w"), b("enc.c0.b"), 1, 1)); // @H
    int a1 = b.g.silu(b.g.conv2d(a0, b("enc.c1.w"), b("enc.c1.b"), 2, 1));        // @H/2

    int h0 = b.g.channel_affine(lat, st.lat_std, st.lat_mean);
    int h = b.g.silu(b.g.conv2d(h0, b("dec.c0.w"), b("dec.c0.b"), 1, 1));
    h = b.g.silu(b.g.conv2d(h, b("dec.c1.w"), b("dec.c1.b"), 1, 1));
    h = b.g.upsample2x(h);
    h = b.g.silu(b.g.conv2d(h, b("dec.c2.w"), b("dec.c2.b"), 1, 1));
    h = b.g.add(h, b.g.conv2d(a1, b("skip.s1.w"), b("skip.s1.b"), 1, 0));
    h = b.g.upsample2x(h);
    h = b.g.silu(b.g.conv2d(h, b("dec.c3.w"), b("dec.c3.b"), 1, 1));
    h = b.g.add(h, b.g.conv2d(a0, b("skip.s0.w"), b("skip.s0.b"), 1, 0));
    int y = b.g.conv2d(h, b("dec.c4.w"), b("dec.c4.b"), 1, 1);
    if (clamp_output)
        y = b.g.clamp(y, 0.0, st.cfg.tonemapped ? 1.0 : st.cfg.max_scale);
    return y;
}

Tensor cross_latent_decode(const CrossDecoderState& st, const Tensor& lat, const Tensor& composite) {
    Graph g;
    ParamStore& p = const_cast<ParamStore&>(st.params);
    Bind b{g, p, false, {}};
    int y = cross_decode_graph(b, st, g.input(lat), g.input(composite));
    return g.val(y);
}

void save_cross_decoder(const std::string& path, const CrossDecoderState& st, const json& meta) {
    json cfg = codec_config_to_json(st.cfg);
    cfg["lat_mean"] = st.lat_mean;
    cfg["lat_std"] = st.lat_std;
    cfg["target"] = st.target;
    cfg["trained"] = st.trained;
    save_checkpoint(path, "cross_decoder", cfg, meta, st.params);
}

CrossDecoderState load_cross_decoder(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    require(ck.kind == "cross_decoder", ErrorKind::load, "not a cross decoder checkpoint: " + path);
    CrossDecoderState st;
    st.cfg = codec_config_from_json(ck.config);
    st.params = std::move(ck.params);
    st.lat_mean = ck.config.at("lat_mean").get<std::vector<double>>();
    st.lat_std = ck.config.at("lat_std").get<std::vector<double>>();
    st.target = ck.config.at("target").get<std::string>();
    st.trained = ck.config.at("trained").get<bool>();
    return st;
}

} // namespace flashsplit
