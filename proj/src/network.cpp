#include "kdsm/network.hpp"

#include <cmath>

#include "kdsm/rng.hpp"

namespace kdsm {

void NetConfig::validate() const {
    if (image_size <= 0 || image_channels <= 0)
        throw ConfigError("net: non-positive image geometry");
    if (encoder_widths.empty() || head_widths.size() != 3)
        throw ConfigError("net: encoder needs >= 1 block, head exactly 3");
    int s = image_size;
    for (std::size_t i = 0; i < encoder_widths.size(); ++i) {
        if (s % 2 != 0)
            throw ConfigError("net: image size not divisible by encoder stride");
        s /= 2;
    }
    if (s <= 0) throw ConfigError("net: encoder collapses the image");
    if (hei != s * 8 || wid != s * 8)
        throw ConfigError("net: heatmap " + std::to_string(hei) + "x" +
                          std::to_string(wid) + " incompatible with feature " +
                          std::to_string(s) + "x" + std::to_string(s) +
                          " and a x8 upsampling head");
    if (c0 < 8 || c <= 0 || d <= 0 || ffn_dim <= 0)
        throw ConfigError("net: non-positive width");
    if (heads <= 0 || d % heads != 0)
        throw ConfigError("net: d=" + std::to_string(d) +
                          " not divisible by heads=" + std::to_string(heads));
    if (K <= 0 || O <= 0)
        throw ConfigError("net: K and O must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
        throw ConfigError("net: dropout must be in [0, 1)");
    if (self_layers < 0 || cross_layers < 0)
        throw ConfigError("net: negative layer count");
    if (va_hidden <= 0) throw ConfigError("net: va_hidden must be positive");
    for (int w : encoder_widths)
        if (w <= 0) throw ConfigError("net: non-positive encoder width");
    for (int w : head_widths)
        if (w <= 0) throw ConfigError("net: non-positive head width");
}

Tensor& ParamStore::add(const std::string& name, std::vector<int> shape) {
    if (index_.count(name))
        throw ConfigError("param store: duplicate name " + name);
    index_.emplace(name, items_.size());
    Tensor t = Tensor::zeros(std::move(shape));
    t.requires_grad = true;
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
}

Tensor& ParamStore::find(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("param store: no tensor " + name);
    return items_[it->second].second;
}

const Tensor& ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("param store: no tensor " + name);
    return items_[it->second].second;
}

bool ParamStore::contains(const std::string& name) const {
    return index_.count(name) != 0;
}

namespace {

void add_attn_params(ParamStore& s, const std::string& prefix, int d) {
    s.add(prefix + ".wq", {d, d});
    s.add(prefix + ".bq", {d});
    s.add(prefix + ".wk", {d, d});
    s.add(prefix + ".bk", {d});
    s.add(prefix + ".wv", {d, d});
    s.add(prefix + ".bv", {d});
    s.add(prefix + ".wo", {d, d});
    s.add(prefix + ".bo", {d});
    s.add(prefix + ".ln_g", {d});
    s.add(prefix + ".ln_b", {d});
}

void add_ffn_params(ParamStore& s, const std::string& prefix, int d, int dff) {
    s.add(prefix + ".w1", {d, dff});
    s.add(prefix + ".b1", {dff});
    s.add(prefix + ".w2", {dff, d});
    s.add(prefix + ".b2", {d});
    s.add(prefix + ".ln_g", {d});
    s.add(prefix + ".ln_b", {d});
}

ops::AttentionParams attn_params(const BoundParams& bp,
                                 const std::string& prefix) {
    return {bp.at(prefix + ".wq"),   bp.at(prefix + ".bq"),
            bp.at(prefix + ".wk"),   bp.at(prefix + ".bk"),
            bp.at(prefix + ".wv"),   bp.at(prefix + ".bv"),
            bp.at(prefix + ".wo"),   bp.at(prefix + ".bo"),
            bp.at(prefix + ".ln_g"), bp.at(prefix + ".ln_b")};
}

ops::FfnParams ffn_params(const BoundParams& bp, const std::string& prefix) {
    return {bp.at(prefix + ".w1"),   bp.at(prefix + ".b1"),
            bp.at(prefix + ".w2"),   bp.at(prefix + ".b2"),
            bp.at(prefix + ".ln_g"), bp.at(prefix + ".ln_b")};
}

int fan_in_of(const std::string& name, const Tensor& t) {
    if (t.rank() == 4) {
        // conv [Co,Ci,kh,kw] and deconv [Cin,Cout,kh,kw] both contract over
        // dim-0-adjacent input channels times the kernel window
        if (name.find("deconv") != std::string::npos)
            return t.shape[0] * t.shape[2] * t.shape[3];
        return t.shape[1] * t.shape[2] * t.shape[3];
    }
    if (t.rank() == 2) return t.shape[0];
    return static_cast<int>(t.numel());
}

void init_tensor(const std::string& name, Tensor& t, std::uint64_t seed) {
    SplitMix64 rng(mix_seed(seed, fnv1a64(name)));
    const bool is_bias = name.ends_with(".b") || name.ends_with(".b1") ||
                         name.ends_with(".b2") || name.ends_with(".bq") ||
                         name.ends_with(".bk") || name.ends_with(".bv") ||
                         name.ends_with(".bo") || name.ends_with(".ln_b");
    if (is_bias) return; // zeros
    if (name.ends_with(".ln_g")) {
        t.data.setConstant(1.0);
        return;
    }
    if (name.ends_with(".pos")) {
        for (std::int64_t i = 0; i < t.numel(); ++i)
            t.data[i] = rng.uniform(-0.02, 0.02);
        return;
    }
    const double bound = std::sqrt(6.0 / fan_in_of(name, t));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t.data[i] = rng.uniform(-bound, bound);
}

} // namespace

ModelParams ModelParams::init(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams mp;
    mp.cfg = cfg;
    ParamStore& s = mp.store;

    int ci = cfg.image_channels;
    for (std::size_t l = 0; l < cfg.encoder_widths.size(); ++l) {
        const int co = cfg.encoder_widths[l];
        const std::string p = "enc.conv" + std::to_string(l + 1);
        s.add(p + ".w", {co, ci, 3, 3});
        s.add(p + ".b", {co});
        ci = co;
    }

    const int kh = cfg.kp_hidden_width();
    s.add("kpadapt.w1", {cfg.c0, kh});
    s.add("kpadapt.b1", {kh});
    s.add("kpadapt.w2", {kh, cfg.c});
    s.add("kpadapt.b2", {cfg.c});

    if (cfg.kdsm_mode) {
        s.add("vkra.text_in.w", {cfg.c0, cfg.d});
        s.add("vkra.text_in.b", {cfg.d});
        for (int l = 1; l <= cfg.self_layers; ++l) {
            const std::string p = "vkra.self" + std::to_string(l);
            add_attn_params(s, p + ".attn", cfg.d);
            add_ffn_params(s, p + ".ffn", cfg.d, cfg.ffn_dim);
        }
        s.add("vkra.vis_in.w", {cfg.encoder_out(), cfg.d});
        s.add("vkra.vis_in.b", {cfg.d});
        s.add("vkra.pos", {cfg.n_tokens(), cfg.d});
        for (int l = 1; l <= cfg.cross_layers; ++l) {
            const std::string p = "vkra.dec" + std::to_string(l);
            add_attn_params(s, p + ".self", cfg.d);
            add_attn_params(s, p + ".cross", cfg.d);
            add_ffn_params(s, p + ".ffn", cfg.d, cfg.ffn_dim);
        }
        s.add("vkra.vis_out.w", {cfg.d, cfg.encoder_out()});
        s.add("vkra.vis_out.b", {cfg.encoder_out()});
    }

    int hc = cfg.encoder_out();
    for (int l = 1; l <= 3; ++l) {
        const int co = cfg.head_widths[static_cast<std::size_t>(l - 1)];
        const std::string p = "head.deconv" + std::to_string(l);
        s.add(p + ".w", {hc, co, 4, 4});
        s.add(p + ".b", {co});
        hc = co;
    }
    s.add("head.final.w", {cfg.head_out_channels(), hc, 1, 1});
    s.add("head.final.b", {cfg.head_out_channels()});

    if (cfg.kdsm_mode) {
        s.add("visadapt.w1", {cfg.hei * cfg.wid, cfg.va_hidden});
        s.add("visadapt.b1", {cfg.va_hidden});
        s.add("visadapt.w2", {cfg.va_hidden, cfg.c});
        s.add("visadapt.b2", {cfg.c});
    }

    for (auto& [name, tensor] : s.items()) init_tensor(name, tensor, seed);
    return mp;
}

NodeId BoundParams::at(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw LookupError("bound params: no node for " + name);
    return it->second;
}

BoundParams bind_params(Graph& g, const ModelParams& params) {
    BoundParams bp;
    for (const auto& [name, tensor] : params.store.items())
        bp.ids.emplace(name, g.input(tensor));
    return bp;
}

NodeId vision_encode(Graph& g, const BoundParams& bp, const NetConfig& cfg,
                     NodeId image) {
    const Tensor& img = g.value(image);
    if (img.rank() != 3 || img.shape[0] != cfg.image_channels ||
        img.shape[1] != cfg.image_size || img.shape[2] != cfg.image_size)
        throw ConfigError("vision_encode: image shape " + shape_str(img.shape) +
                          " does not match config");
    NodeId x = image;
    for (std::size_t l = 1; l <= cfg.encoder_widths.size(); ++l) {
        const std::string p = "enc.conv" + std::to_string(l);
        x = ops::conv2d(g, x, bp.at(p + ".w"), 2, 1);
        x = ops::bias_channels(g, x, bp.at(p + ".b"));
        x = ops::relu(g, x);
    }
    return x;
}

NodeId keypoint_adapter(Graph& g, const BoundParams& bp, const NetConfig& cfg,
                        NodeId raw) {
    const Tensor& t = g.value(raw);
    if (t.rank() != 2 || t.shape[1] != cfg.c0)
        throw ConfigError("keypoint_adapter: raw width " + shape_str(t.shape) +
                          " does not match C0=" + std::to_string(cfg.c0));
    NodeId h = ops::relu(
        g, ops::linear(g, raw, bp.at("kpadapt.w1"), bp.at("kpadapt.b1")));
    return ops::linear(g, h, bp.at("kpadapt.w2"), bp.at("kpadapt.b2"));
}

VkraOut vkra_forward(Graph& g, const BoundParams& bp, const NetConfig& cfg,
                     NodeId raw_text, NodeId vision_feat) {
    const Tensor& feat = g.value(vision_feat);
    if (feat.rank() != 3 || feat.shape[0] != cfg.encoder_out() ||
        feat.shape[1] != cfg.feat_hw() || feat.shape[2] != cfg.feat_hw())
        throw ConfigError("vkra: vision feature " + shape_str(feat.shape) +
                          " does not match config");
    // text branch: project to d, then the self-attention stack
    NodeId y = ops::linear(g, raw_text, bp.at("vkra.text_in.w"),
                           bp.at("vkra.text_in.b"));
    for (int l = 1; l <= cfg.self_layers; ++l) {
        const std::string p = "vkra.self" + std::to_string(l);
        ops::AttentionLayerParams lp{attn_params(bp, p + ".attn"),
                                     ffn_params(bp, p + ".ffn")};
        y = ops::attention_layer(g, y, y, y, lp, cfg.heads, cfg.dropout);
    }

    // vision branch: tokens with positional embeddings, decoder-style stack
    const int cf = cfg.encoder_out();
    const int hw = cfg.n_tokens();
    NodeId tokens = ops::transpose(g, ops::reshape(g, vision_feat, {cf, hw}));
    NodeId x = ops::linear(g, tokens, bp.at("vkra.vis_in.w"),
                           bp.at("vkra.vis_in.b"));
    x = ops::add(g, x, bp.at("vkra.pos"));
    for (int l = 1; l <= cfg.cross_layers; ++l) {
        const std::string p = "vkra.dec" + std::to_string(l);
        x = ops::mha_block(g, x, x, x, attn_params(bp, p + ".self"), cfg.heads,
                           cfg.dropout);
        x = ops::mha_block(g, x, y, y, attn_params(bp, p + ".cross"), cfg.heads,
                           cfg.dropout);
        x = ops::ffn_block(g, x, ffn_params(bp, p + ".ffn"), cfg.dropout);
    }
    NodeId out = ops::linear(g, x, bp.at("vkra.vis_out.w"),
                             bp.at("vkra.vis_out.b"));
    NodeId v_tilde = ops::reshape(g, ops::transpose(g, out),
                                  {cf, cfg.feat_hw(), cfg.feat_hw()});
    return {y, v_tilde};
}

NodeId merge_residual(Graph& g, NodeId v, NodeId v_tilde) {
    return ops::add(g, v, v_tilde);
}

NodeId vision_head(Graph& g, const BoundParams& bp, const NetConfig&,
                   NodeId feat) {
    NodeId x = feat;
    for (int l = 1; l <= 3; ++l) {
        const std::string p = "head.deconv" + std::to_string(l);
        x = ops::deconv2d(g, x, bp.at(p + ".w"), 2, 1, 0);
        x = ops::bias_channels(g, x, bp.at(p + ".b"));
        x = ops::relu(g, x);
    }
    x = ops::conv2d(g, x, bp.at("head.final.w"), 1, 0);
    return ops::bias_channels(g, x, bp.at("head.final.b"));
}

NodeId vision_adapter(Graph& g, const BoundParams& bp, const NetConfig& cfg,
                      NodeId h_raw) {
    const Tensor& h = g.value(h_raw);
    if (h.rank() != 3 || h.shape[1] != cfg.hei || h.shape[2] != cfg.wid)
        throw ConfigError("vision_adapter: heatmap shape " + shape_str(h.shape) +
                          " does not match config");
    const int n = h.shape[0];
    NodeId flat = ops::reshape(g, h_raw, {n, cfg.hei * cfg.wid});
    NodeId hid = ops::relu(
        g, ops::linear(g, flat, bp.at("visadapt.w1"), bp.at("visadapt.b1")));
    NodeId out = ops::linear(g, hid, bp.at("visadapt.w2"), bp.at("visadapt.b2"));
    return ops::transpose(g, out); // [C x N]
}

ForwardOutputs baseline_forward(Graph& g, const BoundParams& bp,
                                const NetConfig& cfg, NodeId image,
                                NodeId raw_text) {
    if (cfg.kdsm_mode)
        throw ConfigError("baseline_forward: config is in KDSM mode");
    ForwardOutputs out;
    out.t_adapted = keypoint_adapter(g, bp, cfg, raw_text);
    NodeId v = vision_head(g, bp, cfg, vision_encode(g, bp, cfg, image));
    NodeId v_mat = ops::reshape(g, v, {cfg.c, cfg.hei * cfg.wid});
    NodeId h = ops::matmul(g, out.t_adapted, v_mat);
    out.h_raw = ops::reshape(g, h, {cfg.K, cfg.hei, cfg.wid});
    return out;
}

ForwardOutputs kdsm_forward(Graph& g, const BoundParams& bp,
                            const NetConfig& cfg, NodeId image,
                            NodeId raw_text) {
    if (!cfg.kdsm_mode)
        throw ConfigError("kdsm_forward: config is in baseline mode");
    ForwardOutputs out;
    NodeId feat = vision_encode(g, bp, cfg, image);
    VkraOut vk = vkra_forward(g, bp, cfg, raw_text, feat);
    NodeId merged = merge_residual(g, feat, vk.v_tilde);
    out.h_raw = vision_head(g, bp, cfg, merged);
    out.v_adapted = vision_adapter(g, bp, cfg, out.h_raw);
    out.t_adapted = keypoint_adapter(g, bp, cfg, raw_text);
    out.logits_p = ops::matmul(g, out.t_adapted, out.v_adapted);
    return out;
}

} // namespace kdsm
