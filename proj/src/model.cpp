#include "topformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "runner.hpp"

namespace topformer {

VariantConfig VariantConfig::preset(const std::string& which) {
    VariantConfig cfg;
    cfg.name = which;
    if (which == "tiny") {
        cfg.stages = {{{3, 4, 16, 2}, {3, 3, 16, 1}},
                      {{5, 3, 32, 2}, {5, 3, 32, 1}},
                      {{3, 3, 64, 2}, {3, 3, 64, 1}},
                      {{5, 6, 96, 2}, {5, 6, 96, 1}}};
        cfg.num_heads = 4;
        cfg.sim_width = 128;
    } else if (which == "small") {
        cfg.stages = {{{3, 4, 24, 2}, {3, 3, 24, 1}},
                      {{5, 3, 48, 2}, {5, 3, 48, 1}},
                      {{3, 3, 96, 2}, {3, 3, 96, 1}},
                      {{5, 6, 128, 2}, {5, 6, 128, 1}, {3, 6, 128, 1}}};
        cfg.num_heads = 6;
        cfg.sim_width = 192;
    } else if (which == "base") {
        cfg.stages = {{{3, 4, 32, 2}, {3, 3, 32, 1}},
                      {{5, 3, 64, 2}, {5, 3, 64, 1}},
                      {{3, 3, 128, 2}, {3, 3, 128, 1}},
                      {{5, 6, 160, 2}, {5, 6, 160, 1}, {3, 6, 160, 1}}};
        cfg.num_heads = 8;
        cfg.sim_width = 256;
    } else {
        throw ConfigError("unknown variant '" + which +
                          "' (available: tiny, small, base)");
    }
    return cfg;
}

std::int64_t VariantConfig::required_multiple() const {
    // 4-stage pyramids need the full 1/32 chain to land on integers
    if (stages.size() == 4) return std::max<std::int64_t>(32, sase_stride);
    return sase_stride;
}

namespace {

ConvBnDef make_conv(std::string name, std::int64_t in, std::int64_t out, int k, int s,
                    std::int64_t groups, bool bn, bool bias) {
    ConvBnDef d;
    d.name = std::move(name);
    d.conv = ConvSpec{.in_ch = in,
                      .out_ch = out,
                      .kh = k,
                      .kw = k,
                      .sh = s,
                      .sw = s,
                      .ph = k / 2,
                      .pw = k / 2,
                      .groups = groups,
                      .has_bias = bias};
    d.bn = bn;
    return d;
}

MbBlockDef make_mb(const std::string& prefix, std::int64_t in, const MBBlockCfg& c) {
    MbBlockDef blk;
    std::int64_t hidden = in;
    if (c.t > 1) {
        hidden = in * c.t;
        blk.has_expand = true;
        blk.expand = make_conv(prefix + ".expand", in, hidden, 1, 1, 1, true, false);
    }
    blk.dw = make_conv(prefix + ".dw", hidden, hidden, c.k, c.s, hidden, true, false);
    blk.project = make_conv(prefix + ".project", hidden, c.c, 1, 1, 1, true, false);
    blk.residual = (c.s == 1 && in == c.c);
    return blk;
}

void validate(const VariantConfig& cfg) {
    std::vector<std::string> bad;
    auto complain = [&](std::string msg) { bad.push_back(std::move(msg)); };

    if (cfg.stages.empty()) complain("no pyramid stages");
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        if (cfg.stages[s].empty())
            complain("stage " + std::to_string(s + 1) + " has no blocks");
        for (const MBBlockCfg& b : cfg.stages[s]) {
            if (b.k < 1 || b.k % 2 == 0)
                complain("stage " + std::to_string(s + 1) + ": kernel " +
                         std::to_string(b.k) + " must be odd");
            if (b.s != 1 && b.s != 2)
                complain("stage " + std::to_string(s + 1) + ": stride " +
                         std::to_string(b.s) + " must be 1 or 2");
            if (b.t < 1)
                complain("stage " + std::to_string(s + 1) + ": expand ratio " +
                         std::to_string(b.t) + " must be >= 1");
            if (b.c < 1)
                complain("stage " + std::to_string(s + 1) + ": channels must be >= 1");
        }
    }
    if (cfg.num_transformer_blocks < 1) complain("need at least one transformer block");
    if (cfg.num_heads < 1) complain("num_heads must be >= 1");
    if (cfg.key_dim < 1) complain("key_dim must be >= 1");
    if (cfg.value_dim < 1) complain("value_dim must be >= 1");
    if (cfg.ffn_expansion < 1) complain("ffn_expansion must be >= 1");
    if (cfg.num_classes < 1) complain("num_classes must be >= 1");
    if (cfg.sase_stride < 2) complain("sase_stride must be >= 2");

    const bool is_cls = cfg.head_kind == HeadKind::classification;
    if (is_cls && cfg.sase_stride != 32)
        complain("classification head requires sase_stride 32");
    if (!is_cls) {
        if (cfg.sim_width < 1) complain("sim_width must be >= 1");
        if (cfg.stages.size() < 2)
            complain("segmentation heads need at least two pyramid stages");
        if (cfg.head_kind == HeadKind::seg_concat && cfg.sim_width % 4 != 0)
            complain("concat head requires sim_width divisible by 4");
    }

    // named presets pin the published dimensions
    const bool named = cfg.name == "tiny" || cfg.name == "small" || cfg.name == "base";
    if (named) {
        if (cfg.num_transformer_blocks != 4)
            complain("preset '" + cfg.name + "' fixes L=4");
        if (cfg.key_dim != 16 || cfg.value_dim != 32)
            complain("preset '" + cfg.name + "' fixes D=16, value_dim=32");
        if (cfg.sase_stride != 32 && cfg.sase_stride != 64 && cfg.sase_stride != 128)
            complain("preset '" + cfg.name + "' allows sase_stride 32, 64 or 128");
        if (cfg.stages.size() != 4)
            complain("preset '" + cfg.name + "' has four pyramid stages");
        const std::int64_t want_h = cfg.name == "tiny" ? 4 : cfg.name == "small" ? 6 : 8;
        const std::int64_t want_m =
            cfg.name == "tiny" ? 128 : cfg.name == "small" ? 192 : 256;
        if (cfg.num_heads != want_h)
            complain("preset '" + cfg.name + "' fixes H=" + std::to_string(want_h));
        if (!is_cls && cfg.sim_width != want_m)
            complain("preset '" + cfg.name + "' fixes M=" + std::to_string(want_m));
    }

    if (!bad.empty()) {
        std::string msg = "invalid variant config:";
        for (const auto& b : bad) msg += "\n  - " + b;
        throw ConfigError(msg);
    }
}

}  // namespace

Model build(const VariantConfig& cfg) {
    validate(cfg);
    Model m;
    m.cfg = cfg;
    m.stem = make_conv("tpm.stem", 3, 16, 3, 2, 1, true, false);
    m.stages.push_back({make_mb("tpm.s0.b0", 16, MBBlockCfg{3, 1, 16, 1})});

    std::int64_t in = 16;
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        std::vector<MbBlockDef> blocks;
        for (std::size_t j = 0; j < cfg.stages[s].size(); ++j) {
            const std::string prefix =
                "tpm.s" + std::to_string(s + 1) + ".b" + std::to_string(j);
            blocks.push_back(make_mb(prefix, in, cfg.stages[s][j]));
            in = cfg.stages[s][j].c;
        }
        m.stages.push_back(std::move(blocks));
        m.stage_out_ch.push_back(in);
    }
    m.concat_ch = std::accumulate(m.stage_out_ch.begin(), m.stage_out_ch.end(),
                                  std::int64_t{0});

    const std::int64_t qkv_out =
        cfg.num_heads * (cfg.key_dim + cfg.key_dim + cfg.value_dim);
    const std::int64_t ffn_hidden = cfg.ffn_expansion * m.concat_ch;
    for (int i = 0; i < cfg.num_transformer_blocks; ++i) {
        const std::string p = "sase.blk" + std::to_string(i);
        SaseBlockDef blk;
        blk.qkv = make_conv(p + ".qkv", m.concat_ch, qkv_out, 1, 1, 1, true, false);
        blk.attn_out = make_conv(p + ".attn_out", cfg.num_heads * cfg.value_dim,
                                 m.concat_ch, 1, 1, 1, true, false);
        blk.ffn_expand =
            make_conv(p + ".ffn.expand", m.concat_ch, ffn_hidden, 1, 1, 1, true, false);
        blk.ffn_dw =
            make_conv(p + ".ffn.dw", ffn_hidden, ffn_hidden, 3, 1, ffn_hidden, true, false);
        blk.ffn_project =
            make_conv(p + ".ffn.project", ffn_hidden, m.concat_ch, 1, 1, 1, true, false);
        m.sase.push_back(std::move(blk));
    }

    m.head.kind = cfg.head_kind;
    if (cfg.head_kind == HeadKind::classification) {
        m.head.classifier = make_conv("head.classifier", m.concat_ch, cfg.num_classes,
                                      1, 1, 1, false, true);
        return m;
    }

    // semantics injection on every scale but the finest
    for (std::size_t s = 2; s <= cfg.stages.size(); ++s) {
        SimDef sim;
        sim.stage = static_cast<int>(s);
        const std::int64_t ch = m.stage_out_ch[s - 1];
        const std::string p = "sim.s" + std::to_string(s);
        sim.local = make_conv(p + ".local", ch, cfg.sim_width, 1, 1, 1, true, false);
        sim.has_gweight = cfg.head_kind != HeadKind::seg_sum;
        if (sim.has_gweight)
            sim.gweight =
                make_conv(p + ".gweight", ch, cfg.sim_width, 1, 1, 1, true, false);
        sim.gsem = make_conv(p + ".gsem", ch, cfg.sim_width, 1, 1, 1, true, false);
        m.sims.push_back(std::move(sim));
    }

    const std::int64_t M = cfg.sim_width;
    if (cfg.head_kind == HeadKind::seg_concat) {
        for (const SimDef& s : m.sims)
            m.head.reduce.push_back(make_conv("head.reduce" + std::to_string(s.stage),
                                              M, M / 4, 1, 1, 1, true, false));
        m.head.has_fuse = true;
        m.head.fuse = make_conv("head.fuse", (M / 4) * (std::int64_t)m.sims.size(),
                                M / 2, 1, 1, 1, true, false);
        m.head.classifier =
            make_conv("head.classifier", M / 2, cfg.num_classes, 1, 1, 1, false, true);
    } else {
        m.head.has_fuse = true;
        m.head.fuse = make_conv("head.fuse", M, M, 1, 1, 1, true, false);
        m.head.classifier =
            make_conv("head.classifier", M, cfg.num_classes, 1, 1, 1, false, true);
    }
    return m;
}

void for_each_convbn(const Model& m, const std::function<void(const ConvBnDef&)>& fn) {
    fn(m.stem);
    for (const auto& stage : m.stages)
        for (const auto& blk : stage) {
            if (blk.has_expand) fn(blk.expand);
            fn(blk.dw);
            fn(blk.project);
        }
    for (const auto& blk : m.sase) {
        fn(blk.qkv);
        fn(blk.attn_out);
        fn(blk.ffn_expand);
        fn(blk.ffn_dw);
        fn(blk.ffn_project);
    }
    for (const auto& sim : m.sims) {
        fn(sim.local);
        if (sim.has_gweight) fn(sim.gweight);
        fn(sim.gsem);
    }
    for (const auto& r : m.head.reduce) fn(r);
    if (m.head.has_fuse) fn(m.head.fuse);
    fn(m.head.classifier);
}

std::vector<ParamSlot> param_slots(const Model& m) {
    std::vector<ParamSlot> slots;
    for_each_convbn(m, [&](const ConvBnDef& d) {
        const std::int64_t fan_in =
            d.conv.in_ch / d.conv.groups * d.conv.kh * d.conv.kw;
        slots.push_back({d.name + ".conv.weight", d.conv.weight_shape(),
                         ParamKind::conv_weight, fan_in});
        const Shape vec{1, d.conv.out_ch, 1, 1};
        if (d.conv.has_bias)
            slots.push_back({d.name + ".conv.bias", vec, ParamKind::conv_bias, fan_in});
        if (d.bn) {
            slots.push_back({d.name + ".bn.gamma", vec, ParamKind::bn_gamma, 0});
            slots.push_back({d.name + ".bn.beta", vec, ParamKind::bn_beta, 0});
            slots.push_back({d.name + ".bn.mean", vec, ParamKind::bn_mean, 0});
            slots.push_back({d.name + ".bn.var", vec, ParamKind::bn_var, 0});
        }
    });
    return slots;
}

void bind(Model& m, WeightStore store) {
    std::map<std::string, Shape> expected;
    for (const ParamSlot& s : param_slots(m)) expected.emplace(s.name, s.shape);

    std::vector<std::string> missing, unexpected, mismatched;
    for (const auto& [name, tensor] : store.entries()) {
        auto it = expected.find(name);
        if (it == expected.end()) {
            unexpected.push_back(name);
            continue;
        }
        if (tensor.shape() != it->second)
            mismatched.push_back(name + " (store " + tensor.shape().str() +
                                 ", graph " + it->second.str() + ")");
        expected.erase(it);
    }
    for (const auto& [name, shape] : expected) missing.push_back(name);

    if (!missing.empty() || !unexpected.empty() || !mismatched.empty()) {
        std::ostringstream msg;
        msg << "weight store does not match the graph:";
        for (const auto& n : missing) msg << "\n  missing: " << n;
        for (const auto& n : unexpected) msg << "\n  unexpected: " << n;
        for (const auto& n : mismatched) msg << "\n  shape mismatch: " << n;
        throw BindError(msg.str());
    }
    m.weights = std::move(store);
    m.bound = true;
    m.folded = false;
    m.folded_convs.clear();
}

namespace {

std::vector<float> store_vec(const WeightStore& ws, const std::string& name) {
    const Tensor& t = ws.get(name);
    return {t.data(), t.data() + t.numel()};
}

BatchNormParams bn_from_store(const WeightStore& ws, const std::string& prefix) {
    BatchNormParams bn;
    bn.gamma = store_vec(ws, prefix + ".bn.gamma");
    bn.beta = store_vec(ws, prefix + ".bn.beta");
    bn.mean = store_vec(ws, prefix + ".bn.mean");
    bn.var = store_vec(ws, prefix + ".bn.var");
    return bn;
}

}  // namespace

void fold(Model& m) {
    if (!m.bound) throw StateError("cannot fold an unbound model");
    std::map<std::string, FoldedConv> folded;
    for_each_convbn(m, [&](const ConvBnDef& d) {
        if (!d.bn) return;
        std::span<const float> bias;
        std::vector<float> bias_vec;
        if (d.conv.has_bias) {
            bias_vec = store_vec(m.weights, d.name + ".conv.bias");
            bias = bias_vec;
        }
        auto [w, b] = batchnorm_fold(d.conv, m.weights.get(d.name + ".conv.weight"),
                                     bias, bn_from_store(m.weights, d.name));
        folded.emplace(d.name, FoldedConv{std::move(w), std::move(b)});
    });
    m.folded_convs = std::move(folded);
    m.folded = true;
}

namespace detail {

void check_input_dims(const Model& m, std::int64_t h, std::int64_t w) {
    const std::int64_t req = m.cfg.required_multiple();
    if (h < req || w < req || h % req != 0 || w % req != 0)
        throw InputError("input " + std::to_string(h) + "x" + std::to_string(w) +
                         ": dims must be positive multiples of " +
                         std::to_string(req));
}

struct EvalBackend {
    using Val = Tensor;
    const Model& m;

    explicit EvalBackend(const Model& model) : m(model) {
        if (!model.bound)
            throw StateError("model weights are unbound; bind a store first");
    }

    Shape shape(const Val& v) const { return v.shape(); }
    void note_scope(const std::string&) {}

    Val conv_bn(const ConvBnDef& d, const Val& x) {
        if (m.folded && d.bn) {
            const FoldedConv& fc = m.folded_convs.at(d.name);
            ConvSpec spec = d.conv;
            spec.has_bias = true;
            return topformer::conv2d<float>(x, spec, fc.weight, fc.bias);
        }
        std::span<const float> bias;
        if (d.conv.has_bias) bias = m.weights.get(d.name + ".conv.bias").span();
        Val y = topformer::conv2d<float>(x, d.conv,
                                         m.weights.get(d.name + ".conv.weight"), bias);
        if (d.bn) y = bn_apply(y, bn_from_store(m.weights, d.name));
        return y;
    }

    Val relu6(const Val& x) { return topformer::relu6<float>(x); }
    Val sigmoid(const Val& x) { return topformer::sigmoid<float>(x); }
    Val softmax(const Val& x) { return topformer::softmax_lastdim<float>(x); }
    Val add(const Val& a, const Val& b) { return topformer::add<float>(a, b); }
    Val hadamard(const Val& a, const Val& b) { return topformer::hadamard<float>(a, b); }
    Val concat(const std::vector<Val>& parts) {
        return topformer::concat_channels<float>(parts);
    }
    std::vector<Val> split(const Val& x, const std::vector<std::int64_t>& sizes) {
        return topformer::split_channels<float>(x, sizes);
    }
    Val pool(const Val& x, std::int64_t h, std::int64_t w) {
        return adaptive_avg_pool<float>(x, h, w);
    }
    Val upsample(const Val& x, std::int64_t h, std::int64_t w) {
        return bilinear_upsample<float>(x, h, w, false);
    }
    Val matmul(const Val& a, const Val& b) { return matmul_batched<float>(a, b); }
    Val transpose(const Val& x) { return transpose_mat<float>(x); }
    Val reshape(const Val& x, Shape s) { return x.reshaped(s); }
    Val scale(const Val& x, double f) {
        return topformer::scale<float>(x, static_cast<float>(f));
    }
};

struct TapeBackend {
    using Val = Tape::Var;
    Tape& t;
    const Model& m;
    std::map<std::string, Tape::Var> leaves;

    TapeBackend(Tape& tape, const Model& model, const std::vector<Tape::Var>& vars)
        : t(tape), m(model) {
        const auto slots = tape_slots(model);
        if (slots.size() != vars.size())
            throw ConfigError("expected " + std::to_string(slots.size()) +
                              " tape leaves, got " + std::to_string(vars.size()));
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (tape.value(vars[i]).shape() != slots[i].shape)
                throw ShapeError("tape leaf '" + slots[i].name + "' has dims " +
                                 tape.value(vars[i]).shape().str() + ", slot needs " +
                                 slots[i].shape.str());
            leaves.emplace(slots[i].name, vars[i]);
        }
    }

    Shape shape(Val v) const { return t.value(v).shape(); }
    void note_scope(const std::string&) {}

    Val conv_bn(const ConvBnDef& d, Val x) {
        const double fan =
            (double)(d.conv.in_ch / d.conv.groups * d.conv.kh * d.conv.kw);
        Val w = t.scale_const(leaves.at(d.name + ".conv.weight"), 1.0 / std::sqrt(fan));
        Val bias;
        if (d.conv.has_bias) bias = leaves.at(d.name + ".conv.bias");
        Val y = t.conv2d(x, d.conv, w, bias);
        if (d.bn)
            y = t.channel_affine(y, leaves.at(d.name + ".bn.scale"),
                                 leaves.at(d.name + ".bn.shift"));
        return y;
    }

    Val relu6(Val x) { return t.relu6(x); }
    Val sigmoid(Val x) { return t.sigmoid(x); }
    Val softmax(Val x) { return t.softmax_lastdim(x); }
    Val add(Val a, Val b) { return t.add(a, b); }
    Val hadamard(Val a, Val b) { return t.hadamard(a, b); }
    Val concat(const std::vector<Val>& parts) { return t.concat_channels(parts); }
    std::vector<Val> split(Val x, const std::vector<std::int64_t>& sizes) {
        return t.split_channels(x, sizes);
    }
    Val pool(Val x, std::int64_t h, std::int64_t w) {
        return t.adaptive_avg_pool(x, h, w);
    }
    Val upsample(Val x, std::int64_t h, std::int64_t w) {
        return t.bilinear_upsample(x, h, w);
    }
    Val matmul(Val a, Val b) { return t.matmul_batched(a, b); }
    Val transpose(Val x) { return t.transpose_mat(x); }
    Val reshape(Val x, Shape s) { return t.reshape(x, s); }
    Val scale(Val x, double f) { return t.scale_const(x, f); }
};

}  // namespace detail

using detail::EvalBackend;
using detail::Runner;
using detail::TapeBackend;

std::vector<Tensor> forward_pyramid(const Model& m, const Tensor& image) {
    detail::check_input_dims(m, image.shape().h, image.shape().w);
    EvalBackend b(m);
    Runner<EvalBackend> r{m, b};
    return r.pyramid(image);
}

Tensor pool_and_concat(const Model& m, const std::vector<Tensor>& tokens) {
    if (tokens.size() != m.stage_out_ch.size())
        throw ShapeError("expected " + std::to_string(m.stage_out_ch.size()) +
                         " token maps, got " + std::to_string(tokens.size()));
    EvalBackend b(m);
    Runner<EvalBackend> r{m, b};
    // the finest tokens sit at 1/4 scale, so the image extent is 4x theirs
    const std::int64_t gh = tokens[0].shape().h * 4 / m.cfg.sase_stride;
    const std::int64_t gw = tokens[0].shape().w * 4 / m.cfg.sase_stride;
    return r.pool_and_concat(tokens, std::max<std::int64_t>(gh, 1),
                             std::max<std::int64_t>(gw, 1));
}

namespace {
const SaseBlockDef& sase_block_at(const Model& m, int blk) {
    if (blk < 0 || blk >= static_cast<int>(m.sase.size()))
        throw ConfigError("transformer block index " + std::to_string(blk) +
                          " out of range (model has " +
                          std::to_string(m.sase.size()) + ")");
    return m.sase[static_cast<std::size_t>(blk)];
}
}  // namespace

Tensor mhsa(const Model& m, int blk, const Tensor& x, Tensor* attn_rows) {
    EvalBackend b(m);
    Runner<EvalBackend> r{m, b};
    return r.mhsa(sase_block_at(m, blk), x, attn_rows);
}

Tensor ffn(const Model& m, int blk, const Tensor& x) {
    EvalBackend b(m);
    Runner<EvalBackend> r{m, b};
    return r.ffn(sase_block_at(m, blk), x);
}

Tensor transformer_block(const Model& m, int blk, const Tensor& x) {
    EvalBackend b(m);
    Runner<EvalBackend> r{m, b};
    return r.transformer_block(sase_block_at(m, blk), x);
}

Tensor sim_forward(const Model& m, int sim_idx, const Tensor& local,
                   const Tensor& global_slice) {
    if (sim_idx < 0 || sim_idx >= static_cast<int>(m.sims.size()))
        throw ConfigError("injection index " + std::to_string(sim_idx) +
                          " out of range (model has " + std::to_string(m.sims.size()) +
                          ")");
    EvalBackend b(m);
    Runner<EvalBackend> r{m, b};
    return r.sim(m.sims[static_cast<std::size_t>(sim_idx)], local, global_slice);
}

Tensor seg_head(const Model& m, const std::vector<Tensor>& sim_outs) {
    if (m.head.kind == HeadKind::classification)
        throw ConfigError("seg_head called on a classification model");
    if (sim_outs.size() != m.sims.size())
        throw ShapeError("expected " + std::to_string(m.sims.size()) +
                         " injection outputs, got " + std::to_string(sim_outs.size()));
    EvalBackend b(m);
    Runner<EvalBackend> r{m, b};
    return r.seg_head(sim_outs);
}

Tensor cls_head(const Model& m, const Tensor& sase_out) {
    if (m.head.kind != HeadKind::classification)
        throw ConfigError("cls_head called on a segmentation model");
    EvalBackend b(m);
    Runner<EvalBackend> r{m, b};
    return r.cls_head(sase_out);
}

Tensor forward(const Model& m, const Tensor& image, const ForwardOpts& opts) {
    EvalBackend b(m);
    Runner<EvalBackend> r{m, b};
    return r.forward(image, opts);
}

std::vector<TapeSlot> tape_slots(const Model& m) {
    std::vector<TapeSlot> slots;
    for_each_convbn(m, [&](const ConvBnDef& d) {
        slots.push_back({d.name + ".conv.weight", d.conv.weight_shape()});
        const Shape vec{1, d.conv.out_ch, 1, 1};
        if (d.conv.has_bias) slots.push_back({d.name + ".conv.bias", vec});
        if (d.bn) {
            slots.push_back({d.name + ".bn.scale", vec});
            slots.push_back({d.name + ".bn.shift", vec});
        }
    });
    return slots;
}

Tape::Var record_forward(const Model& m, Tape& tape, Tape::Var image,
                         const std::vector<Tape::Var>& leaves,
                         const ForwardOpts& opts) {
    TapeBackend b(tape, m, leaves);
    Runner<TapeBackend> r{m, b};
    return r.forward(image, opts);
}

}  // namespace topformer
