#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "topformer/model.hpp"
#include "topformer/threading.hpp"

using namespace topformer;

namespace {

Tensor rand_tensor(Shape s, unsigned seed, float lo = -1.0f, float hi = 1.0f) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> dist(lo, hi);
    Tensor t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = dist(rng);
    return t;
}

float max_abs(const Tensor& a) {
    float m = 0.0f;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.data()[i]));
    return m;
}

// max |a-b| normalized by the magnitude of b
float rel_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    float m = 0.0f;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m / (max_abs(b) + 1e-12f);
}

Model bound_model(const VariantConfig& cfg, std::uint64_t seed = 1) {
    Model m = build(cfg);
    bind(m, random_init(m, seed));
    return m;
}

// store copy with some tensors replaced
WeightStore edit_store(const WeightStore& src,
                       const std::map<std::string, Tensor>& replace) {
    WeightStore out;
    for (const auto& [name, t] : src.entries()) {
        auto it = replace.find(name);
        out.put(name, it == replace.end() ? t : it->second);
    }
    return out;
}

// randomized batch-norm statistics so folding is a non-trivial identity
WeightStore randomize_bn(const Model& m, const WeightStore& src, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> du(-0.5f, 0.5f);
    std::uniform_real_distribution<float> dv(0.5f, 2.0f);
    WeightStore out;
    for (const auto& [name, t] : src.entries()) {
        Tensor r = t;
        const bool is_var = name.ends_with(".bn.var");
        const bool is_stat = name.ends_with(".bn.gamma") ||
                             name.ends_with(".bn.beta") || name.ends_with(".bn.mean");
        if (is_var)
            for (std::int64_t i = 0; i < r.numel(); ++i) r.data()[i] = dv(rng);
        else if (is_stat)
            for (std::int64_t i = 0; i < r.numel(); ++i)
                r.data()[i] = (name.ends_with(".bn.gamma") ? 1.0f : 0.0f) + du(rng);
        out.put(name, std::move(r));
    }
    return out;
}

std::int64_t learnable_params(const Model& m) {
    std::int64_t total = 0;
    for (const ParamSlot& s : param_slots(m))
        if (s.kind != ParamKind::bn_mean && s.kind != ParamKind::bn_var)
            total += s.shape.numel();
    return total;
}

}  // namespace

TEST_CASE("presets realize the published stage widths") {
    Model base = build(VariantConfig::preset("base"));
    CHECK(base.stage_out_ch == std::vector<std::int64_t>{32, 64, 128, 160});
    CHECK(base.concat_ch == 384);
    CHECK(base.sase.size() == 4);
    CHECK(base.sase[0].qkv.conv.out_ch == 8 * (16 + 16 + 32));  // fused QKV width
    CHECK(base.sase[0].ffn_expand.conv.out_ch == 768);
    CHECK(base.sims.size() == 3);
    for (const SimDef& s : base.sims) {
        CHECK(s.local.conv.out_ch == 256);
        CHECK(s.gsem.conv.out_ch == 256);
    }

    Model tiny = build(VariantConfig::preset("tiny"));
    CHECK(tiny.stage_out_ch == std::vector<std::int64_t>{16, 32, 64, 96});
    CHECK(tiny.concat_ch == 208);
    CHECK(tiny.cfg.num_heads == 4);
    CHECK(tiny.cfg.sim_width == 128);

    Model small = build(VariantConfig::preset("small"));
    CHECK(small.stage_out_ch == std::vector<std::int64_t>{24, 48, 96, 128});
    CHECK(small.stages[4].size() == 3);  // extra block in the coarsest stage
}

TEST_CASE("residual connections exist exactly when stride 1 preserves channels") {
    for (const char* v : {"tiny", "small", "base"}) {
        Model m = build(VariantConfig::preset(v));
        std::int64_t in = 16;  // stem output
        for (std::size_t s = 0; s < m.stages.size(); ++s)
            for (const MbBlockDef& blk : m.stages[s]) {
                const std::int64_t out = blk.project.conv.out_ch;
                const bool eligible = blk.dw.conv.sh == 1 && in == out;
                CHECK(blk.residual == eligible);
                in = out;
            }
    }
}

TEST_CASE("build rejects invalid configs listing every violation") {
    CHECK_THROWS_AS(VariantConfig::preset("giant"), ConfigError);

    VariantConfig cfg = VariantConfig::preset("base");
    cfg.num_heads = 5;                  // preset pins 8
    cfg.stages[1][0].k = 4;             // even kernel
    cfg.stages[2][1].s = 3;             // bad stride
    try {
        build(cfg);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("H=8") != std::string::npos);
        CHECK(msg.find("odd") != std::string::npos);
        CHECK(msg.find("stride") != std::string::npos);
    }

    VariantConfig cls = VariantConfig::preset("base");
    cls.head_kind = HeadKind::classification;
    CHECK_THROWS_AS(build(cls), ConfigError);  // needs sase_stride 32
    cls.sase_stride = 32;
    cls.num_classes = 1000;
    CHECK(build(cls).sims.empty());
}

TEST_CASE("weight naming follows the dotted convention") {
    Model m = build(VariantConfig::preset("small"));
    WeightStore ws = random_init(m, 3);
    for (const char* name :
         {"tpm.stem.conv.weight", "tpm.s0.b0.dw.conv.weight",
          "tpm.s1.b0.expand.conv.weight", "tpm.s4.b2.project.bn.gamma",
          "sase.blk0.qkv.conv.weight", "sase.blk3.ffn.dw.bn.var",
          "sim.s2.local.conv.weight", "sim.s4.gweight.bn.beta",
          "head.fuse.conv.weight", "head.classifier.conv.bias"})
        CHECK(ws.contains(name));
    // conv+bn units carry no conv bias
    CHECK_FALSE(ws.contains("head.fuse.conv.bias"));
}

TEST_CASE("bind lists missing, unexpected and mis-shaped names") {
    Model m = build(VariantConfig::preset("tiny"));
    WeightStore good = random_init(m, 5);

    WeightStore renamed;
    for (const auto& [name, t] : good.entries())
        renamed.put(name == "sim.s3.gsem.conv.weight" ? "sim.s3.gsem.conv.w" : name, t);
    try {
        bind(m, std::move(renamed));
        FAIL("expected BindError");
    } catch (const BindError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("missing: sim.s3.gsem.conv.weight") != std::string::npos);
        CHECK(msg.find("unexpected: sim.s3.gsem.conv.w") != std::string::npos);
    }

    WeightStore misshaped = edit_store(good, {{"head.fuse.conv.weight",
                                               Tensor(Shape{128, 128, 3, 3})}});
    CHECK_THROWS_WITH_AS(bind(m, std::move(misshaped)),
                         doctest::Contains("shape mismatch: head.fuse.conv.weight"),
                         BindError);

    CHECK_FALSE(m.bound);
    CHECK_THROWS_AS(forward(m, Tensor(Shape{1, 3, 64, 64})), StateError);
    bind(m, std::move(good));
    CHECK(m.bound);
}

TEST_CASE("token pyramid produces the documented scales") {
    set_num_threads(4);
    Model m = bound_model(VariantConfig::preset("base"));
    auto tokens = forward_pyramid(m, rand_tensor(Shape{1, 3, 64, 64}, 11));
    REQUIRE(tokens.size() == 4);
    CHECK(tokens[0].shape() == Shape{1, 32, 16, 16});
    CHECK(tokens[1].shape() == Shape{1, 64, 8, 8});
    CHECK(tokens[2].shape() == Shape{1, 128, 4, 4});
    CHECK(tokens[3].shape() == Shape{1, 160, 2, 2});

    CHECK_THROWS_WITH_AS(forward_pyramid(m, Tensor(Shape{1, 3, 100, 100})),
                         doctest::Contains("64"), InputError);
    set_num_threads(1);
}

TEST_CASE("zero weights propagate zero tokens") {
    Model m = build(VariantConfig::preset("tiny"));
    WeightStore zeros;
    for (const ParamSlot& s : param_slots(m)) zeros.put(s.name, Tensor(s.shape));
    bind(m, std::move(zeros));
    auto tokens = forward_pyramid(m, Tensor::full(Shape{1, 3, 64, 64}, 1.0f));
    for (const Tensor& t : tokens) CHECK(max_abs(t) == 0.0f);
}

TEST_CASE("pooled concat hits the stride grid with summed channels") {
    set_num_threads(4);
    Model m = bound_model(VariantConfig::preset("base"));
    auto tokens = forward_pyramid(m, rand_tensor(Shape{1, 3, 64, 64}, 21));
    Tensor cat = pool_and_concat(m, tokens);
    CHECK(cat.shape() == Shape{1, 384, 1, 1});

    VariantConfig c32 = VariantConfig::preset("base");
    c32.sase_stride = 32;
    Model m32 = bound_model(c32);
    Tensor cat32 = pool_and_concat(m32, forward_pyramid(m32, rand_tensor(Shape{1, 3, 64, 64}, 22)));
    CHECK(cat32.shape() == Shape{1, 384, 2, 2});

    // constant tokens pool to the same constants
    std::vector<Tensor> flat;
    for (std::size_t i = 0; i < tokens.size(); ++i)
        flat.push_back(Tensor::full(tokens[i].shape(), 0.5f + (float)i));
    Tensor catc = pool_and_concat(m, flat);
    CHECK(catc.at(0, 0, 0, 0) == doctest::Approx(0.5));
    CHECK(catc.at(0, 383, 0, 0) == doctest::Approx(3.5));
    set_num_threads(1);
}

TEST_CASE("transformer block becomes the identity with zeroed projections") {
    Model m = build(VariantConfig::preset("base"));
    WeightStore ws = random_init(m, 31);
    ws = edit_store(ws, {{"sase.blk0.attn_out.conv.weight",
                          Tensor(Shape{384, 256, 1, 1})},
                         {"sase.blk0.ffn.project.conv.weight",
                          Tensor(Shape{384, 768, 1, 1})}});
    bind(m, std::move(ws));

    Tensor x = rand_tensor(Shape{1, 384, 2, 2}, 32);
    Tensor y = transformer_block(m, 0, x);
    CHECK(std::memcmp(x.data(), y.data(), (std::size_t)x.numel() * 4) == 0);
}

TEST_CASE("attention rows are distributions; a single token attends to itself") {
    Model m = bound_model(VariantConfig::preset("base"), 41);
    Tensor x = rand_tensor(Shape{1, 384, 2, 2}, 42);

    Tensor rows;
    Tensor y = mhsa(m, 0, x, &rows);
    CHECK(y.shape() == x.shape());
    CHECK(rows.shape() == Shape{1, 8, 4, 4});
    for (std::int64_t r = 0; r < 8 * 4; ++r) {
        float sum = 0.0f;
        for (int j = 0; j < 4; ++j) sum += rows.data()[r * 4 + j];
        CHECK(std::fabs(sum - 1.0f) < 1e-6f);
    }

    // scaled input still yields row distributions
    Tensor rows3;
    mhsa(m, 0, scale<float>(x, 3.0f), &rows3);
    for (std::int64_t r = 0; r < 8 * 4; ++r) {
        float sum = 0.0f;
        for (int j = 0; j < 4; ++j) sum += rows3.data()[r * 4 + j];
        CHECK(std::fabs(sum - 1.0f) < 1e-6f);
    }

    Tensor one = rand_tensor(Shape{1, 384, 1, 1}, 43);
    Tensor rows1;
    mhsa(m, 0, one, &rows1);
    CHECK(rows1.shape() == Shape{1, 8, 1, 1});
    for (int h = 0; h < 8; ++h) CHECK(rows1.data()[h] == doctest::Approx(1.0));
}

TEST_CASE("ffn preserves dims and zeroes out with zero projection") {
    Model m = bound_model(VariantConfig::preset("base"), 51);
    Tensor x = rand_tensor(Shape{1, 384, 2, 2}, 52);
    CHECK(ffn(m, 0, x).shape() == x.shape());

    WeightStore ws = edit_store(m.weights, {{"sase.blk1.ffn.project.conv.weight",
                                             Tensor(Shape{384, 768, 1, 1})}});
    Model m2 = build(VariantConfig::preset("base"));
    bind(m2, std::move(ws));
    CHECK(max_abs(ffn(m2, 1, x)) == 0.0f);

    // all four blocks preserve dims end to end
    Tensor y = x;
    for (int blk = 0; blk < 4; ++blk) y = transformer_block(m, blk, y);
    CHECK(y.shape() == x.shape());
}

TEST_CASE("semantics injection gates the local projection") {
    Model m = bound_model(VariantConfig::preset("base"), 61);
    // stage 2 slice: 64 channels at 1/8 scale, pooled global at the SASE grid
    Tensor local = rand_tensor(Shape{1, 64, 8, 8}, 62);
    Tensor gslice = rand_tensor(Shape{1, 64, 1, 1}, 63);
    Tensor out = sim_forward(m, 0, local, gslice);
    CHECK(out.shape() == Shape{1, 256, 8, 8});

    // zeroed global branches: sigmoid(0) halves the local projection
    WeightStore ws = edit_store(
        m.weights, {{"sim.s2.gweight.conv.weight", Tensor(Shape{256, 64, 1, 1})},
                    {"sim.s2.gsem.conv.weight", Tensor(Shape{256, 64, 1, 1})}});
    Model m2 = build(VariantConfig::preset("base"));
    bind(m2, std::move(ws));
    Tensor gated = sim_forward(m2, 0, local, gslice);

    ConvSpec lspec{.in_ch = 64, .out_ch = 256, .kh = 1, .kw = 1};
    Tensor loc = conv2d<float>(local, lspec, m2.weights.get("sim.s2.local.conv.weight"));
    BatchNormParams bn;
    auto vec = [&](const char* s) {
        const Tensor& t = m2.weights.get(std::string("sim.s2.local") + s);
        return std::vector<float>(t.data(), t.data() + t.numel());
    };
    bn.gamma = vec(".bn.gamma");
    bn.beta = vec(".bn.beta");
    bn.mean = vec(".bn.mean");
    bn.var = vec(".bn.var");
    loc = bn_apply(loc, bn);
    CHECK(rel_diff(gated, scale<float>(loc, 0.5f)) < 1e-6f);

    CHECK_THROWS_AS(sim_forward(m, 0, local, rand_tensor(Shape{1, 32, 1, 1}, 64)),
                    ShapeError);
}

TEST_CASE("segmentation head variants order their parameter budgets") {
    VariantConfig cfg = VariantConfig::preset("base");
    const std::int64_t p_default = learnable_params(build(cfg));
    cfg.head_kind = HeadKind::seg_concat;
    const std::int64_t p_concat = learnable_params(build(cfg));
    cfg.head_kind = HeadKind::seg_sum;
    const std::int64_t p_sum = learnable_params(build(cfg));
    CHECK(p_default > p_concat);
    CHECK(p_concat > p_sum);
    // the sigmoid-gate branch is the whole default-vs-sum gap
    CHECK(p_default - p_sum > 46000);
    CHECK(p_default - p_sum < 170000);
}

TEST_CASE("forward produces logits at an eighth of the input") {
    set_num_threads(4);
    Model m = bound_model(VariantConfig::preset("small"), 71);
    Tensor img = rand_tensor(Shape{1, 3, 64, 64}, 72);
    Tensor logits = forward(m, img);
    CHECK(logits.shape() == Shape{1, 150, 8, 8});

    Tensor up = forward(m, img, {.upsample_to_input = true});
    CHECK(up.shape() == Shape{1, 150, 64, 64});

    // two runs are bit-identical, across thread counts too
    Tensor again = forward(m, img);
    CHECK(std::memcmp(logits.data(), again.data(), (std::size_t)logits.numel() * 4) ==
          0);
    set_num_threads(2);
    Tensor threaded = forward(m, img);
    CHECK(std::memcmp(logits.data(), threaded.data(),
                      (std::size_t)logits.numel() * 4) == 0);
    set_num_threads(1);
}

TEST_CASE("classification head pools the extractor output") {
    set_num_threads(4);
    VariantConfig cfg = VariantConfig::preset("base");
    cfg.head_kind = HeadKind::classification;
    cfg.sase_stride = 32;
    cfg.num_classes = 1000;
    Model m = bound_model(cfg, 81);
    Tensor scores = forward(m, rand_tensor(Shape{1, 3, 224, 224}, 82));
    CHECK(scores.shape() == Shape{1, 1000, 1, 1});

    // identity-row classifier reads back the pooled per-channel means
    VariantConfig c5 = cfg;
    c5.num_classes = 5;
    Model m5 = build(c5);
    Tensor w(Shape{5, 384, 1, 1});
    for (int j = 0; j < 5; ++j) w.at(j, j, 0, 0) = 1.0f;
    WeightStore ws = edit_store(random_init(m5, 83),
                                {{"head.classifier.conv.weight", w},
                                 {"head.classifier.conv.bias", Tensor(Shape{1, 5, 1, 1})}});
    bind(m5, std::move(ws));
    Tensor sase_out(Shape{1, 384, 7, 7});
    for (std::int64_t c = 0; c < 384; ++c)
        for (std::int64_t i = 0; i < 49; ++i)
            sase_out.data()[c * 49 + i] = 0.25f * (float)c;
    Tensor v = cls_head(m5, sase_out);
    for (int j = 0; j < 5; ++j) CHECK(v.data()[j] == doctest::Approx(0.25 * j));

    CHECK_THROWS_AS(cls_head(bound_model(VariantConfig::preset("tiny"), 84),
                             Tensor(Shape{1, 208, 2, 2})),
                    ConfigError);
    CHECK_THROWS_AS(seg_head(m, {}), ConfigError);
    set_num_threads(1);
}

TEST_CASE("folded and unfolded forwards agree") {
    set_num_threads(4);
    Model m = build(VariantConfig::preset("tiny"));
    bind(m, randomize_bn(m, random_init(m, 91), 92));
    Tensor img = rand_tensor(Shape{1, 3, 64, 64}, 93);
    Tensor ref = forward(m, img);
    CHECK_FALSE(m.folded);
    fold(m);
    CHECK(m.folded);
    Tensor fast = forward(m, img);
    CHECK(rel_diff(fast, ref) < 1e-4f);
    set_num_threads(1);

    Model unbound = build(VariantConfig::preset("tiny"));
    CHECK_THROWS_AS(fold(unbound), StateError);
}

TEST_CASE("tiny at 448 lands on the published grids") {
    set_num_threads(4);
    Model m = bound_model(VariantConfig::preset("tiny"), 101);
    fold(m);
    Tensor img = rand_tensor(Shape{1, 3, 448, 448}, 102);
    auto tokens = forward_pyramid(m, img);
    CHECK(tokens[3].shape() == Shape{1, 96, 14, 14});
    Tensor logits = forward(m, img);
    CHECK(logits.shape() == Shape{1, 150, 56, 56});
    set_num_threads(1);
}

TEST_CASE("gradcheck passes on the composed micro model") {
    VariantConfig micro;
    micro.name = "micro";
    micro.stages = {{{3, 1, 8, 2}}, {{3, 1, 8, 2}}};
    micro.num_transformer_blocks = 1;
    micro.num_heads = 2;
    micro.key_dim = 4;
    micro.value_dim = 8;
    micro.sim_width = 8;
    micro.sase_stride = 4;
    micro.num_classes = 3;
    Model m = build(micro);

    const auto slots = tape_slots(m);
    std::vector<Shape> shapes{Shape{1, 3, 4, 4}};
    for (const TapeSlot& s : slots) shapes.push_back(s.shape);

    TapeBuilder builder = [&](Tape& t, const std::vector<Tape::Var>& in) {
        std::vector<Tape::Var> leaves(in.begin() + 1, in.end());
        return record_forward(m, t, in[0], leaves);
    };
    auto r = fd_gradcheck(builder, shapes, 2024, 1e-3);
    CHECK(r.max_rel_err <= 1e-3);
    CHECK(r.pass);
}

TEST_CASE("tape forward matches the f32 forward on the micro model") {
    VariantConfig micro;
    micro.name = "micro";
    micro.stages = {{{3, 1, 8, 2}}, {{3, 2, 8, 1}}};
    micro.num_transformer_blocks = 1;
    micro.num_heads = 2;
    micro.key_dim = 4;
    micro.value_dim = 8;
    micro.sim_width = 8;
    micro.sase_stride = 4;
    micro.num_classes = 3;
    Model m = bound_model(micro, 111);

    // mirror the store into tape leaves, undoing the runner's fan-in scaling
    // and converting bn to its affine form
    Tape t;
    std::vector<Tape::Var> leaves;
    for (const TapeSlot& slot : tape_slots(m)) {
        DTensor v(slot.shape);
        if (slot.name.ends_with(".conv.weight")) {
            const Tensor& w = m.weights.get(slot.name);
            ConvSpec spec;  // recover fan-in from the weight dims and unit names
            // fan_in = numel per output row
            const double fan = (double)(w.numel() / w.shape().n);
            for (std::int64_t i = 0; i < v.numel(); ++i)
                v.data()[i] = (double)w.data()[i] * std::sqrt(fan);
            (void)spec;
        } else if (slot.name.ends_with(".bn.scale")) {
            const std::string p = slot.name.substr(0, slot.name.size() - 9);
            const Tensor& g = m.weights.get(p + ".bn.gamma");
            const Tensor& var = m.weights.get(p + ".bn.var");
            for (std::int64_t i = 0; i < v.numel(); ++i)
                v.data()[i] = (double)g.data()[i] /
                              std::sqrt((double)var.data()[i] + 1e-5);
        } else if (slot.name.ends_with(".bn.shift")) {
            const std::string p = slot.name.substr(0, slot.name.size() - 9);
            const Tensor& g = m.weights.get(p + ".bn.gamma");
            const Tensor& var = m.weights.get(p + ".bn.var");
            const Tensor& beta = m.weights.get(p + ".bn.beta");
            const Tensor& mean = m.weights.get(p + ".bn.mean");
            for (std::int64_t i = 0; i < v.numel(); ++i) {
                const double s = (double)g.data()[i] /
                                 std::sqrt((double)var.data()[i] + 1e-5);
                v.data()[i] = (double)beta.data()[i] - s * (double)mean.data()[i];
            }
        } else {  // conv bias
            const Tensor& b = m.weights.get(slot.name);
            for (std::int64_t i = 0; i < v.numel(); ++i) v.data()[i] = b.data()[i];
        }
        leaves.push_back(t.leaf(slot.name, std::move(v)));
    }

    Tensor img = rand_tensor(Shape{1, 3, 4, 4}, 112);
    Tape::Var out = record_forward(m, t, t.constant(img.cast<double>()), leaves);
    Tensor f32 = forward(m, img);
    const DTensor& f64 = t.value(out);
    REQUIRE(f64.shape() == f32.shape());
    for (std::int64_t i = 0; i < f32.numel(); ++i)
        CHECK(std::fabs(f64.data()[i] - (double)f32.data()[i]) < 1e-4);
}
