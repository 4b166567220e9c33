// Command-line front end: describe / analyze / infer / bench / gradcheck /
// selftest. Exit codes: 0 ok, 1 numeric check failed, 2 usage or format
// error, 3 binding or file IO error.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "topformer/analyzer.hpp"
#include "topformer/autodiff.hpp"
#include "topformer/iofmt.hpp"
#include "topformer/model.hpp"
#include "topformer/threading.hpp"

using namespace topformer;

namespace {

struct Options {
    std::string variant = "base";
    std::string input = "512x512";
    int sase_stride = 0;  // 0 = keep the variant default
    std::string head = "default";
    int classes = 0;  // 0 = keep the variant default
    std::string weights, image, out, palette, colorized;
    bool upsample = false;
    bool tsv = false;
    int warmup = 2;
    int iters = 20;
    int threads = 1;
    std::uint64_t seed = 1;
    double tol = 1e-4;
};

std::pair<std::int64_t, std::int64_t> parse_hw(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= s.size())
        throw ConfigError("input must be HxW, got '" + s + "'");
    try {
        const std::int64_t h = std::stoll(s.substr(0, x));
        const std::int64_t w = std::stoll(s.substr(x + 1));
        if (h <= 0 || w <= 0) throw ConfigError("input dims must be positive");
        return {h, w};
    } catch (const std::logic_error&) {
        throw ConfigError("input must be HxW, got '" + s + "'");
    }
}

VariantConfig make_config(const Options& o) {
    VariantConfig cfg = VariantConfig::preset(o.variant);
    if (o.sase_stride) cfg.sase_stride = o.sase_stride;
    if (o.classes) cfg.num_classes = o.classes;
    if (o.head == "concat")
        cfg.head_kind = HeadKind::seg_concat;
    else if (o.head == "sum")
        cfg.head_kind = HeadKind::seg_sum;
    else if (o.head == "classification")
        cfg.head_kind = HeadKind::classification;
    else if (o.head != "default")
        throw ConfigError("head must be default, concat, sum or classification");
    return cfg;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                     t0)
        .count();
}

int cmd_describe(const Options& o) {
    const VariantConfig cfg = make_config(o);
    const Model m = build(cfg);
    const auto [h, w] = parse_hw(o.input);

    std::printf("variant: %s\n", cfg.name.c_str());
    std::printf("token pyramid (k = kernel, t = expansion, c = channels, s = stride)\n");
    std::printf("  stem: conv 3x3 s2 -> 16ch, mb k3 t1 c16 s1\n");
    for (std::size_t s = 1; s < m.stages.size(); ++s) {
        std::printf("  stage %zu:", s);
        for (const MbBlockDef& blk : m.stages[s]) {
            const std::int64_t k = blk.dw.conv.kh;
            const std::int64_t t = blk.has_expand
                                       ? blk.expand.conv.out_ch / blk.expand.conv.in_ch
                                       : 1;
            std::printf(" (k%lld t%lld c%lld s%lld)", (long long)k, (long long)t,
                        (long long)blk.project.conv.out_ch, (long long)blk.dw.conv.sh);
        }
        std::printf("\n");
    }
    std::printf("semantics extractor: L=%d blocks, H=%d heads, D=%d, V=%d, tokens %lldch at stride %d\n",
                cfg.num_transformer_blocks, cfg.num_heads, cfg.key_dim,
                cfg.value_dim, (long long)m.concat_ch, cfg.sase_stride);
    std::printf("injection width M=%d, head: %s, classes: %d\n", cfg.sim_width,
                o.head.c_str(), cfg.num_classes);

    std::printf("\nshape trace at %lldx%lld\n", (long long)h, (long long)w);
    for (const TraceRow& row : trace_shapes(m, h, w))
        std::printf("  %-24s %s\n", row.name.c_str(), row.out.str().c_str());
    return 0;
}

int cmd_analyze(const Options& o) {
    const Model m = build(make_config(o));
    const auto [h, w] = parse_hw(o.input);
    const CostReport r = count_flops(m, h, w);
    std::fputs((o.tsv ? render_tsv(r) : render_table(r)).c_str(), stdout);
    return 0;
}

int cmd_infer(const Options& o) {
    set_num_threads(o.threads);
    Model m = build(make_config(o));
    bind(m, load_weights(o.weights));
    fold(m);

    const Tensor image = read_ppm(o.image);
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor logits = forward(m, image, {.upsample_to_input = o.upsample});
    const double ms = elapsed_ms(t0);

    write_pgm(logits, o.out);
    std::printf("wrote %s (%lldx%lld, %lld classes) forward %.1f ms\n",
                o.out.c_str(), (long long)logits.shape().h,
                (long long)logits.shape().w, (long long)logits.shape().c, ms);
    if (!o.colorized.empty()) {
        if (o.palette.empty()) throw ConfigError("--colorized needs --palette");
        write_ppm_colorized(logits, o.palette, o.colorized);
        std::printf("wrote %s\n", o.colorized.c_str());
    }
    return 0;
}

int cmd_init(const Options& o) {
    const Model m = build(make_config(o));
    const WeightStore ws = random_init(m, o.seed);
    save_weights(ws, o.out);
    std::printf("wrote %s (%zu tensors, seed %llu)\n", o.out.c_str(), ws.size(),
                (unsigned long long)o.seed);
    return 0;
}

int cmd_bench(const Options& o) {
    if (o.iters < 3) throw ConfigError("--iters must be at least 3");
    set_num_threads(o.threads);
    Model m = build(make_config(o));
    bind(m, random_init(m, o.seed));
    fold(m);
    const auto [h, w] = parse_hw(o.input);

    std::mt19937 rng(9);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    Tensor image(Shape{1, 3, h, w});
    for (std::int64_t i = 0; i < image.numel(); ++i) image.data()[i] = dist(rng);

    for (int i = 0; i < o.warmup; ++i) forward(m, image);
    std::vector<double> ms;
    for (int i = 0; i < o.iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor out = forward(m, image);
        ms.push_back(elapsed_ms(t0));
        std::printf("sample %d  %.3f ms\n", i, ms.back());
    }
    std::vector<double> sorted = ms;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median =
        n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    double mean = 0.0;
    for (double v : ms) mean += v;
    mean /= (double)n;
    std::printf("%s %s threads=%d  median %.3f ms  min %.3f  mean %.3f  (%d iters)\n",
                o.variant.c_str(), o.input.c_str(), o.threads, median, sorted.front(),
                mean, o.iters);
    return 0;
}

// one finite-difference check per op family, mirroring the unit suite
int cmd_gradcheck(const Options& o) {
    set_num_threads(o.threads);
    struct Case {
        const char* name;
        TapeBuilder build;
        std::vector<Shape> inputs;
        double tol_scale = 1.0;
    };
    const ConvSpec conv{.in_ch = 3, .out_ch = 4, .kh = 3, .kw = 3, .ph = 1, .pw = 1,
                        .has_bias = true};
    const ConvSpec dw{.in_ch = 4, .out_ch = 4, .kh = 3, .kw = 3, .sh = 2, .sw = 2,
                      .ph = 1, .pw = 1, .groups = 4};

    std::vector<Case> cases;
    cases.push_back({"conv2d",
                     [&](Tape& t, const std::vector<Tape::Var>& in) {
                         return t.conv2d(in[0], conv, in[1], in[2]);
                     },
                     {Shape{1, 3, 5, 5}, conv.weight_shape(), Shape{1, 4, 1, 1}}});
    cases.push_back({"depthwise_conv",
                     [&](Tape& t, const std::vector<Tape::Var>& in) {
                         return t.conv2d(in[0], dw, in[1]);
                     },
                     {Shape{1, 4, 6, 6}, dw.weight_shape()}});
    cases.push_back({"channel_affine",
                     [](Tape& t, const std::vector<Tape::Var>& in) {
                         return t.channel_affine(in[0], in[1], in[2]);
                     },
                     {Shape{1, 3, 4, 4}, Shape{1, 3, 1, 1}, Shape{1, 3, 1, 1}}});
    cases.push_back({"relu6",
                     [](Tape& t, const std::vector<Tape::Var>& in) {
                         return t.relu6(t.scale_const(in[0], 4.0));
                     },
                     {Shape{1, 2, 5, 5}}});
    cases.push_back({"sigmoid",
                     [](Tape& t, const std::vector<Tape::Var>& in) {
                         return t.sigmoid(in[0]);
                     },
                     {Shape{1, 2, 5, 5}}});
    cases.push_back({"softmax",
                     [](Tape& t, const std::vector<Tape::Var>& in) {
                         return t.softmax_lastdim(in[0]);
                     },
                     {Shape{1, 2, 4, 6}}});
    cases.push_back({"adaptive_avg_pool",
                     [](Tape& t, const std::vector<Tape::Var>& in) {
                         return t.adaptive_avg_pool(in[0], 2, 3);
                     },
                     {Shape{1, 3, 6, 6}}});
    cases.push_back({"bilinear_upsample",
                     [](Tape& t, const std::vector<Tape::Var>& in) {
                         return t.bilinear_upsample(in[0], 5, 6);
                     },
                     {Shape{1, 2, 2, 3}}});
    cases.push_back({"add_hadamard",
                     [](Tape& t, const std::vector<Tape::Var>& in) {
                         return t.hadamard(t.add(in[0], in[1]), in[0]);
                     },
                     {Shape{1, 2, 3, 3}, Shape{1, 2, 3, 3}}});
    cases.push_back({"concat_split",
                     [](Tape& t, const std::vector<Tape::Var>& in) {
                         auto parts = t.split_channels(
                             t.concat_channels({in[0], in[1]}), {3, 2});
                         return t.hadamard(parts[1], parts[1]);
                     },
                     {Shape{1, 3, 2, 2}, Shape{1, 2, 2, 2}}});
    cases.push_back({"matmul_transpose",
                     [](Tape& t, const std::vector<Tape::Var>& in) {
                         return t.matmul_batched(in[0], t.transpose_mat(in[1]));
                     },
                     {Shape{1, 2, 3, 4}, Shape{1, 2, 5, 4}}});
    cases.push_back({"reshape_scale",
                     [](Tape& t, const std::vector<Tape::Var>& in) {
                         return t.scale_const(t.reshape(in[0], Shape{1, 2, 8, 1}),
                                              0.5);
                     },
                     {Shape{1, 4, 2, 2}}});

    // whole network, micro sized; tolerance is 10x the per-op bar
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
    const Model m = build(micro);
    std::vector<Shape> net_shapes{Shape{1, 3, 4, 4}};
    for (const TapeSlot& s : tape_slots(m)) net_shapes.push_back(s.shape);
    cases.push_back({"composed_network",
                     [&m](Tape& t, const std::vector<Tape::Var>& in) {
                         std::vector<Tape::Var> leaves(in.begin() + 1, in.end());
                         return record_forward(m, t, in[0], leaves);
                     },
                     net_shapes, 10.0});

    bool all_ok = true;
    for (const Case& c : cases) {
        const double tol = o.tol * c.tol_scale;
        GradcheckReport r;
        try {
            r = fd_gradcheck(c.build, c.inputs, o.seed, tol);
        } catch (const std::exception& e) {
            std::printf("FAIL %-18s %s\n", c.name, e.what());
            all_ok = false;
            continue;
        }
        std::printf("%s %-18s max_rel_err %.3e (tol %.1e)\n",
                    r.pass ? "ok  " : "FAIL", c.name, r.max_rel_err, tol);
        all_ok = all_ok && r.pass;
    }
    return all_ok ? 0 : 1;
}

int cmd_selftest(const Options& o) {
    set_num_threads(o.threads);
    int failures = 0;
    auto report = [&](const std::string& name, bool ok) {
        std::printf("%s %s\n", ok ? "ok  " : "FAIL", name.c_str());
        if (!ok) ++failures;
    };
    std::mt19937 rng(17);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    auto rnd = [&](Shape s) {
        Tensor t(s);
        for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = dist(rng);
        return t;
    };

    for (const char* v : {"tiny", "small", "base"}) {
        Model m = build(VariantConfig::preset(v));

        // randomized bn statistics, then folded vs unfolded forward
        std::uniform_real_distribution<float> dvar(0.5f, 2.0f);
        std::uniform_real_distribution<float> dstat(-0.5f, 0.5f);
        WeightStore ws = random_init(m, o.seed);
        WeightStore jittered;
        for (const auto& [name, t] : ws.entries()) {
            Tensor r = t;
            if (name.ends_with(".bn.var"))
                for (std::int64_t i = 0; i < r.numel(); ++i) r.data()[i] = dvar(rng);
            else if (name.ends_with(".bn.mean") || name.ends_with(".bn.beta"))
                for (std::int64_t i = 0; i < r.numel(); ++i) r.data()[i] = dstat(rng);
            else if (name.ends_with(".bn.gamma"))
                for (std::int64_t i = 0; i < r.numel(); ++i)
                    r.data()[i] = 1.0f + dstat(rng);
            jittered.put(name, std::move(r));
        }
        bind(m, std::move(jittered));
        const Tensor img = rnd(Shape{1, 3, 64, 64});
        const Tensor ref = forward(m, img);
        fold(m);
        const Tensor fast = forward(m, img);
        float diff = 0.0f, mag = 0.0f;
        for (std::int64_t i = 0; i < ref.numel(); ++i) {
            diff = std::max(diff, std::fabs(ref.data()[i] - fast.data()[i]));
            mag = std::max(mag, std::fabs(ref.data()[i]));
        }
        report(std::string(v) + ": bn fold equivalence", diff / (mag + 1e-12f) < 1e-4f);

        // symbolic trace vs the documented stride ladder and runtime shapes
        const ShapeTrace trace = trace_shapes(m, 512, 512);
        bool shapes_ok = false;
        for (const TraceRow& row : trace)
            if (row.name == "tpm.stem") shapes_ok = row.out.h == 256;
        const auto tokens = forward_pyramid(m, img);
        std::size_t hits = 0;
        for (const TraceRow& row : trace_shapes(m, 64, 64))
            for (std::size_t i = 0; i < tokens.size(); ++i)
                if (row.name == "tpm.s" + std::to_string(i + 1) + ".b" +
                                    std::to_string(m.stages[i + 1].size() - 1) +
                                    ".project" &&
                    row.out == tokens[i].shape())
                    ++hits;
        report(std::string(v) + ": shape trace", shapes_ok && hits == tokens.size());

        // split then concat is the identity
        const Tensor x = rnd(Shape{2, 7, 3, 3});
        const std::vector<std::int64_t> sizes{2, 4, 1};
        const auto parts = split_channels<float>(x, sizes);
        const Tensor back = concat_channels<float>(parts);
        report(std::string(v) + ": split/concat inverse",
               std::memcmp(x.data(), back.data(), (std::size_t)x.numel() * 4) == 0);

        // softmax rows form shift-invariant distributions
        const Tensor sm = rnd(Shape{1, 2, 5, 8});
        Tensor shifted = sm;
        for (std::int64_t i = 0; i < shifted.numel(); ++i) shifted.data()[i] += 3.0f;
        const Tensor p = softmax_lastdim(sm);
        const Tensor q = softmax_lastdim(shifted);
        bool soft_ok = true;
        for (std::int64_t r = 0; r < 2 * 5; ++r) {
            float sum = 0.0f;
            for (int j = 0; j < 8; ++j) {
                sum += p.data()[r * 8 + j];
                soft_ok = soft_ok &&
                          std::fabs(p.data()[r * 8 + j] - q.data()[r * 8 + j]) < 1e-6f;
            }
            soft_ok = soft_ok && std::fabs(sum - 1.0f) < 1e-6f;
        }
        report(std::string(v) + ": softmax properties", soft_ok);
    }
    std::printf("%s\n", failures ? "selftest: FAILED" : "selftest: all checks passed");
    return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TopFormer segmentation engine: inference, cost analysis, "
                 "gradient checks"};
    app.require_subcommand(1);
    Options o;
    if (const char* env = std::getenv("TOPFORMER_THREADS")) {
        try {
            o.threads = std::max(1, std::stoi(env));
        } catch (const std::logic_error&) {
            std::cerr << "ignoring TOPFORMER_THREADS='" << env << "'\n";
        }
    }

    auto add_common = [&](CLI::App* c, bool with_input = true) {
        c->add_option("--variant", o.variant, "tiny, small or base")
            ->capture_default_str();
        if (with_input)
            c->add_option("--input", o.input, "input size as HxW")
                ->capture_default_str();
        c->add_option("--sase-stride", o.sase_stride,
                      "token grid stride override (32, 64 or 128)");
        c->add_option("--head", o.head,
                      "default, concat, sum or classification")
            ->capture_default_str();
        c->add_option("--classes", o.classes, "number of output classes");
        c->add_option("--threads", o.threads, "worker threads (results identical)")
            ->capture_default_str();
    };

    CLI::App* describe = app.add_subcommand("describe", "print architecture and shape trace");
    add_common(describe);

    CLI::App* analyze = app.add_subcommand("analyze", "parameter and FLOP accounting");
    add_common(analyze);
    analyze->add_flag("--tsv", o.tsv, "machine format: name,params,flops,dims per line");

    CLI::App* infer = app.add_subcommand("infer", "run segmentation on a PPM image");
    add_common(infer, false);
    infer->add_option("--weights", o.weights, "TPFW weight file")->required();
    infer->add_option("--image", o.image, "input image, binary PPM (P6)")->required();
    infer->add_option("--out", o.out, "output PGM class map")->required();
    infer->add_flag("--upsample-to-input", o.upsample,
                    "emit logits at image resolution instead of 1/8");
    infer->add_option("--palette", o.palette, "palette file: R G B per class line");
    infer->add_option("--colorized", o.colorized, "also write a colorized PPM here");

    CLI::App* init = app.add_subcommand("init", "write seeded random weights as TPFW");
    add_common(init, false);
    init->add_option("--out", o.out, "output weight file")->required();
    init->add_option("--seed", o.seed, "init seed")->capture_default_str();

    CLI::App* bench = app.add_subcommand("bench", "time the forward pass");
    add_common(bench);
    bench->add_option("--warmup", o.warmup, "untimed runs first")->capture_default_str();
    bench->add_option("--iters", o.iters, "timed runs (min 3)")->capture_default_str();
    bench->add_option("--seed", o.seed, "weight init seed")->capture_default_str();

    CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    grad->add_option("--seed", o.seed, "probe seed")->capture_default_str();
    grad->add_option("--tol", o.tol, "relative error bar per op")->capture_default_str();
    grad->add_option("--threads", o.threads, "worker threads");

    CLI::App* self = app.add_subcommand("selftest", "numeric invariants on all variants");
    self->add_option("--seed", o.seed, "weight init seed")->capture_default_str();
    self->add_option("--threads", o.threads, "worker threads");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*describe) return cmd_describe(o);
        if (*analyze) return cmd_analyze(o);
        if (*infer) return cmd_infer(o);
        if (*init) return cmd_init(o);
        if (*bench) return cmd_bench(o);
        if (*grad) return cmd_gradcheck(o);
        if (*self) return cmd_selftest(o);
    } catch (const BindError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const StateError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
