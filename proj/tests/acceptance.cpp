// Acceptance gate: ten checks, one [PASS]/[FAIL] line each, exit 0 only if
// all pass. Latency criteria run single-threaded.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "topformer/analyzer.hpp"
#include "topformer/autodiff.hpp"
#include "topformer/iofmt.hpp"
#include "topformer/model.hpp"
#include "topformer/threading.hpp"

using namespace topformer;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void criterion(int n, const std::string& what,
               const std::function<std::pair<bool, std::string>()>& check) {
    bool ok = false;
    std::string detail;
    try {
        auto [pass, d] = check();
        ok = pass;
        detail = d;
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", n,
                what.c_str(), detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

bool within(double v, double target, double tol) {
    return v >= target * (1.0 - tol) && v <= target * (1.0 + tol);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

VariantConfig cls_config(const char* v) {
    VariantConfig cfg = VariantConfig::preset(v);
    cfg.head_kind = HeadKind::classification;
    cfg.sase_stride = 32;
    cfg.num_classes = 1000;
    return cfg;
}

Tensor rand_tensor(Shape s, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    Tensor t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = dist(rng);
    return t;
}

// random weights with non-trivial bn statistics, deterministic per seed
WeightStore jittered_store(const Model& m, std::uint64_t seed) {
    WeightStore base = random_init(m, seed);
    std::mt19937 rng((unsigned)seed + 99);
    std::uniform_real_distribution<float> dvar(0.5f, 2.0f);
    std::uniform_real_distribution<float> dstat(-0.5f, 0.5f);
    WeightStore out;
    for (const auto& [name, t] : base.entries()) {
        Tensor r = t;
        if (name.ends_with(".bn.var"))
            for (std::int64_t i = 0; i < r.numel(); ++i) r.data()[i] = dvar(rng);
        else if (name.ends_with(".bn.mean") || name.ends_with(".bn.beta"))
            for (std::int64_t i = 0; i < r.numel(); ++i) r.data()[i] = dstat(rng);
        else if (name.ends_with(".bn.gamma"))
            for (std::int64_t i = 0; i < r.numel(); ++i) r.data()[i] = 1.0f + dstat(rng);
        out.put(name, std::move(r));
    }
    return out;
}

float rel_gap(const Tensor& a, const Tensor& b) {
    float diff = 0.0f, mag = 0.0f;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        diff = std::max(diff, std::fabs(a.data()[i] - b.data()[i]));
        mag = std::max(mag, std::fabs(b.data()[i]));
    }
    return diff / (mag + 1e-12f);
}

VariantConfig micro_config() {
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
    return micro;
}

}  // namespace

int main() {
    criterion(1, "parameter reconciliation (seg 1.4/3.1/5.1M, cls 1.50/3.11/5.07M)", [] {
        const double seg[3] = {1.4e6, 3.1e6, 5.1e6};
        const double cls[3] = {1.50e6, 3.11e6, 5.07e6};
        const char* names[3] = {"tiny", "small", "base"};
        std::string detail;
        bool ok = true;
        for (int i = 0; i < 3; ++i) {
            const double ps =
                (double)count_params(build(VariantConfig::preset(names[i]))).total_params;
            const double pc = (double)count_params(build(cls_config(names[i]))).total_params;
            ok = ok && within(ps, seg[i], 0.10) && within(pc, cls[i], 0.10);
            detail += fmt("%.2f/", ps / 1e6);
            detail += fmt("%.2fM ", pc / 1e6);
        }
        return std::make_pair(ok, "got seg/cls " + detail + "(tol 10%)");
    });

    criterion(2, "FLOP reconciliation (seg@512 0.6/1.2/1.8G, tiny@448 0.5G, cls@224 126/235/373M)", [] {
        const double seg[3] = {0.6e9, 1.2e9, 1.8e9};
        const double cls[3] = {126e6, 235e6, 373e6};
        const char* names[3] = {"tiny", "small", "base"};
        bool ok = true;
        std::string detail;
        for (int i = 0; i < 3; ++i) {
            const double f =
                (double)count_flops(build(VariantConfig::preset(names[i])), 512, 512)
                    .total_flops;
            const double fc =
                (double)count_flops(build(cls_config(names[i])), 224, 224).total_flops;
            ok = ok && within(f, seg[i], 0.15) && within(fc, cls[i], 0.15);
            detail += fmt("%.2fG/%.0fM ", f / 1e9, fc / 1e6);
        }
        const double f448 =
            (double)count_flops(build(VariantConfig::preset("tiny")), 448, 448)
                .total_flops;
        ok = ok && within(f448, 0.5e9, 0.15);
        detail += fmt("tiny@448 %.2fG (tol 15%%)", f448 / 1e9);
        return std::make_pair(ok, detail);
    });

    criterion(3, "token-grid stride ablation (2.6/1.8/1.6G, s32 > s64 > s128)", [] {
        const int strides[3] = {32, 64, 128};
        const double targets[3] = {2.6e9, 1.8e9, 1.6e9};
        double got[3];
        bool ok = true;
        std::string detail;
        for (int i = 0; i < 3; ++i) {
            VariantConfig cfg = VariantConfig::preset("base");
            cfg.sase_stride = strides[i];
            got[i] = (double)count_flops(build(cfg), 512, 512).total_flops;
            ok = ok && within(got[i], targets[i], 0.15);
            detail += fmt("s%.0f=%.2fG ", (double)strides[i], got[i] / 1e9);
        }
        ok = ok && got[0] > got[1] && got[1] > got[2];
        return std::make_pair(ok, detail + "(tol 15%, strict ordering)");
    });

    criterion(4, "head-variant parameter ordering (default > concat > sum, gap ~0.085M x/2)", [] {
        auto params_for = [](HeadKind k) {
            VariantConfig cfg = VariantConfig::preset("base");
            cfg.head_kind = k;
            return (double)count_params(build(cfg)).total_params;
        };
        const double d = params_for(HeadKind::seg_default);
        const double c = params_for(HeadKind::seg_concat);
        const double s = params_for(HeadKind::seg_sum);
        const double gap = d - s;
        const bool ok = d > c && c > s && gap >= 0.085e6 / 2 && gap <= 0.085e6 * 2;
        return std::make_pair(ok, fmt("default %.4fM > concat %.4fM > sum %.4fM",
                                      d / 1e6, c / 1e6, s / 1e6) +
                                      fmt(", gap %.4fM", gap / 1e6));
    });

    criterion(5, "shape traces @512 hit 256/128/64/32/16 with the token grid at 8", [] {
        bool ok = true;
        for (const char* v : {"tiny", "small", "base"}) {
            const Model m = build(VariantConfig::preset(v));
            const ShapeTrace trace = trace_shapes(m, 512, 512);
            const std::int64_t scale[4] = {128, 64, 32, 16};
            auto has = [&](const std::string& name, std::int64_t h) {
                for (const TraceRow& r : trace)
                    if (r.name == name) return r.out.h == h && r.out.w == h;
                return false;
            };
            ok = ok && has("tpm.stem", 256);
            for (int s = 1; s <= 4; ++s)
                ok = ok && has("tpm.s" + std::to_string(s) + ".b" +
                                   std::to_string(m.stages[(std::size_t)s].size() - 1) +
                                   ".project",
                               scale[s - 1]);
            ok = ok && has("sase.blk0.qkv", 8);
        }
        return std::make_pair(ok, std::string("all variants"));
    });

    criterion(6, "bn folding: end-to-end < 1e-4, per-layer < 1e-5", [] {
        set_num_threads(4);
        Model m = build(VariantConfig::preset("base"));
        bind(m, jittered_store(m, 6));
        const Tensor img = rand_tensor(Shape{1, 3, 64, 64}, 60);
        const Tensor ref = forward(m, img);

        // per-layer: every conv+bn unit against its folded twin
        float worst_layer = 0.0f;
        unsigned probe = 600;
        for_each_convbn(m, [&](const ConvBnDef& d) {
            if (!d.bn) return;
            const Tensor x = rand_tensor(Shape{1, d.conv.in_ch, 6, 6}, probe++);
            const Tensor& w = m.weights.get(d.name + ".conv.weight");
            BatchNormParams bn;
            auto vec = [&](const char* suffix) {
                const Tensor& t = m.weights.get(d.name + suffix);
                return std::vector<float>(t.data(), t.data() + t.numel());
            };
            bn.gamma = vec(".bn.gamma");
            bn.beta = vec(".bn.beta");
            bn.mean = vec(".bn.mean");
            bn.var = vec(".bn.var");
            const Tensor slow = bn_apply(conv2d<float>(x, d.conv, w), bn);
            auto [fw, fb] = batchnorm_fold(d.conv, w, {}, bn);
            ConvSpec folded_spec = d.conv;
            folded_spec.has_bias = true;
            const Tensor fast =
                conv2d<float>(x, folded_spec, fw, std::span<const float>(fb));
            worst_layer = std::max(worst_layer, rel_gap(fast, slow));
        });

        fold(m);
        const float e2e = rel_gap(forward(m, img), ref);
        set_num_threads(1);
        return std::make_pair(e2e < 1e-4f && worst_layer < 1e-5f,
                              fmt("end-to-end %.2e, worst layer %.2e", e2e,
                                  worst_layer));
    });

    criterion(7, "gradients: every op at tol 1e-4, composed network at 1e-3, < 60 s", [] {
        set_num_threads(4);
        const auto t0 = std::chrono::steady_clock::now();
        const ConvSpec conv{.in_ch = 3, .out_ch = 4, .kh = 3, .kw = 3, .ph = 1,
                            .pw = 1, .has_bias = true};
        const ConvSpec dw{.in_ch = 4, .out_ch = 4, .kh = 3, .kw = 3, .sh = 2,
                          .sw = 2, .ph = 1, .pw = 1, .groups = 4};
        struct Case {
            const char* name;
            TapeBuilder build;
            std::vector<Shape> inputs;
            double tol;
        };
        const std::vector<Case> cases = {
            {"conv2d",
             [&](Tape& t, const std::vector<Tape::Var>& in) {
                 return t.conv2d(in[0], conv, in[1], in[2]);
             },
             {Shape{1, 3, 5, 5}, conv.weight_shape(), Shape{1, 4, 1, 1}},
             1e-4},
            {"depthwise",
             [&](Tape& t, const std::vector<Tape::Var>& in) {
                 return t.conv2d(in[0], dw, in[1]);
             },
             {Shape{1, 4, 6, 6}, dw.weight_shape()},
             1e-4},
            {"channel_affine",
             [](Tape& t, const std::vector<Tape::Var>& in) {
                 return t.channel_affine(in[0], in[1], in[2]);
             },
             {Shape{1, 3, 4, 4}, Shape{1, 3, 1, 1}, Shape{1, 3, 1, 1}},
             1e-4},
            {"relu6",
             [](Tape& t, const std::vector<Tape::Var>& in) {
                 return t.relu6(t.scale_const(in[0], 4.0));
             },
             {Shape{1, 2, 5, 5}},
             1e-4},
            {"sigmoid",
             [](Tape& t, const std::vector<Tape::Var>& in) {
                 return t.sigmoid(in[0]);
             },
             {Shape{1, 2, 5, 5}},
             1e-4},
            {"softmax",
             [](Tape& t, const std::vector<Tape::Var>& in) {
                 return t.softmax_lastdim(in[0]);
             },
             {Shape{1, 2, 4, 6}},
             1e-4},
            {"pool",
             [](Tape& t, const std::vector<Tape::Var>& in) {
                 return t.adaptive_avg_pool(in[0], 2, 3);
             },
             {Shape{1, 3, 6, 6}},
             1e-4},
            {"upsample",
             [](Tape& t, const std::vector<Tape::Var>& in) {
                 return t.bilinear_upsample(in[0], 5, 6);
             },
             {Shape{1, 2, 2, 3}},
             1e-4},
            {"add_hadamard",
             [](Tape& t, const std::vector<Tape::Var>& in) {
                 return t.hadamard(t.add(in[0], in[1]), in[0]);
             },
             {Shape{1, 2, 3, 3}, Shape{1, 2, 3, 3}},
             1e-4},
            {"concat_split",
             [](Tape& t, const std::vector<Tape::Var>& in) {
                 auto parts =
                     t.split_channels(t.concat_channels({in[0], in[1]}), {3, 2});
                 return t.hadamard(parts[1], parts[1]);
             },
             {Shape{1, 3, 2, 2}, Shape{1, 2, 2, 2}},
             1e-4},
            {"matmul_transpose",
             [](Tape& t, const std::vector<Tape::Var>& in) {
                 return t.matmul_batched(in[0], t.transpose_mat(in[1]));
             },
             {Shape{1, 2, 3, 4}, Shape{1, 2, 5, 4}},
             1e-4},
            {"reshape_scale",
             [](Tape& t, const std::vector<Tape::Var>& in) {
                 return t.scale_const(t.reshape(in[0], Shape{1, 2, 8, 1}), 0.5);
             },
             {Shape{1, 4, 2, 2}},
             1e-4},
        };
        bool ok = true;
        std::string first_fail;
        for (const Case& c : cases) {
            const GradcheckReport r = fd_gradcheck(c.build, c.inputs, 7, c.tol);
            if (!r.pass && first_fail.empty()) first_fail = c.name;
            ok = ok && r.pass;
        }

        const Model m = build(micro_config());
        std::vector<Shape> shapes{Shape{1, 3, 4, 4}};
        for (const TapeSlot& s : tape_slots(m)) shapes.push_back(s.shape);
        const GradcheckReport net = fd_gradcheck(
            [&m](Tape& t, const std::vector<Tape::Var>& in) {
                std::vector<Tape::Var> leaves(in.begin() + 1, in.end());
                return record_forward(m, t, in[0], leaves);
            },
            shapes, 1, 1e-3);
        ok = ok && net.pass;
        if (!net.pass && first_fail.empty()) first_fail = "composed";

        const double secs = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
        ok = ok && secs < 60.0;
        set_num_threads(1);
        return std::make_pair(
            ok, fmt("composed max_rel_err %.2e, %.1f s", net.max_rel_err, secs) +
                    (first_fail.empty() ? "" : ", first failure: " + first_fail));
    });

    criterion(8, "tiny profile: token mixer owns the most params, < 25% of FLOPs", [] {
        const auto shares = breakdown(build(VariantConfig::preset("tiny")), 512, 512);
        double sase_p = 0, sase_f = 0, max_p = 0;
        for (const ModuleShare& s : shares) {
            max_p = std::max(max_p, s.param_pct);
            if (s.module == "SASE") {
                sase_p = s.param_pct;
                sase_f = s.flop_pct;
            }
        }
        return std::make_pair(sase_p == max_p && sase_f < 25.0,
                              fmt("SASE %.1f%% params (max), %.1f%% flops", sase_p,
                                  sase_f));
    });

    criterion(9, "single-thread latency ordering tiny < small < base @512, 20 iters", [] {
        set_num_threads(1);
        double medians[3];
        const char* names[3] = {"tiny", "small", "base"};
        for (int i = 0; i < 3; ++i) {
            Model m = build(VariantConfig::preset(names[i]));
            bind(m, random_init(m, 9));
            fold(m);
            const Tensor img = rand_tensor(Shape{1, 3, 512, 512}, 90);
            forward(m, img);
            forward(m, img);
            std::vector<double> ms;
            for (int it = 0; it < 20; ++it) {
                const auto t0 = std::chrono::steady_clock::now();
                forward(m, img);
                ms.push_back(std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count());
            }
            std::sort(ms.begin(), ms.end());
            medians[i] = 0.5 * (ms[9] + ms[10]);
        }
        const bool ok = medians[0] < medians[1] && medians[1] < medians[2];
        return std::make_pair(ok, fmt("medians %.0f < %.0f < %.0f ms", medians[0],
                                      medians[1], medians[2]));
    });

    criterion(10, "weight file round trip byte-identical; bind names a renamed tensor", [] {
        const fs::path dir = fs::temp_directory_path() / "topformer_acceptance";
        fs::create_directories(dir);
        Model m = build(VariantConfig::preset("tiny"));
        const WeightStore ws = random_init(m, 10);
        const fs::path p1 = dir / "a.tpfw";
        const fs::path p2 = dir / "b.tpfw";
        save_weights(ws, p1.string());
        save_weights(load_weights(p1.string()), p2.string());
        const auto slurp = [](const fs::path& p) {
            std::ifstream f(p, std::ios::binary);
            std::stringstream ss;
            ss << f.rdbuf();
            return ss.str();
        };
        const bool identical = slurp(p1) == slurp(p2) && fs::file_size(p1) > 12;

        WeightStore renamed;
        const std::string victim = "sase.blk1.ffn.dw.conv.weight";
        for (const auto& [name, t] : ws.entries())
            renamed.put(name == victim ? "sase.blk1.ffn.dw.conv.wt" : name, t);
        bool named = false;
        try {
            bind(m, std::move(renamed));
        } catch (const BindError& e) {
            named = std::string(e.what()).find(victim) != std::string::npos;
        }
        return std::make_pair(identical && named,
                              std::string(identical ? "round trip ok" : "round trip BROKE") +
                                  (named ? ", rename rejected by name" : ", rename not named"));
    });

    std::printf("%d/10 criteria passed\n", 10 - g_failures);
    return g_failures ? 1 : 0;
}
