#include "topformer/analyzer.hpp"

#include <iomanip>
#include <sstream>

#include "runner.hpp"

namespace topformer {

namespace {

std::string module_of(const std::string& name) {
    if (name.starts_with("tpm.")) return "TPM";
    if (name.starts_with("sase.")) return "SASE";
    if (name.starts_with("sim.")) return "SIM";
    return "Head";
}

std::int64_t unit_params(const ConvBnDef& d) {
    std::int64_t p = d.conv.weight_shape().numel();
    if (d.conv.has_bias) p += d.conv.out_ch;
    if (d.bn) p += 2 * d.conv.out_ch;  // gamma + beta; running stats are not learned
    return p;
}

// Shape-level walk shared by the flop counter and the shape tracer.
struct CostBackend {
    using Val = Shape;
    CostReport& rep;
    std::string scope;

    Shape shape(Val v) const { return v; }
    void note_scope(const std::string& s) { scope = s; }

    LayerCost& layer(const std::string& name) {
        for (auto it = rep.layers.rbegin(); it != rep.layers.rend(); ++it)
            if (it->name == name) return *it;
        rep.layers.push_back({name, module_of(name), 0, 0, Shape{0, 0, 0, 0}});
        return rep.layers.back();
    }

    Val conv_bn(const ConvBnDef& d, Val x) {
        const Shape out{x.n, d.conv.out_ch, d.conv.out_h(x.h), d.conv.out_w(x.w)};
        LayerCost& lc = layer(d.name);
        lc.params = unit_params(d);
        lc.flops = out.numel() * (d.conv.in_ch / d.conv.groups) * d.conv.kh * d.conv.kw;
        lc.out = out;
        return out;
    }

    Val matmul(Val a, Val b) {
        if (a.n != b.n || a.c != b.c || a.w != b.h)
            throw ShapeError("matmul dims " + a.str() + " x " + b.str());
        const Shape out{a.n, a.c, a.h, b.w};
        LayerCost& lc = layer(scope.empty() ? "matmul" : scope);
        lc.flops += out.numel() * a.w;
        lc.out = out;
        return out;
    }

    Val relu6(Val x) { return x; }
    Val sigmoid(Val x) { return x; }
    Val softmax(Val x) { return x; }
    Val scale(Val x, double) { return x; }
    Val add(Val a, Val b) {
        if (!(a == b)) throw ShapeError("add dims " + a.str() + " vs " + b.str());
        return a;
    }
    Val hadamard(Val a, Val b) { return add(a, b); }
    Val concat(const std::vector<Val>& parts) {
        Shape out = parts.at(0);
        for (std::size_t i = 1; i < parts.size(); ++i) {
            if (parts[i].n != out.n || parts[i].h != out.h || parts[i].w != out.w)
                throw ShapeError("concat dims " + parts[i].str());
            out.c += parts[i].c;
        }
        return out;
    }
    std::vector<Val> split(Val x, const std::vector<std::int64_t>& sizes) {
        std::int64_t sum = 0;
        std::vector<Val> out;
        for (std::int64_t s : sizes) {
            out.push_back(Shape{x.n, s, x.h, x.w});
            sum += s;
        }
        if (sum != x.c)
            throw ShapeError("split channels " + std::to_string(sum) + " != " +
                             std::to_string(x.c));
        return out;
    }
    Val pool(Val x, std::int64_t h, std::int64_t w) { return Shape{x.n, x.c, h, w}; }
    Val upsample(Val x, std::int64_t h, std::int64_t w) {
        return Shape{x.n, x.c, h, w};
    }
    Val transpose(Val x) { return Shape{x.n, x.c, x.w, x.h}; }
    Val reshape(Val x, Shape s) {
        if (s.numel() != x.numel())
            throw ShapeError("reshape " + x.str() + " -> " + s.str());
        return s;
    }
};

void finalize(CostReport& r) {
    r.modules = {{"TPM"}, {"SASE"}, {"SIM"}, {"Head"}};
    r.total_params = 0;
    r.total_flops = 0;
    for (const LayerCost& lc : r.layers) {
        for (ModuleTotal& mt : r.modules)
            if (mt.module == lc.module) {
                mt.params += lc.params;
                mt.flops += lc.flops;
            }
        r.total_params += lc.params;
        r.total_flops += lc.flops;
    }
}

std::string human(std::int64_t v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    if (v >= 1000000000)
        os << (double)v / 1e9 << "G";
    else if (v >= 1000000)
        os << (double)v / 1e6 << "M";
    else if (v >= 1000)
        os << (double)v / 1e3 << "K";
    else
        os << v;
    return os.str();
}

}  // namespace

CostReport count_params(const Model& m) {
    CostReport r;
    for_each_convbn(m, [&](const ConvBnDef& d) {
        r.layers.push_back({d.name, module_of(d.name), unit_params(d), 0,
                            Shape{0, 0, 0, 0}});
    });
    finalize(r);
    return r;
}

CostReport count_flops(const Model& m, std::int64_t input_h, std::int64_t input_w) {
    detail::check_input_dims(m, input_h, input_w);
    CostReport r;
    r.input_h = input_h;
    r.input_w = input_w;
    CostBackend b{r};
    detail::Runner<CostBackend> run{m, b};
    run.forward(Shape{1, 3, input_h, input_w}, {});
    finalize(r);
    return r;
}

ShapeTrace trace_shapes(const Model& m, std::int64_t input_h, std::int64_t input_w) {
    const CostReport r = count_flops(m, input_h, input_w);
    ShapeTrace trace;
    trace.push_back({"input", Shape{1, 3, input_h, input_w}});
    for (const LayerCost& lc : r.layers) trace.push_back({lc.name, lc.out});
    return trace;
}

std::vector<ModuleShare> breakdown(const Model& m, std::int64_t input_h,
                                   std::int64_t input_w) {
    const CostReport r = count_flops(m, input_h, input_w);
    std::vector<ModuleShare> shares;
    for (const ModuleTotal& mt : r.modules)
        shares.push_back({mt.module,
                          r.total_params ? 100.0 * (double)mt.params /
                                               (double)r.total_params
                                         : 0.0,
                          r.total_flops ? 100.0 * (double)mt.flops /
                                              (double)r.total_flops
                                        : 0.0});
    return shares;
}

std::string render_table(const CostReport& r) {
    std::size_t name_w = 5;
    for (const LayerCost& lc : r.layers) name_w = std::max(name_w, lc.name.size());

    std::ostringstream os;
    os << "# convention: 1 MAC = 1 FLOP; conv kernels and attention matmuls "
          "counted;\n"
          "# activations, batch norm, elementwise adds, pooling and interpolation "
          "excluded.\n";
    if (r.input_h)
        os << "# input: 3x" << r.input_h << "x" << r.input_w << "\n";
    os << std::left << std::setw((int)name_w + 2) << "layer" << std::setw(7)
       << "module" << std::right << std::setw(12) << "params" << std::setw(14)
       << "flops"
       << "  out\n";
    for (const LayerCost& lc : r.layers) {
        os << std::left << std::setw((int)name_w + 2) << lc.name << std::setw(7)
           << lc.module << std::right << std::setw(12) << lc.params << std::setw(14)
           << lc.flops << "  " << (lc.out.numel() ? lc.out.str() : "-") << "\n";
    }
    os << "\n";
    for (const ModuleTotal& mt : r.modules) {
        os << std::left << std::setw((int)name_w + 2) << mt.module << std::setw(7)
           << "" << std::right << std::setw(12) << mt.params << std::setw(14)
           << mt.flops;
        if (r.total_params)
            os << "  " << std::fixed << std::setprecision(1)
               << 100.0 * (double)mt.params / (double)r.total_params << "% params";
        if (r.total_flops)
            os << ", " << std::fixed << std::setprecision(1)
               << 100.0 * (double)mt.flops / (double)r.total_flops << "% flops";
        os << "\n";
    }
    os << std::left << std::setw((int)name_w + 2) << "total" << std::setw(7) << ""
       << std::right << std::setw(12) << r.total_params << std::setw(14)
       << r.total_flops << "  (" << human(r.total_params) << " params";
    if (r.total_flops) os << ", " << human(r.total_flops) << " flops";
    os << ")\n";
    return os.str();
}

std::string render_tsv(const CostReport& r) {
    std::ostringstream os;
    for (const LayerCost& lc : r.layers)
        os << lc.name << "\t" << lc.params << "\t" << lc.flops << "\t" << lc.out.n
           << "," << lc.out.c << "," << lc.out.h << "," << lc.out.w << "\n";
    return os.str();
}

}  // namespace topformer
