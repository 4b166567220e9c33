#include "topformer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace topformer {

namespace {

void check_finite(const DTensor& g, const std::string& op) {
    for (std::int64_t i = 0; i < g.numel(); ++i)
        if (!std::isfinite(g.data()[i]))
            throw StateError("non-finite gradient flowing into op '" + op + "'");
}

}  // namespace

Tape::Var Tape::push(std::string op, DTensor value) {
    nodes_.push_back(Node{std::move(op), std::move(value), {}, {}});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw StateError("tape var does not reference a recorded node");
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
    return const_cast<Tape*>(this)->node(v);
}

void Tape::accum(int id, DTensor g) {
    auto idx = static_cast<std::size_t>(id);
    if (g.shape() != nodes_[idx].value.shape())
        throw ShapeError("gradient dims " + g.shape().str() + " do not match value " +
                         nodes_[idx].value.shape().str() + " at op '" +
                         nodes_[idx].op + "'");
    if (!has_grad_[idx]) {
        grad_[idx] = std::move(g);
        has_grad_[idx] = 1;
        return;
    }
    double* dst = grad_[idx].data();
    const double* src = g.data();
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

Tape::Var Tape::leaf(const std::string& name, DTensor value) {
    if (name.empty()) throw ConfigError("tape leaf needs a name");
    for (const auto& n : nodes_)
        if (n.leaf_name == name)
            throw ConfigError("tape already has a leaf named '" + name + "'");
    Var v = push("leaf", std::move(value));
    node(v).leaf_name = name;
    return v;
}

Tape::Var Tape::constant(DTensor value) { return push("const", std::move(value)); }

const DTensor& Tape::value(Var v) const { return node(v).value; }

Tape::Var Tape::conv2d(Var x, const ConvSpec& spec, Var weight, Var bias) {
    if (spec.has_bias != bias.valid())
        throw ConfigError("conv2d: bias var presence does not match spec.has_bias");
    const DTensor& xv = value(x);
    const DTensor& wv = value(weight);
    std::span<const double> bspan;
    if (bias.valid()) {
        const DTensor& bv = value(bias);
        if (bv.numel() != spec.out_ch)
            throw ShapeError("conv2d: bias var has " + std::to_string(bv.numel()) +
                             " elements, spec expects " + std::to_string(spec.out_ch));
        bspan = bv.span();
    }
    Var out = push("conv2d", topformer::conv2d<double>(xv, spec, wv, bspan));
    const int xid = x.id, wid = weight.id, bid = bias.id, oid = out.id;
    node(out).vjp = [this, xid, wid, bid, oid, spec](const DTensor& g) {
        const DTensor& xv = nodes_[(std::size_t)xid].value;
        const DTensor& wv = nodes_[(std::size_t)wid].value;
        const Shape in = xv.shape();
        const Shape os = nodes_[(std::size_t)oid].value.shape();
        const std::int64_t icg = spec.in_ch / spec.groups;
        const std::int64_t ocg = spec.out_ch / spec.groups;
        DTensor gx(in);
        DTensor gw(wv.shape());
        DTensor gb(Shape{1, spec.out_ch, 1, 1});
        for (std::int64_t n = 0; n < in.n; ++n)
            for (std::int64_t oc = 0; oc < spec.out_ch; ++oc) {
                const std::int64_t grp = oc / ocg;
                for (std::int64_t oy = 0; oy < os.h; ++oy)
                    for (std::int64_t ox = 0; ox < os.w; ++ox) {
                        const double go = g.at(n, oc, oy, ox);
                        gb.data()[oc] += go;
                        for (std::int64_t ic = 0; ic < icg; ++ic)
                            for (std::int64_t ky = 0; ky < spec.kh; ++ky)
                                for (std::int64_t kx = 0; kx < spec.kw; ++kx) {
                                    const std::int64_t iy = oy * spec.sh - spec.ph + ky;
                                    const std::int64_t ix = ox * spec.sw - spec.pw + kx;
                                    if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w)
                                        continue;
                                    gx.at(n, grp * icg + ic, iy, ix) +=
                                        go * wv.at(oc, ic, ky, kx);
                                    gw.at(oc, ic, ky, kx) +=
                                        go * xv.at(n, grp * icg + ic, iy, ix);
                                }
                    }
            }
        accum(xid, std::move(gx));
        accum(wid, std::move(gw));
        if (bid >= 0) accum(bid, std::move(gb));
    };
    return out;
}

Tape::Var Tape::channel_affine(Var x, Var scale, Var shift) {
    const DTensor& xv = value(x);
    const DTensor& sv = value(scale);
    const DTensor& tv = value(shift);
    if (sv.numel() != xv.shape().c || tv.numel() != xv.shape().c)
        throw ShapeError("channel_affine: coefficient vars do not match channel axis " +
                         std::to_string(xv.shape().c));
    Var out = push("channel_affine",
                   topformer::channel_affine<double>(xv, sv.span(), tv.span()));
    const int xid = x.id, sid = scale.id, tid = shift.id;
    node(out).vjp = [this, xid, sid, tid](const DTensor& g) {
        const DTensor& xv = nodes_[(std::size_t)xid].value;
        const DTensor& sv = nodes_[(std::size_t)sid].value;
        const Shape in = xv.shape();
        DTensor gx(in);
        DTensor gs(sv.shape());
        DTensor gt(sv.shape());
        const std::int64_t plane = in.h * in.w;
        for (std::int64_t n = 0; n < in.n; ++n)
            for (std::int64_t c = 0; c < in.c; ++c) {
                const double* gp = g.data() + (n * in.c + c) * plane;
                const double* xp = xv.data() + (n * in.c + c) * plane;
                double* gxp = gx.data() + (n * in.c + c) * plane;
                const double s = sv.data()[c];
                double ds = 0.0, dt = 0.0;
                for (std::int64_t i = 0; i < plane; ++i) {
                    gxp[i] = gp[i] * s;
                    ds += gp[i] * xp[i];
                    dt += gp[i];
                }
                gs.data()[c] += ds;
                gt.data()[c] += dt;
            }
        accum(xid, std::move(gx));
        accum(sid, std::move(gs));
        accum(tid, std::move(gt));
    };
    return out;
}

Tape::Var Tape::relu6(Var x) {
    const DTensor& xv = value(x);
    Var out = push("relu6", topformer::relu6<double>(xv));
    const int xid = x.id;
    node(out).vjp = [this, xid](const DTensor& g) {
        const DTensor& xv = nodes_[(std::size_t)xid].value;
        DTensor gx(xv.shape());
        for (std::int64_t i = 0; i < xv.numel(); ++i) {
            const double v = xv.data()[i];
            gx.data()[i] = (v > 0.0 && v < 6.0) ? g.data()[i] : 0.0;
        }
        accum(xid, std::move(gx));
    };
    return out;
}

Tape::Var Tape::sigmoid(Var x) {
    Var out = push("sigmoid", topformer::sigmoid<double>(value(x)));
    const int xid = x.id, oid = out.id;
    node(out).vjp = [this, xid, oid](const DTensor& g) {
        const DTensor& yv = nodes_[(std::size_t)oid].value;
        DTensor gx(yv.shape());
        for (std::int64_t i = 0; i < yv.numel(); ++i) {
            const double y = yv.data()[i];
            gx.data()[i] = g.data()[i] * y * (1.0 - y);
        }
        accum(xid, std::move(gx));
    };
    return out;
}

Tape::Var Tape::softmax_lastdim(Var x) {
    Var out = push("softmax_lastdim", topformer::softmax_lastdim<double>(value(x)));
    const int xid = x.id, oid = out.id;
    node(out).vjp = [this, xid, oid](const DTensor& g) {
        const DTensor& yv = nodes_[(std::size_t)oid].value;
        const Shape s = yv.shape();
        DTensor gx(s);
        const std::int64_t rows = s.n * s.c * s.h;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = yv.data() + r * s.w;
            const double* gr = g.data() + r * s.w;
            double* gxr = gx.data() + r * s.w;
            double dot = 0.0;
            for (std::int64_t i = 0; i < s.w; ++i) dot += gr[i] * y[i];
            for (std::int64_t i = 0; i < s.w; ++i) gxr[i] = y[i] * (gr[i] - dot);
        }
        accum(xid, std::move(gx));
    };
    return out;
}

Tape::Var Tape::adaptive_avg_pool(Var x, std::int64_t out_h, std::int64_t out_w) {
    const DTensor& xv = value(x);
    Var out = push("adaptive_avg_pool",
                   topformer::adaptive_avg_pool<double>(xv, out_h, out_w));
    const int xid = x.id;
    node(out).vjp = [this, xid, out_h, out_w](const DTensor& g) {
        const DTensor& xv = nodes_[(std::size_t)xid].value;
        const Shape in = xv.shape();
        DTensor gx(in);
        const std::int64_t plane = in.h * in.w;
        for (std::int64_t nc = 0; nc < in.n * in.c; ++nc) {
            double* gxp = gx.data() + nc * plane;
            const double* gp = g.data() + nc * out_h * out_w;
            for (std::int64_t i = 0; i < out_h; ++i) {
                const std::int64_t y0 = (i * in.h) / out_h;
                const std::int64_t y1 = ((i + 1) * in.h + out_h - 1) / out_h;
                for (std::int64_t j = 0; j < out_w; ++j) {
                    const std::int64_t x0 = (j * in.w) / out_w;
                    const std::int64_t x1 = ((j + 1) * in.w + out_w - 1) / out_w;
                    const double share =
                        gp[i * out_w + j] / static_cast<double>((y1 - y0) * (x1 - x0));
                    for (std::int64_t y = y0; y < y1; ++y)
                        for (std::int64_t xx = x0; xx < x1; ++xx)
                            gxp[y * in.w + xx] += share;
                }
            }
        }
        accum(xid, std::move(gx));
    };
    return out;
}

Tape::Var Tape::bilinear_upsample(Var x, std::int64_t out_h, std::int64_t out_w) {
    const DTensor& xv = value(x);
    Var out = push("bilinear_upsample",
                   topformer::bilinear_upsample<double>(xv, out_h, out_w));
    const int xid = x.id;
    node(out).vjp = [this, xid, out_h, out_w](const DTensor& g) {
        const DTensor& xv = nodes_[(std::size_t)xid].value;
        const Shape in = xv.shape();
        DTensor gx(in);
        if (out_h == in.h && out_w == in.w) {
            accum(xid, g);
            return;
        }
        auto src_coord = [](std::int64_t i, std::int64_t in_sz, std::int64_t out_sz) {
            const double s = (i + 0.5) * static_cast<double>(in_sz) / out_sz - 0.5;
            return std::clamp(s, 0.0, static_cast<double>(in_sz - 1));
        };
        std::vector<std::int64_t> y0(static_cast<std::size_t>(out_h)),
            x0(static_cast<std::size_t>(out_w));
        std::vector<double> fy(static_cast<std::size_t>(out_h)),
            fx(static_cast<std::size_t>(out_w));
        for (std::int64_t i = 0; i < out_h; ++i) {
            const double s = src_coord(i, in.h, out_h);
            y0[(std::size_t)i] = std::min<std::int64_t>((std::int64_t)s, in.h - 1);
            fy[(std::size_t)i] = s - (double)y0[(std::size_t)i];
        }
        for (std::int64_t j = 0; j < out_w; ++j) {
            const double s = src_coord(j, in.w, out_w);
            x0[(std::size_t)j] = std::min<std::int64_t>((std::int64_t)s, in.w - 1);
            fx[(std::size_t)j] = s - (double)x0[(std::size_t)j];
        }
        const std::int64_t plane = in.h * in.w;
        for (std::int64_t nc = 0; nc < in.n * in.c; ++nc) {
            double* gxp = gx.data() + nc * plane;
            const double* gp = g.data() + nc * out_h * out_w;
            for (std::int64_t i = 0; i < out_h; ++i) {
                const std::int64_t ya = y0[(std::size_t)i];
                const std::int64_t yb = std::min(ya + 1, in.h - 1);
                const double wy = fy[(std::size_t)i];
                for (std::int64_t j = 0; j < out_w; ++j) {
                    const std::int64_t xa = x0[(std::size_t)j];
                    const std::int64_t xb = std::min(xa + 1, in.w - 1);
                    const double wx = fx[(std::size_t)j];
                    const double go = gp[i * out_w + j];
                    gxp[ya * in.w + xa] += go * (1.0 - wy) * (1.0 - wx);
                    gxp[ya * in.w + xb] += go * (1.0 - wy) * wx;
                    gxp[yb * in.w + xa] += go * wy * (1.0 - wx);
                    gxp[yb * in.w + xb] += go * wy * wx;
                }
            }
        }
        accum(xid, std::move(gx));
    };
    return out;
}

Tape::Var Tape::add(Var a, Var b) {
    Var out = push("add", topformer::add<double>(value(a), value(b)));
    const int aid = a.id, bid = b.id;
    node(out).vjp = [this, aid, bid](const DTensor& g) {
        accum(aid, g);
        accum(bid, g);
    };
    return out;
}

Tape::Var Tape::hadamard(Var a, Var b) {
    Var out = push("hadamard", topformer::hadamard<double>(value(a), value(b)));
    const int aid = a.id, bid = b.id;
    node(out).vjp = [this, aid, bid](const DTensor& g) {
        const DTensor& av = nodes_[(std::size_t)aid].value;
        const DTensor& bv = nodes_[(std::size_t)bid].value;
        accum(aid, topformer::hadamard<double>(g, bv));
        accum(bid, topformer::hadamard<double>(g, av));
    };
    return out;
}

Tape::Var Tape::concat_channels(const std::vector<Var>& parts) {
    std::vector<DTensor> vals;
    vals.reserve(parts.size());
    for (Var p : parts) vals.push_back(value(p));
    Var out = push("concat_channels", topformer::concat_channels<double>(vals));
    std::vector<int> ids;
    std::vector<std::int64_t> sizes;
    for (Var p : parts) {
        ids.push_back(p.id);
        sizes.push_back(value(p).shape().c);
    }
    node(out).vjp = [this, ids, sizes](const DTensor& g) {
        auto slices = topformer::split_channels<double>(g, sizes);
        for (std::size_t i = 0; i < ids.size(); ++i)
            accum(ids[i], std::move(slices[i]));
    };
    return out;
}

std::vector<Tape::Var> Tape::split_channels(Var x,
                                            const std::vector<std::int64_t>& sizes) {
    const DTensor& xv = value(x);
    auto parts = topformer::split_channels<double>(xv, sizes);
    std::vector<Var> out;
    out.reserve(parts.size());
    const int xid = x.id;
    std::int64_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        Var v = push("split_channels", std::move(parts[i]));
        const std::int64_t c_off = off, c_len = sizes[i];
        node(v).vjp = [this, xid, c_off, c_len](const DTensor& g) {
            const Shape in = nodes_[(std::size_t)xid].value.shape();
            DTensor gx(in);
            const Shape gs = g.shape();
            const std::int64_t plane = in.h * in.w;
            for (std::int64_t n = 0; n < in.n; ++n)
                std::copy(g.data() + n * c_len * plane,
                          g.data() + (n + 1) * c_len * plane,
                          gx.data() + (n * in.c + c_off) * plane);
            (void)gs;
            accum(xid, std::move(gx));
        };
        out.push_back(v);
        off += sizes[i];
    }
    return out;
}

Tape::Var Tape::matmul_batched(Var a, Var b) {
    Var out = push("matmul_batched", topformer::matmul_batched<double>(value(a), value(b)));
    const int aid = a.id, bid = b.id;
    node(out).vjp = [this, aid, bid](const DTensor& g) {
        const DTensor& av = nodes_[(std::size_t)aid].value;
        const DTensor& bv = nodes_[(std::size_t)bid].value;
        accum(aid, topformer::matmul_batched<double>(g, topformer::transpose_mat<double>(bv)));
        accum(bid, topformer::matmul_batched<double>(topformer::transpose_mat<double>(av), g));
    };
    return out;
}

Tape::Var Tape::transpose_mat(Var x) {
    Var out = push("transpose_mat", topformer::transpose_mat<double>(value(x)));
    const int xid = x.id;
    node(out).vjp = [this, xid](const DTensor& g) {
        accum(xid, topformer::transpose_mat<double>(g));
    };
    return out;
}

Tape::Var Tape::reshape(Var x, Shape s) {
    const Shape in = value(x).shape();
    Var out = push("reshape", value(x).reshaped(s));
    const int xid = x.id;
    node(out).vjp = [this, xid, in](const DTensor& g) { accum(xid, g.reshaped(in)); };
    return out;
}

Tape::Var Tape::scale_const(Var x, double factor) {
    Var out = push("scale_const", topformer::scale<double>(value(x), factor));
    const int xid = x.id;
    node(out).vjp = [this, xid, factor](const DTensor& g) {
        accum(xid, topformer::scale<double>(g, factor));
    };
    return out;
}

std::map<std::string, DTensor> Tape::backward(Var output, const DTensor& seed) {
    const Node& out = node(output);
    if (seed.shape() != out.value.shape())
        throw ShapeError("backward seed dims " + seed.shape().str() +
                         " do not match output " + out.value.shape().str());
    grad_.assign(nodes_.size(), DTensor{});
    has_grad_.assign(nodes_.size(), 0);
    accum(output.id, seed);
    for (int i = output.id; i >= 0; --i) {
        const auto idx = static_cast<std::size_t>(i);
        if (!has_grad_[idx]) continue;
        check_finite(grad_[idx], nodes_[idx].op);
        if (nodes_[idx].vjp) nodes_[idx].vjp(grad_[idx]);
    }
    std::map<std::string, DTensor> result;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].leaf_name.empty()) continue;
        result.emplace(nodes_[i].leaf_name,
                       has_grad_[i] ? std::move(grad_[i])
                                    : DTensor(nodes_[i].value.shape()));
    }
    grad_.clear();
    has_grad_.clear();
    return result;
}

GradcheckReport fd_gradcheck(const TapeBuilder& build,
                             const std::vector<Shape>& input_shapes,
                             std::uint64_t seed, double tol) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    auto draw_safe = [&] {
        double v;
        do {
            v = dist(rng);
        } while (std::fabs(v) < 1e-3 || std::fabs(v - 6.0) < 1e-3);
        return v;
    };

    std::vector<DTensor> inputs;
    inputs.reserve(input_shapes.size());
    for (const Shape& s : input_shapes) {
        DTensor t(s);
        for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = draw_safe();
        inputs.push_back(std::move(t));
    }

    auto record = [&](Tape& t, const std::vector<DTensor>& vals) {
        std::vector<Tape::Var> vars;
        vars.reserve(vals.size());
        for (std::size_t i = 0; i < vals.size(); ++i)
            vars.push_back(t.leaf("in" + std::to_string(i), vals[i]));
        return build(t, vars);
    };

    Tape tape;
    Tape::Var out = record(tape, inputs);
    const Shape out_shape = tape.value(out).shape();

    DTensor proj(out_shape);
    for (std::int64_t i = 0; i < proj.numel(); ++i) proj.data()[i] = dist(rng);

    auto scalar = [&](const std::vector<DTensor>& vals) {
        Tape t;
        Tape::Var o = record(t, vals);
        const DTensor& v = t.value(o);
        double acc = 0.0;
        for (std::int64_t i = 0; i < v.numel(); ++i)
            acc += v.data()[i] * proj.data()[i];
        return acc;
    };

    auto grads = tape.backward(out, proj);

    GradcheckReport report;
    const double h = 1e-5;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const DTensor& analytic = grads.at("in" + std::to_string(k));
        for (std::int64_t e = 0; e < inputs[k].numel(); ++e) {
            const double saved = inputs[k].data()[e];
            inputs[k].data()[e] = saved + h;
            const double fp = scalar(inputs);
            inputs[k].data()[e] = saved - h;
            const double fm = scalar(inputs);
            inputs[k].data()[e] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic.data()[e];
            const double rel =
                std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric) + 1e-8);
            report.max_rel_err = std::max(report.max_rel_err, rel);
        }
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace topformer
