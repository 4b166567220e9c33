#pragma once

// Internal: the architecture walk, written once and instantiated per backend
// (32-bit inference, 64-bit tape recording, shape/cost tracing).

#include <cmath>
#include <string>
#include <vector>

#include "topformer/model.hpp"

namespace topformer::detail {

void check_input_dims(const Model& m, std::int64_t h, std::int64_t w);

template <class B>
struct Runner {
    const Model& m;
    B& b;
    using Val = typename B::Val;

    Val conv_bn(const ConvBnDef& d, Val x) { return b.conv_bn(d, x); }

    Val mb_block(const MbBlockDef& blk, Val x) {
        Val h = x;
        if (blk.has_expand) h = b.relu6(conv_bn(blk.expand, h));
        h = b.relu6(conv_bn(blk.dw, h));
        h = conv_bn(blk.project, h);
        return blk.residual ? b.add(h, x) : h;
    }

    std::vector<Val> pyramid(Val image) {
        Val x = b.relu6(conv_bn(m.stem, image));
        for (const auto& blk : m.stages[0]) x = mb_block(blk, x);
        std::vector<Val> tokens;
        for (std::size_t s = 1; s < m.stages.size(); ++s) {
            for (const auto& blk : m.stages[s]) x = mb_block(blk, x);
            tokens.push_back(x);
        }
        return tokens;
    }

    Val pool_and_concat(const std::vector<Val>& tokens, std::int64_t gh,
                        std::int64_t gw) {
        std::vector<Val> pooled;
        pooled.reserve(tokens.size());
        for (const Val& t : tokens) pooled.push_back(b.pool(t, gh, gw));
        return b.concat(pooled);
    }

    Val mhsa(const SaseBlockDef& blk, Val x, Val* attn_rows = nullptr) {
        const Shape xs = b.shape(x);
        const std::int64_t T = xs.h * xs.w;
        const std::int64_t H = m.cfg.num_heads;
        const std::int64_t D = m.cfg.key_dim;
        const std::int64_t V = m.cfg.value_dim;

        Val qkv = conv_bn(blk.qkv, x);
        std::vector<std::int64_t> sizes;
        for (std::int64_t h = 0; h < H; ++h) {
            sizes.push_back(D);
            sizes.push_back(D);
            sizes.push_back(V);
        }
        auto parts = b.split(qkv, sizes);

        // attention pseudo-layer name for cost attribution
        std::string scope = blk.qkv.name;
        scope.replace(scope.rfind(".qkv"), 4, ".attn");
        b.note_scope(scope);

        std::vector<Val> heads, rows;
        for (std::int64_t h = 0; h < H; ++h) {
            auto as_rows = [&](Val v, std::int64_t ch) {
                return b.transpose(b.reshape(v, Shape{xs.n, 1, ch, T}));
            };
            Val q = as_rows(parts[(std::size_t)(3 * h)], D);
            Val k = as_rows(parts[(std::size_t)(3 * h + 1)], D);
            Val v = as_rows(parts[(std::size_t)(3 * h + 2)], V);
            Val scores = b.softmax(
                b.scale(b.matmul(q, b.transpose(k)), 1.0 / std::sqrt((double)D)));
            if (attn_rows) rows.push_back(scores);
            Val ctx = b.matmul(scores, v);
            heads.push_back(b.reshape(b.transpose(ctx), Shape{xs.n, V, xs.h, xs.w}));
        }
        b.note_scope("");
        if (attn_rows) *attn_rows = b.concat(rows);
        Val merged = b.relu6(b.concat(heads));
        return conv_bn(blk.attn_out, merged);
    }

    Val ffn(const SaseBlockDef& blk, Val x) {
        Val h = b.relu6(conv_bn(blk.ffn_expand, x));
        h = b.relu6(conv_bn(blk.ffn_dw, h));
        return conv_bn(blk.ffn_project, h);
    }

    Val transformer_block(const SaseBlockDef& blk, Val x) {
        Val y = b.add(x, mhsa(blk, x));
        return b.add(y, ffn(blk, y));
    }

    Val sim(const SimDef& s, Val local, Val gslice) {
        const Shape ls = b.shape(local);
        Val loc = conv_bn(s.local, local);
        Val sem = b.upsample(conv_bn(s.gsem, gslice), ls.h, ls.w);
        if (!s.has_gweight) return b.add(loc, sem);
        Val w = b.upsample(b.sigmoid(conv_bn(s.gweight, gslice)), ls.h, ls.w);
        return b.add(b.hadamard(loc, w), sem);
    }

    Val seg_head(const std::vector<Val>& sim_outs) {
        const Shape fs = b.shape(sim_outs[0]);
        Val x;
        if (m.head.kind == HeadKind::seg_concat) {
            std::vector<Val> parts;
            for (std::size_t i = 0; i < sim_outs.size(); ++i) {
                Val r = conv_bn(m.head.reduce[i], sim_outs[i]);
                parts.push_back(b.upsample(r, fs.h, fs.w));
            }
            x = b.concat(parts);
        } else {
            x = sim_outs[0];
            for (std::size_t i = 1; i < sim_outs.size(); ++i)
                x = b.add(x, b.upsample(sim_outs[i], fs.h, fs.w));
        }
        x = b.relu6(conv_bn(m.head.fuse, x));
        return conv_bn(m.head.classifier, x);
    }

    Val cls_head(Val sase_out) {
        return conv_bn(m.head.classifier, b.pool(sase_out, 1, 1));
    }

    Val forward(Val image, const ForwardOpts& opts) {
        const Shape is = b.shape(image);
        check_input_dims(m, is.h, is.w);
        auto tokens = pyramid(image);
        const std::int64_t gh = is.h / m.cfg.sase_stride;
        const std::int64_t gw = is.w / m.cfg.sase_stride;
        Val x = pool_and_concat(tokens, gh, gw);
        for (const auto& blk : m.sase) x = transformer_block(blk, x);
        if (m.head.kind == HeadKind::classification) return cls_head(x);
        auto slices = b.split(x, m.stage_out_ch);
        std::vector<Val> outs;
        for (const auto& s : m.sims)
            outs.push_back(sim(s, tokens[(std::size_t)s.stage - 1],
                               slices[(std::size_t)s.stage - 1]));
        Val logits = seg_head(outs);
        if (opts.upsample_to_input) logits = b.upsample(logits, is.h, is.w);
        return logits;
    }
};

}  // namespace topformer::detail
