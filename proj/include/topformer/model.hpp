#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "topformer/autodiff.hpp"
#include "topformer/iofmt.hpp"
#include "topformer/tensor.hpp"

namespace topformer {

/// Weight store does not cover the graph's parameter slots.
struct BindError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Input dims violate the stride requirements of the built graph.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// MobileNetV2 inverted-residual block: expand 1x1 (skipped when t == 1),
/// depthwise k x k stride s, project 1x1. Residual iff s == 1 and channels
/// are preserved.
struct MBBlockCfg {
    int k;           // depthwise kernel, odd
    int t;           // expansion ratio
    std::int64_t c;  // output channels
    int s;           // stride, 1 or 2
};

enum class HeadKind { seg_default, seg_sum, seg_concat, classification };

struct VariantConfig {
    std::string name = "custom";
    /// Pyramid stages after the fixed stem (3x3 conv, 16 ch, stride 2, plus
    /// one MB(3,1,16,1) at the stem scale). Stage i halves resolution with
    /// its first block; tokens are taken at each stage output.
    std::vector<std::vector<MBBlockCfg>> stages;
    int num_transformer_blocks = 4;  // L
    int num_heads = 8;               // H
    std::int64_t key_dim = 16;       // D, per-head Q/K width
    std::int64_t value_dim = 32;     // per-head V width, 2D
    int ffn_expansion = 2;
    std::int64_t sim_width = 256;  // M, channels of every injection output
    int sase_stride = 64;          // image-to-token-grid downsampling factor
    HeadKind head_kind = HeadKind::seg_default;
    std::int64_t num_classes = 150;

    /// tiny | small | base segmentation configs; ConfigError otherwise.
    static VariantConfig preset(const std::string& which);

    /// Input dims must be multiples of this (full 1/32 pyramid chain plus
    /// the token grid for 4-stage configs, the token grid alone otherwise).
    std::int64_t required_multiple() const;
};

/// One named conv unit with its optional batch norm. Weight-store keys hang
/// off `name`: <name>.conv.weight, <name>.conv.bias (bias convs only),
/// <name>.bn.{gamma,beta,mean,var}.
struct ConvBnDef {
    std::string name;
    ConvSpec conv;
    bool bn = true;
};

struct MbBlockDef {
    bool has_expand = false;
    ConvBnDef expand;  // meaningful only when has_expand
    ConvBnDef dw;
    ConvBnDef project;
    bool residual = false;
};

struct SaseBlockDef {
    ConvBnDef qkv;       // fused projection, H*(D+D+2D) output channels
    ConvBnDef attn_out;  // back to the concat width
    ConvBnDef ffn_expand, ffn_dw, ffn_project;
};

struct SimDef {
    int stage;  // 1-based pyramid stage this injection feeds from
    ConvBnDef local;
    bool has_gweight = true;  // dropped by the sum head
    ConvBnDef gweight;
    ConvBnDef gsem;
};

struct HeadDef {
    HeadKind kind = HeadKind::seg_default;
    std::vector<ConvBnDef> reduce;  // concat head: per-scale channel reduce
    bool has_fuse = false;
    ConvBnDef fuse;
    ConvBnDef classifier;  // bias conv, no bn
};

enum class ParamKind { conv_weight, conv_bias, bn_gamma, bn_beta, bn_mean, bn_var };

struct ParamSlot {
    std::string name;
    Shape shape;          // vectors stored as 1xCx1x1
    ParamKind kind;
    std::int64_t fan_in;  // weight init bound, conv slots only
};

struct FoldedConv {
    Tensor weight;
    std::vector<float> bias;
};

struct Model {
    VariantConfig cfg;
    ConvBnDef stem;
    /// stages[0] holds the stem-scale MB block; stages[1..] the pyramid.
    std::vector<std::vector<MbBlockDef>> stages;
    std::vector<std::int64_t> stage_out_ch;  // per pyramid stage
    std::int64_t concat_ch = 0;              // SASE input width
    std::vector<SaseBlockDef> sase;
    std::vector<SimDef> sims;
    HeadDef head;

    WeightStore weights;
    bool bound = false;
    bool folded = false;
    std::map<std::string, FoldedConv> folded_convs;
};

/// Realizes the variant as a layer graph; throws ConfigError listing every
/// violated invariant. Named presets additionally pin L/D/(H,M)/stride.
Model build(const VariantConfig& cfg);

/// Visits every conv unit in forward execution order.
void for_each_convbn(const Model& m, const std::function<void(const ConvBnDef&)>& fn);

/// Parameter slots in forward order; covers exactly what bind() expects.
std::vector<ParamSlot> param_slots(const Model& m);

/// Takes ownership of the store after checking full, exact slot coverage.
/// Missing, unexpected, and mis-shaped names are all listed in the error.
void bind(Model& m, WeightStore store);

/// Folds every batch norm into its conv (weights + bias); forward then runs
/// the folded path. Requires a bound model.
void fold(Model& m);

struct ForwardOpts {
    bool upsample_to_input = false;
};

// ---- 32-bit inference over a bound model ----

std::vector<Tensor> forward_pyramid(const Model& m, const Tensor& image);
Tensor pool_and_concat(const Model& m, const std::vector<Tensor>& tokens);
/// attn_rows, when given, receives the softmaxed scores as n x H x T x T.
Tensor mhsa(const Model& m, int blk, const Tensor& x, Tensor* attn_rows = nullptr);
Tensor ffn(const Model& m, int blk, const Tensor& x);
Tensor transformer_block(const Model& m, int blk, const Tensor& x);
Tensor sim_forward(const Model& m, int sim_idx, const Tensor& local,
                   const Tensor& global_slice);
Tensor seg_head(const Model& m, const std::vector<Tensor>& sim_outs);
Tensor cls_head(const Model& m, const Tensor& sase_out);
Tensor forward(const Model& m, const Tensor& image, const ForwardOpts& opts = {});

// ---- 64-bit tape recording for gradient checks ----

/// Differentiable leaves of the recorded forward, in a fixed order. Batch
/// norm appears in inference form as one scale/shift pair per unit
/// (<name>.bn.scale / <name>.bn.shift).
struct TapeSlot {
    std::string name;
    Shape shape;
};
std::vector<TapeSlot> tape_slots(const Model& m);

/// Records the full forward pass on the tape. `leaves` follow tape_slots
/// order. Conv weight leaves are rescaled by 1/sqrt(fan_in) inside the
/// recorded function so unit-range leaves produce well-conditioned
/// activations.
Tape::Var record_forward(const Model& m, Tape& tape, Tape::Var image,
                         const std::vector<Tape::Var>& leaves,
                         const ForwardOpts& opts = {});

}  // namespace topformer
