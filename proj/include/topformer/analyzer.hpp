#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "topformer/model.hpp"

namespace topformer {

// Cost accounting convention: 1 multiply-accumulate = 1 FLOP. Counted: conv
// kernels (out_elems * in_ch/groups * kh * kw) and attention matmuls.
// Excluded: activations, batch norm (foldable), elementwise adds, pooling,
// interpolation, biases.

struct LayerCost {
    std::string name;
    std::string module;  // TPM | SASE | SIM | Head
    std::int64_t params = 0;
    std::int64_t flops = 0;
    Shape out{0, 0, 0, 0};
};

struct ModuleTotal {
    std::string module;
    std::int64_t params = 0;
    std::int64_t flops = 0;
};

struct CostReport {
    std::vector<LayerCost> layers;    // execution order
    std::vector<ModuleTotal> modules; // TPM, SASE, SIM, Head
    std::int64_t total_params = 0;
    std::int64_t total_flops = 0;
    std::int64_t input_h = 0, input_w = 0;  // zero for params-only reports
};

struct TraceRow {
    std::string name;
    Shape out{0, 0, 0, 0};
};
using ShapeTrace = std::vector<TraceRow>;

struct ModuleShare {
    std::string module;
    double param_pct = 0.0;
    double flop_pct = 0.0;
};

/// Learnable parameters only: conv weights/biases and bn gamma+beta.
/// Running statistics are excluded. Needs a built model, not a bound one.
CostReport count_params(const Model& m);

/// Parameter and FLOP accounting for one input size. Attention matmul cost
/// shows up as per-block `sase.blkN.attn` rows with zero parameters.
CostReport count_flops(const Model& m, std::int64_t input_h, std::int64_t input_w);

/// Symbolic per-layer output shapes; agrees with the runtime forward pass.
/// The first row is the input itself.
ShapeTrace trace_shapes(const Model& m, std::int64_t input_h, std::int64_t input_w);

/// Per-module percentage shares of the totals in count_flops(m, h, w).
std::vector<ModuleShare> breakdown(const Model& m, std::int64_t input_h,
                                   std::int64_t input_w);

/// Human-readable aligned table with the convention note, subtotals and totals.
std::string render_table(const CostReport& r);

/// One line per layer: name<TAB>params<TAB>flops<TAB>n,c,h,w
std::string render_tsv(const CostReport& r);

}  // namespace topformer
