#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "topformer/tensor.hpp"

namespace topformer {

/// Define-by-run reverse-mode tape over 64-bit tensors. Values are recorded
/// eagerly; backward() replays the registered vjp rules in reverse order.
/// Batch norm enters as channel_affine on pre-folded scale/shift (inference
/// form); there are no train-mode statistics gradients.
class Tape {
public:
    struct Var {
        int id;
        constexpr Var(int node_id = -1) : id(node_id) {}
        bool valid() const { return id >= 0; }
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable named input; backward() reports gradients under `name`.
    Var leaf(const std::string& name, DTensor value);
    /// Recorded value with no gradient.
    Var constant(DTensor value);

    const DTensor& value(Var v) const;

    Var conv2d(Var x, const ConvSpec& spec, Var weight, Var bias = {});
    Var channel_affine(Var x, Var scale, Var shift);  // coefficients are 1xCx1x1
    Var relu6(Var x);                                 // subgradient 0 at both kinks
    Var sigmoid(Var x);
    Var softmax_lastdim(Var x);
    Var adaptive_avg_pool(Var x, std::int64_t out_h, std::int64_t out_w);
    Var bilinear_upsample(Var x, std::int64_t out_h, std::int64_t out_w);
    Var add(Var a, Var b);
    Var hadamard(Var a, Var b);
    Var concat_channels(const std::vector<Var>& parts);
    std::vector<Var> split_channels(Var x, const std::vector<std::int64_t>& sizes);
    Var matmul_batched(Var a, Var b);
    Var transpose_mat(Var x);
    Var reshape(Var x, Shape s);
    Var scale_const(Var x, double factor);

    /// Gradients of sum(seed * output) for every leaf, keyed by leaf name.
    /// Leaves the output does not depend on report zero gradients.
    std::map<std::string, DTensor> backward(Var output, const DTensor& seed);

private:
    struct Node {
        std::string op;
        DTensor value;
        std::string leaf_name;  // empty for interior nodes
        std::function<void(const DTensor&)> vjp;
    };

    Var push(std::string op, DTensor value);
    Node& node(Var v);
    const Node& node(Var v) const;
    void accum(int id, DTensor g);

    std::vector<Node> nodes_;
    std::vector<DTensor> grad_;
    std::vector<char> has_grad_;
};

struct GradcheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
};

/// Builds the function under test from leaves named in0, in1, ...; returns
/// the output var.
using TapeBuilder = std::function<Tape::Var(Tape&, const std::vector<Tape::Var>&)>;

/// Central differences (step 1e-5) on every element of every input against
/// the tape gradient of a random projection of the output. Inputs are seeded
/// uniform(-1,1) resampled away from the ReLU6 kinks (|x| < 1e-3, |x-6| <
/// 1e-3). Element relative error |a-n|/(|a|+|n|+1e-8) must stay within tol.
GradcheckReport fd_gradcheck(const TapeBuilder& build,
                             const std::vector<Shape>& input_shapes,
                             std::uint64_t seed, double tol = 1e-4);

}  // namespace topformer
