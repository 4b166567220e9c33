#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "topformer/tensor.hpp"

namespace topformer {

struct Model;

/// Malformed or truncated file contents.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Filesystem-level failure (open/read/write).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Ordered name -> tensor container. Names are unique; insertion order is
/// preserved so saved files are reproducible.
class WeightStore {
public:
    void put(std::string name, Tensor t);
    bool contains(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    std::size_t size() const { return entries_.size(); }
    const std::vector<std::pair<std::string, Tensor>>& entries() const {
        return entries_;
    }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// TPFW container: magic "TPFW", version u32 LE, record count u32 LE, then per
/// record name_len u16 LE + name + dtype u8 (0 = f32 LE) + rank u8 +
/// rank x u32 LE dims + raw little-endian IEEE-754 payload.
void save_weights(const WeightStore& store, const std::string& path);
WeightStore load_weights(const std::string& path);

/// Fills every parameter slot of a built model: Kaiming-uniform conv weights
/// (bound sqrt(6/fan_in)), BN gamma=1 beta=0 mean=0 var=1, uniform biases.
/// Deterministic per seed.
WeightStore random_init(const Model& model, std::uint64_t seed);

struct ImageNorm {
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> stdev{0.229f, 0.224f, 0.225f};
};

/// Binary P6, maxval 255. Pixels map to (v/255 - mean_c)/std_c.
Tensor read_ppm(const std::string& path, const ImageNorm& norm = {});

/// Per-pixel channel argmax of 1xCxHxW logits as a 1x1xHxW index map.
Tensor argmax_channels(const Tensor& logits);

/// Binary P5 of the per-pixel argmax class index; requires C <= 256.
void write_pgm(const Tensor& logits, const std::string& path);

/// Reads a binary P5 back as a 1x1xHxW tensor of raw 0..255 values.
Tensor read_pgm(const std::string& path);

/// Palette file: one "R G B" decimal triplet per line.
std::vector<std::array<std::uint8_t, 3>> load_palette(const std::string& path);

/// Binary P6 of the argmax map pushed through the palette.
void write_ppm_colorized(const Tensor& logits, const std::string& palette_path,
                         const std::string& out_path);

}  // namespace topformer
