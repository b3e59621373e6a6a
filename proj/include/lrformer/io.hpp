#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrformer/model.hpp"
#include "lrformer/tensor.hpp"

namespace lrf {

// Integer class labels in row-major order.
struct LabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::int32_t> labels;

    std::int32_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
};

// Binary PPM (P6) with maxval 255 -> [3, H, W] scaled to [0, 1].
Tensor read_image(const std::string& path);
Tensor parse_ppm(const std::vector<std::uint8_t>& bytes);
// Values are clamped to [0, 1] and rounded to 8 bits.
void write_image(const std::string& path, const Tensor& image);

// Binary PGM (P5) with maxval 255. num_classes > 0 rejects labels >= num_classes.
LabelMap read_mask(const std::string& path, std::size_t num_classes = 0);
LabelMap parse_pgm(const std::vector<std::uint8_t>& bytes, std::size_t num_classes = 0);
void write_mask(const std::string& path, const LabelMap& mask);

// LRFW weight file, little-endian:
//   "LRFW" | u32 version | u32 entry count |
//   per entry: u32 name length | name | u8 dtype (0 = f32) | u32 rank | u64 extents[rank] | f32 values
inline constexpr std::uint32_t kWeightFormatVersion = 1;

std::vector<std::uint8_t> serialize_weights(const ParamStore& store);
ParamStore parse_weights(const std::vector<std::uint8_t>& bytes);
void save_weights(const ParamStore& store, const std::string& path);
ParamStore load_weights(const std::string& path);

// Copies loaded values into target; names, order and shapes must match.
void assign_weights(ParamStore& target, const ParamStore& loaded);
// Declares spec's parameters and fills them from path.
Model load_model(const VariantSpec& spec, const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace lrf
