#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string_view>
#include <vector>

#include "sense/grid.hpp"

namespace sense::diffcore {

// H x W x C grids <-> C x H x W float32 tensors.
torch::Tensor image_to_tensor(const Grid<float>& image);
Grid<float> tensor_to_image(const torch::Tensor& chw);
torch::Tensor mask_to_tensor(const Grid<std::uint8_t>& mask);
// Single-channel label grid <-> int64 H x W tensor.
torch::Tensor labels_to_tensor(const Grid<std::uint8_t>& labels);
Grid<std::uint8_t> tensor_to_labels(const torch::Tensor& hw);

torch::Generator make_generator(std::uint64_t seed);

// Stable 64-bit seed derived from a string key and a salt.
std::uint64_t stable_seed(std::string_view key, std::uint64_t salt = 0);

// Standard normal draw of `shape` from a fresh generator seeded by `seed`.
torch::Tensor seeded_randn(torch::IntArrayRef shape, std::uint64_t seed);

}  // namespace sense::diffcore
