#include "sense/diffcore/tensor_util.hpp"

#include <ATen/CPUGeneratorImpl.h>

namespace sense::diffcore {

torch::Tensor image_to_tensor(const Grid<float>& image) {
  auto hwc = torch::from_blob(const_cast<float*>(image.storage().data()),
                              {static_cast<long>(image.height()), static_cast<long>(image.width()),
                               static_cast<long>(image.channels())},
                              torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous();
}

Grid<float> tensor_to_image(const torch::Tensor& chw) {
  if (chw.dim() != 3) throw Error(ErrorKind::shape_mismatch, "tensor_to_image expects C x H x W");
  auto hwc = chw.detach().to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  Grid<float> out(static_cast<std::size_t>(hwc.size(0)), static_cast<std::size_t>(hwc.size(1)),
                  static_cast<std::size_t>(hwc.size(2)));
  std::memcpy(out.storage().data(), hwc.data_ptr<float>(), out.size() * sizeof(float));
  return out;
}

torch::Tensor mask_to_tensor(const Grid<std::uint8_t>& mask) {
  auto hwc = torch::from_blob(const_cast<std::uint8_t*>(mask.storage().data()),
                              {static_cast<long>(mask.height()), static_cast<long>(mask.width()),
                               static_cast<long>(mask.channels())},
                              torch::kUInt8);
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).contiguous();
}

torch::Tensor labels_to_tensor(const Grid<std::uint8_t>& labels) {
  auto hw = torch::from_blob(const_cast<std::uint8_t*>(labels.storage().data()),
                             {static_cast<long>(labels.height()), static_cast<long>(labels.width())}, torch::kUInt8);
  return hw.to(torch::kInt64).contiguous();
}

Grid<std::uint8_t> tensor_to_labels(const torch::Tensor& hw) {
  if (hw.dim() != 2) throw Error(ErrorKind::shape_mismatch, "tensor_to_labels expects H x W");
  auto t = hw.detach().to(torch::kUInt8).contiguous();
  Grid<std::uint8_t> out(static_cast<std::size_t>(t.size(0)), static_cast<std::size_t>(t.size(1)), 1);
  std::memcpy(out.storage().data(), t.data_ptr<std::uint8_t>(), out.size());
  return out;
}

torch::Generator make_generator(std::uint64_t seed) { return at::detail::createCPUGenerator(seed); }

std::uint64_t stable_seed(std::string_view key, std::uint64_t salt) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  h ^= salt + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return h;
}

torch::Tensor seeded_randn(torch::IntArrayRef shape, std::uint64_t seed) {
  auto gen = make_generator(seed);
  return torch::randn(shape, gen, torch::kFloat32);
}

}  // namespace sense::diffcore
