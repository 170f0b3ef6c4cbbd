#pragma once

#include <torch/torch.h>

#include <memory>
#include <string>

namespace sense::diffcore {

// Incremental SHA-256 with helpers for tensors and module state.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void bytes(const void* data, std::size_t n);
  // Includes the terminating zero so adjacent strings cannot collide.
  void text(const std::string& s);
  void tensor(const std::string& name, const torch::Tensor& t);
  void module(const std::string& prefix, const torch::nn::Module& m);
  // Finalises; call once.
  std::string hex();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(const void* data, std::size_t n);

}  // namespace sense::diffcore
