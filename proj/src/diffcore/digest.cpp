#include "sense/diffcore/digest.hpp"

#include <openssl/evp.h>

#include <cstdio>

namespace sense::diffcore {

struct Sha256::Impl {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) { EVP_DigestInit_ex(impl_->ctx.get(), EVP_sha256(), nullptr); }
Sha256::~Sha256() = default;

void Sha256::bytes(const void* data, std::size_t n) { EVP_DigestUpdate(impl_->ctx.get(), data, n); }

void Sha256::text(const std::string& s) { bytes(s.data(), s.size() + 1); }

void Sha256::tensor(const std::string& name, const torch::Tensor& t) {
  text(name);
  auto c = t.detach().to(torch::kCPU).contiguous();
  for (auto d : c.sizes()) bytes(&d, sizeof(d));
  bytes(c.data_ptr(), c.nbytes());
}

void Sha256::module(const std::string& prefix, const torch::nn::Module& m) {
  for (const auto& p : m.named_parameters()) tensor(prefix + p.key(), p.value());
  for (const auto& b : m.named_buffers()) tensor(prefix + b.key(), b.value());
}

std::string Sha256::hex() {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(impl_->ctx.get(), md, &len);
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", md[i]);
    out += buf;
  }
  return out;
}

std::string sha256_hex(const void* data, std::size_t n) {
  Sha256 h;
  h.bytes(data, n);
  return h.hex();
}

}  // namespace sense::diffcore
