#pragma once

#include <torch/torch.h>

#include <map>
#include <string>
#include <vector>

#include "sense/diffcore/layers.hpp"

namespace sense::diffcore {

// Word-level vocabulary. Numbers are split into single characters so
// every density value is representable.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);
  // Template words, digits, punctuation and the given city names.
  static Vocabulary build_default(const std::vector<std::string>& cities);

  static std::vector<std::string> split(const std::string& prompt);
  // BOS + tokens + EOS, padded with kPad (or truncated) to max_len.
  std::vector<std::int64_t> encode(const std::string& prompt, std::size_t max_len) const;
  int id(const std::string& token) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

struct TextEncoderConfig {
  int vocab_size = 64;
  int max_len = 64;
  int dim = 64;
  int heads = 4;
  int layers = 1;
};

struct TextEmbedding {
  torch::Tensor tokens;   // [B, L, dim]
  torch::Tensor padding;  // [B, L] bool, true where padded
};

class TextEncoderImpl : public torch::nn::Module {
 public:
  explicit TextEncoderImpl(const TextEncoderConfig& config = {});
  TextEmbedding forward(const torch::Tensor& ids);
  const TextEncoderConfig& config() const { return config_; }

 private:
  TextEncoderConfig config_;
  torch::nn::Embedding embed_{nullptr};
  torch::Tensor position_;
  torch::nn::ModuleList ln_a_{nullptr}, attn_{nullptr}, ln_b_{nullptr}, ff1_{nullptr}, ff2_{nullptr};
  torch::nn::LayerNorm final_{nullptr};
};
TORCH_MODULE(TextEncoder);

torch::Tensor tokenize_batch(const Vocabulary& vocab, const std::vector<std::string>& prompts, std::size_t max_len);

}  // namespace sense::diffcore
