#include "sense/diffcore/text.hpp"

#include <cctype>

#include "sense/error.hpp"

namespace sense::diffcore {

namespace F = torch::nn::functional;

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw Error(ErrorKind::invalid_argument, "vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
  if (tokens_.size() < 4) throw Error(ErrorKind::invalid_argument, "vocabulary: missing special tokens");
}

Vocabulary Vocabulary::build_default(const std::vector<std::string>& cities) {
  std::vector<std::string> tokens{"<pad>", "<unk>", "<bos>", "<eos>"};
  auto add = [&](const std::string& t) {
    if (std::find(tokens.begin(), tokens.end(), t) == tokens.end()) tokens.push_back(t);
  };
  for (const char* w : {"Satellite", "imagery", "of", "The", "Building", "Coverage", "Ratio", "in", "this", "area",
                        "is", "Volume", "Density", "cubic", "meters", "per", "square", "meter", "Road", "kilometers",
                        "kilometer", ".", "%", "-"}) {
    add(w);
  }
  for (char d = '0'; d <= '9'; ++d) add(std::string(1, d));
  for (const auto& city : cities) {
    for (const auto& w : split(city)) add(w);
  }
  return Vocabulary(std::move(tokens));
}

std::vector<std::string> Vocabulary::split(const std::string& prompt) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(word);
    word.clear();
  };
  for (char c : prompt) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '%' || c == ',') {
      flush();
      out.emplace_back(1, c);
    } else {
      word.push_back(c);
    }
  }
  flush();
  return out;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::int64_t> Vocabulary::encode(const std::string& prompt, std::size_t max_len) const {
  std::vector<std::int64_t> ids{kBos};
  for (const auto& t : split(prompt)) ids.push_back(id(t));
  ids.push_back(kEos);
  if (ids.size() > max_len) {
    ids.resize(max_len);
    ids.back() = kEos;
  }
  ids.resize(max_len, kPad);
  return ids;
}

torch::Tensor tokenize_batch(const Vocabulary& vocab, const std::vector<std::string>& prompts, std::size_t max_len) {
  std::vector<std::int64_t> flat;
  flat.reserve(prompts.size() * max_len);
  for (const auto& p : prompts) {
    auto ids = vocab.encode(p, max_len);
    flat.insert(flat.end(), ids.begin(), ids.end());
  }
  return torch::tensor(flat, torch::kInt64).view({static_cast<long>(prompts.size()), static_cast<long>(max_len)});
}

TextEncoderImpl::TextEncoderImpl(const TextEncoderConfig& config) : config_(config) {
  embed_ = register_module("embed", torch::nn::Embedding(config.vocab_size, config.dim));
  position_ = register_parameter("position", torch::randn({config.max_len, config.dim}) * 0.02);
  ln_a_ = register_module("ln_a", torch::nn::ModuleList());
  attn_ = register_module("attn", torch::nn::ModuleList());
  ln_b_ = register_module("ln_b", torch::nn::ModuleList());
  ff1_ = register_module("ff1", torch::nn::ModuleList());
  ff2_ = register_module("ff2", torch::nn::ModuleList());
  for (int i = 0; i < config.layers; ++i) {
    ln_a_->push_back(torch::nn::LayerNorm(torch::nn::LayerNormOptions({config.dim})));
    attn_->push_back(Attention(config.dim, config.dim, config.heads));
    ln_b_->push_back(torch::nn::LayerNorm(torch::nn::LayerNormOptions({config.dim})));
    ff1_->push_back(torch::nn::Linear(config.dim, config.dim * 2));
    ff2_->push_back(torch::nn::Linear(config.dim * 2, config.dim));
  }
  final_ = register_module("final", torch::nn::LayerNorm(torch::nn::LayerNormOptions({config.dim})));
}

TextEmbedding TextEncoderImpl::forward(const torch::Tensor& ids) {
  if (ids.dim() != 2 || ids.size(1) > config_.max_len) {
    throw Error(ErrorKind::shape_mismatch, "text encoder: expected [B, L<=max_len] token ids");
  }
  auto pad = ids.eq(Vocabulary::kPad);
  auto h = embed_->forward(ids) + position_.slice(0, 0, ids.size(1)).unsqueeze(0);
  for (int i = 0; i < config_.layers; ++i) {
    auto n = ln_a_[static_cast<std::size_t>(i)]->as<torch::nn::LayerNorm>()->forward(h);
    h = h + attn_[static_cast<std::size_t>(i)]->as<Attention>()->forward(n, n, pad);
    auto m = ln_b_[static_cast<std::size_t>(i)]->as<torch::nn::LayerNorm>()->forward(h);
    h = h + ff2_[static_cast<std::size_t>(i)]->as<torch::nn::Linear>()->forward(
                F::gelu(ff1_[static_cast<std::size_t>(i)]->as<torch::nn::Linear>()->forward(m)));
  }
  return {final_->forward(h), pad};
}

}  // namespace sense::diffcore
