#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "sense/latentdecode/decode.hpp"
#include "sense/tilestore/tile.hpp"

namespace sense::synthlab {

using latentdecode::DecoderHead;
using latentdecode::HeadCheckpointMeta;

struct Provenance {
  std::string generator_digest;  // backbone
  std::string control_digest;
  std::string height_head_digest;
  std::string energy_head_digest;
  std::uint64_t seed = 0;
  std::string source_tile_id;
  int t_star = 0;
};

// Generated image with decoder class maps taken from the same sampling
// trajectory. tile.height / tile.energy hold the per-class representative
// values (meters / log1p kBtu) so the tile can be stored like a real one.
struct SyntheticTile {
  tiles::Tile tile;
  tiles::ClassMap height_classes;
  tiles::ClassMap energy_classes;
  Provenance provenance;

  // SHA-256 over the image bytes, class maps and provenance.
  std::string digest() const;
};

struct GenerationRequest {
  Grid<std::uint8_t> constraints;  // H x W x 3
  std::string city;
  tiles::DensityMetrics density;
  std::uint64_t seed = 0;
  std::string source_tile_id;
};

// Images and decoder labels from one controlled sampling run per request.
// Features are captured at t_star on the way down and every head in
// `heads` is applied to that bundle.
struct AnnotatedBatch {
  torch::Tensor images;               // [N, 3, H, W] in [0, 1]
  std::vector<torch::Tensor> labels;  // per head, [N, H, W] int64
};
AnnotatedBatch sample_annotated(diffcore::Backbone& backbone, latentdecode::ControlBranch& branch,
                                std::vector<DecoderHead*> heads, int t_star,
                                const std::vector<GenerationRequest>& requests, long chunk = 16);

// Backbone, control branch and both decoder heads, checked for mutual
// compatibility on construction. Calls are serialised internally so one
// instance can be shared across threads.
class AnnotatingGenerator {
 public:
  AnnotatingGenerator(std::shared_ptr<diffcore::Backbone> backbone, latentdecode::ControlBranch branch,
                      DecoderHead height_head, HeadCheckpointMeta height_meta, DecoderHead energy_head,
                      HeadCheckpointMeta energy_meta);

  // Loads checkpoints written by Backbone::save, save_control and save_head;
  // any digest mismatch is refused.
  static std::shared_ptr<AnnotatingGenerator> load(const std::filesystem::path& backbone, const std::filesystem::path& control,
                                  const std::filesystem::path& height_head, const std::filesystem::path& energy_head);

  // One sampling run per request; requests are batched `chunk` at a time.
  // Each result depends only on its own request.
  std::vector<SyntheticTile> generate(const std::vector<GenerationRequest>& requests, long chunk = 16);
  SyntheticTile generate_one(const GenerationRequest& request);

  int t_star() const { return height_meta_.t_star; }
  const diffcore::Backbone& backbone() const { return *backbone_; }
  const HeadCheckpointMeta& height_meta() const { return height_meta_; }
  const HeadCheckpointMeta& energy_meta() const { return energy_meta_; }

 private:
  std::shared_ptr<diffcore::Backbone> backbone_;
  latentdecode::ControlBranch branch_;
  DecoderHead height_head_, energy_head_;
  HeadCheckpointMeta height_meta_, energy_meta_;
  std::string backbone_digest_, height_digest_, energy_digest_, control_digest_;
  std::mutex mutex_;
};

// Fraction of annotated pixels per class.
std::vector<double> class_marginals(const std::vector<tiles::ClassMap>& maps, int n_classes);
std::vector<double> class_marginals(const torch::Tensor& labels, const torch::Tensor& valid, int n_classes);
// Largest absolute per-class difference, in percentage points.
double max_marginal_gap(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace sense::synthlab
