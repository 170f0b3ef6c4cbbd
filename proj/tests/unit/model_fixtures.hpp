#pragma once

#include "sense/diffcore/backbone.hpp"

namespace sense::testing {

// A deliberately small backbone so model tests stay fast.
inline diffcore::BackboneConfig tiny_backbone_config() {
  diffcore::BackboneConfig c;
  c.image_size = 32;
  c.T = 40;
  c.max_tokens = 64;
  c.vae.width = 16;
  c.vae.blocks = 1;
  c.text.dim = 32;
  c.text.heads = 2;
  c.unet.width = 16;
  c.unet.deep_width = 32;
  c.unet.heads = 2;
  c.unet.time_dim = 32;
  return c;
}

inline const char* kPrompt =
    "Satellite imagery of Boston. The Building Coverage Ratio in this area is 12.50 %. The Building Volume "
    "Density is 2.10 cubic meters per square meter. The Road Density is 9.75 kilometers per square kilometer.";

}  // namespace sense::testing
