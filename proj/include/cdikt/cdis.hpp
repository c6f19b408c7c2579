#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdikt/nn.hpp"
#include "cdikt/tensor.hpp"

namespace cdikt {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class View { kDrone, kSatellite };

char view_tag(View view);
View parse_view(char tag);

struct LossWeights {
  double mse = 0.6;
  double ce = 0.1;
  double infonce = 1.0;
};

struct CdisConfig {
  std::size_t input_size = 96;
  // Output width of each stride-2 backbone stage; the last one is C.
  std::vector<std::size_t> widths{16, 24, 32};
  // Residual depthwise/pointwise blocks after each downsampling layer.
  std::size_t blocks_per_stage = 1;
  std::size_t cwr_expansion = 2;
  std::size_t se_ratio = 4;
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;

  std::size_t channels() const { return widths.back(); }
  std::size_t feature_size() const;
  void validate() const;
};

// Per-image activations consumed by the multi-level loss.
struct CdisOutputs {
  Tensor sifl_out;  // [C, H*W]
  Tensor pooled;    // [C], normalized global average of the backbone map
  Tensor siel_h;    // [C,H,W]
  Tensor siel_w;    // [C,H,W]
  std::vector<Tensor> class_logits;  // pooled, siel_h and siel_w branches, each [num_classes]
};

struct SielOutputs {
  Tensor siel_h;
  Tensor siel_w;
  Tensor attention;  // [C,H], shared by both paths
};

// Cross-domain invariance network: backbone stand-in, structural block,
// spatial module and per-branch classifiers.
class CdisNet {
 public:
  explicit CdisNet(CdisConfig config);

  const CdisConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  Tensor backbone(const Tensor& image) const;
  // Channel-normalized global average of a backbone map, [C].
  Tensor pooled_descriptor(const Tensor& feature_map) const;
  Tensor sifl_stage1(const Tensor& seq) const;
  Tensor sifl_stage2(const Tensor& seq) const;
  // Channel weights of the squeeze-and-excitation path for a [C,L] input.
  Tensor se_weights(const Tensor& enhanced) const;
  SielOutputs siel(const Tensor& feature_map) const;
  std::vector<Tensor> classifier_head(const Tensor& pooled, const Tensor& siel_h,
                                      const Tensor& siel_w) const;

  CdisOutputs forward(const Tensor& image) const;
  // Unit-norm retrieval descriptor of one image (backbone only).
  Tensor embed(const Tensor& image) const;

 private:
  const Tensor& p(const std::string& name) const { return params_.get(name); }
  Tensor pointwise(const Tensor& x, const std::string& name) const;
  Tensor depthwise(const Tensor& x, const std::string& name, std::size_t stride) const;
  Tensor norm(const Tensor& x, const std::string& name) const;
  Tensor classifier_branch(const Tensor& feature, const std::string& name) const;

  CdisConfig config_;
  ParameterStore params_;
};

struct L1Terms {
  Tensor mse;
  Tensor ce;
  Tensor infonce;
  Tensor total;
};

// Symmetric InfoNCE between two row-aligned batches [B,C]; row i of `a`
// is the positive of row i of `b`, other rows are negatives.
Tensor info_nce(const Tensor& a, const Tensor& b, double temperature);

// Multi-level supervised loss over matched (drone, satellite) outputs.
L1Terms loss_l1(std::span<const CdisOutputs> drone, std::span<const CdisOutputs> satellite,
                std::span<const std::size_t> labels, const LossWeights& weights,
                double temperature);

Tensor weighted_l1(const Tensor& mse_term, const Tensor& ce_term, const Tensor& infonce_term,
                   const LossWeights& weights);

// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> xs);

}  // namespace cdikt
