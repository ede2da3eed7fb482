#pragma once

// Trainable networks: the time-conditioned snake-convolution U-Net
// generator, the time-conditioned Markovian (patch) discriminator, the
// Donsker-Varadhan entropy critic and the PatchNCE projection heads.
//
// Modules hand out raw pointers to their parameters (nn::ParamList), so
// they are pinned in memory: not copyable and not movable.

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "cunsb/autograd.hpp"
#include "cunsb/nn.hpp"
#include "cunsb/snake_conv.hpp"

namespace cunsb::net {

inline constexpr int kNumNceLayers = 9;

enum class DscAxes { kRow, kColumn, kBoth };

std::string to_string(DscAxes axes);
DscAxes parse_dsc_axes(const std::string& text);

struct GeneratorConfig {
  int in_channels = 3;
  int base_channels = 64;
  int depth = 3;
  int num_bottleneck = 2;
  int time_embed_dim = 64;
  int noise_dim = 8;
  int dsc_kernel_size = 9;
  DscAxes dsc_axes = DscAxes::kBoth;
  bool use_skips = true;
  int num_time_steps = 5;

  void validate() const;
  /// Input height and width must be multiples of this.
  int spatial_multiple() const { return 1 << depth; }
};

struct DiscriminatorConfig {
  int in_channels = 3;
  int base_channels = 64;
  int num_layers = 3;
  int time_embed_dim = 64;
  int num_time_steps = 5;

  void validate() const;
};

struct CriticConfig {
  int in_channels = 3;  // per image; the critic sees a channel-stacked pair
  int base_channels = 64;
  int num_layers = 3;

  void validate() const;
};

/// Offset predictor plus one snake convolution per enabled axis; the
/// per-axis outputs are summed.
class DscBlock {
 public:
  DscBlock(int in_channels, int out_channels, int kernel_size, DscAxes axes, Rng& rng);
  DscBlock(const DscBlock&) = delete;
  DscBlock& operator=(const DscBlock&) = delete;

  ag::Var operator()(const ag::Var& x) const;
  void collect(const std::string& prefix, nn::ParamList& out);

 private:
  DscAxes axes_;
  nn::Conv2d row_offsets_;
  nn::Conv2d col_offsets_;
  ag::Var row_weight_;
  ag::Var col_weight_;
  ag::Var bias_;
};

class Generator {
 public:
  Generator(const GeneratorConfig& config, Rng& init_rng);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  /// x (N, C, H, W) in [-1, 1] at time index t -> x_hat_1 in [-1, 1].
  ag::Var forward(const ag::Var& x, int t_index, Rng& noise_rng) const;
  /// Same, also returning the nine PatchNCE feature maps of this pass.
  ag::Var forward(const ag::Var& x, int t_index, Rng& noise_rng, std::vector<ag::Var>& nce_features) const;
  /// The nine PatchNCE feature maps (encoder and bottleneck only).
  std::vector<ag::Var> features(const ag::Var& x, int t_index, Rng& noise_rng) const;
  std::vector<int> feature_channels() const;

  /// Plain-tensor forward without building a graph.
  Tensor predict(const Tensor& x, int t_index, Rng& noise_rng) const;

  nn::ParamList parameters();
  const GeneratorConfig& config() const { return config_; }
  bool skips_enabled() const { return use_skips_; }
  void set_skips_enabled(bool on) { use_skips_ = on; }

 private:
  struct Stage {
    nn::Conv2d conv;
    std::unique_ptr<DscBlock> dsc;
  };
  struct Bottleneck {
    nn::Conv2d conv1;
    nn::Conv2d conv2;
    nn::Linear time_proj;
  };

  ag::Var run(const ag::Var& x, int t_index, Rng& noise_rng, std::vector<ag::Var>* taps, bool encode_only) const;
  void check_input(const Shape& s, int t_index) const;

  GeneratorConfig config_;
  bool use_skips_;
  std::vector<int> stage_channels_;
  nn::Conv2d in_conv_;
  std::vector<Stage> encoder_;
  nn::TimeEmbedding time_embed_;
  std::vector<Bottleneck> bottleneck_;
  std::vector<Stage> decoder_;
  nn::Conv2d out_conv_;
  std::array<int, kNumNceLayers> nce_taps_{};
  std::vector<int> tap_channels_;
};

class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, Rng& init_rng);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  /// Patch logit map (N, 1, H', W') with H' < H and W' < W.
  ag::Var forward(const ag::Var& x, int t_index) const;
  nn::ParamList parameters();
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  std::vector<nn::Conv2d> layers_;
  nn::TimeEmbedding time_embed_;
  nn::Linear time_proj_;
  nn::Conv2d head_;
};

class EntropyCritic {
 public:
  EntropyCritic(const CriticConfig& config, Rng& init_rng);
  EntropyCritic(const EntropyCritic&) = delete;
  EntropyCritic& operator=(const EntropyCritic&) = delete;

  /// Scalar score T(x_a, x_b) per pair, shape (N, 1, 1, 1).
  ag::Var score(const ag::Var& x_a, const ag::Var& x_b) const;
  nn::ParamList parameters();
  const CriticConfig& config() const { return config_; }

 private:
  CriticConfig config_;
  std::vector<nn::Conv2d> layers_;
  nn::Conv2d head_;
};

/// Donsker-Varadhan statistic: mean T over the joint pairs (a_i, b_i)
/// minus log mean exp T over every mismatched pair (a_i, b_j), i != j.
ag::Var mi_estimator_forward(const EntropyCritic& critic, const ag::Var& x_a, const ag::Var& x_b);

/// Nine two-layer MLPs, one per PatchNCE feature map.
class ProjectionHeadSet {
 public:
  ProjectionHeadSet(const std::vector<int>& in_channels, int embed_dim, Rng& init_rng);
  ProjectionHeadSet(const ProjectionHeadSet&) = delete;
  ProjectionHeadSet& operator=(const ProjectionHeadSet&) = delete;

  /// rows (R, C_layer, 1, 1) -> (R, embed_dim, 1, 1), not normalised.
  ag::Var project(int layer, const ag::Var& rows) const;
  int size() const { return static_cast<int>(heads_.size()); }
  int embed_dim() const { return embed_dim_; }
  nn::ParamList parameters();

 private:
  struct Head {
    nn::Linear fc1;
    nn::Linear fc2;
  };
  std::vector<Head> heads_;
  int embed_dim_;
};

}  // namespace cunsb::net
