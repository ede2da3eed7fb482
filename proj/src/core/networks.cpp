#include "cunsb/networks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cunsb::net {

namespace {

constexpr double kSlope = 0.2;

void require_positive(int v, const char* name) {
  if (v < 1) throw std::invalid_argument(std::string(name) + " must be positive");
}

ag::Var lrelu(const ag::Var& x) { return ag::leaky_relu(x, kSlope); }

}  // namespace

std::string to_string(DscAxes axes) {
  switch (axes) {
    case DscAxes::kRow: return "row";
    case DscAxes::kColumn: return "column";
    case DscAxes::kBoth: return "both";
  }
  return "both";
}

DscAxes parse_dsc_axes(const std::string& text) {
  if (text == "row") return DscAxes::kRow;
  if (text == "column") return DscAxes::kColumn;
  if (text == "both") return DscAxes::kBoth;
  throw std::invalid_argument("dsc axes must be row, column or both, got '" + text + "'");
}

void GeneratorConfig::validate() const {
  require_positive(in_channels, "in_channels");
  require_positive(base_channels, "base_channels");
  require_positive(depth, "depth");
  require_positive(time_embed_dim, "time_embed_dim");
  require_positive(noise_dim, "noise_dim");
  require_positive(num_time_steps, "num_time_steps");
  if (num_bottleneck < 0) throw std::invalid_argument("num_bottleneck must be >= 0");
  if (time_embed_dim % 2 != 0) throw std::invalid_argument("time_embed_dim must be even");
  if (dsc_kernel_size < 1 || dsc_kernel_size % 2 == 0) throw std::invalid_argument("dsc_kernel_size must be odd");
  if (2 + 2 * depth + num_bottleneck < kNumNceLayers) {
    throw std::invalid_argument("generator exposes " + std::to_string(2 + 2 * depth + num_bottleneck) +
                                " feature maps; PatchNCE needs 9 (raise depth or num_bottleneck)");
  }
}

void DiscriminatorConfig::validate() const {
  require_positive(in_channels, "disc in_channels");
  require_positive(base_channels, "disc base_channels");
  require_positive(num_layers, "disc num_layers");
  require_positive(time_embed_dim, "disc time_embed_dim");
  require_positive(num_time_steps, "disc num_time_steps");
  if (time_embed_dim % 2 != 0) throw std::invalid_argument("disc time_embed_dim must be even");
}

void CriticConfig::validate() const {
  require_positive(in_channels, "critic in_channels");
  require_positive(base_channels, "critic base_channels");
  require_positive(num_layers, "critic num_layers");
}

// ---- DSC block ---------------------------------------------------------------

DscBlock::DscBlock(int in_channels, int out_channels, int kernel_size, DscAxes axes, Rng& rng) : axes_(axes) {
  const double w_std = std::sqrt(2.0 / static_cast<double>(in_channels * kernel_size));
  if (axes != DscAxes::kColumn) {
    row_offsets_ = nn::Conv2d(in_channels, kernel_size, 3, 1, 1, rng, 0.02);
    row_weight_ = nn::make_weight(Shape{out_channels, in_channels, kernel_size, 1}, rng, w_std);
  }
  if (axes != DscAxes::kRow) {
    col_offsets_ = nn::Conv2d(in_channels, kernel_size, 3, 1, 1, rng, 0.02);
    col_weight_ = nn::make_weight(Shape{out_channels, in_channels, kernel_size, 1}, rng, w_std);
  }
  bias_ = nn::make_zeros(Shape{1, out_channels, 1, 1});
}

ag::Var DscBlock::operator()(const ag::Var& x) const {
  ag::Var out;
  if (axes_ != DscAxes::kColumn) {
    out = snake::snake_conv2d(x, ag::tanh(row_offsets_(x)), row_weight_, bias_, snake::SnakeAxis::kRow);
  }
  if (axes_ != DscAxes::kRow) {
    // the bias is added once
    ag::Var b = out.defined() ? ag::Var() : bias_;
    ag::Var col = snake::snake_conv2d(x, ag::tanh(col_offsets_(x)), col_weight_, b, snake::SnakeAxis::kColumn);
    out = out.defined() ? ag::add(out, col) : col;
  }
  return out;
}

void DscBlock::collect(const std::string& prefix, nn::ParamList& out) {
  if (axes_ != DscAxes::kColumn) {
    row_offsets_.collect(prefix + ".row_offsets", out);
    out.push_back({prefix + ".row_weight", &row_weight_});
  }
  if (axes_ != DscAxes::kRow) {
    col_offsets_.collect(prefix + ".col_offsets", out);
    out.push_back({prefix + ".col_weight", &col_weight_});
  }
  out.push_back({prefix + ".bias", &bias_});
}

// ---- generator ---------------------------------------------------------------

Generator::Generator(const GeneratorConfig& config, Rng& init_rng) : config_(config), use_skips_(config.use_skips) {
  config.validate();
  const int base = config.base_channels;
  for (int s = 0; s < config.depth; ++s) stage_channels_.push_back(base << s);
  const int bott = stage_channels_.back();
  const int k = config.dsc_kernel_size;

  in_conv_ = nn::Conv2d(config.in_channels, base, 3, 1, 1, init_rng);
  tap_channels_.push_back(config.in_channels);
  tap_channels_.push_back(base);
  int prev = base;
  for (int s = 0; s < config.depth; ++s) {
    const int ch = stage_channels_[static_cast<std::size_t>(s)];
    encoder_.push_back(Stage{nn::Conv2d(prev, ch, 3, 1, 1, init_rng),
                             std::make_unique<DscBlock>(ch, ch, k, config.dsc_axes, init_rng)});
    tap_channels_.push_back(ch);
    tap_channels_.push_back(ch);
    prev = ch;
  }
  time_embed_ = nn::TimeEmbedding(config.time_embed_dim, config.time_embed_dim, init_rng);
  for (int b = 0; b < config.num_bottleneck; ++b) {
    bottleneck_.push_back(Bottleneck{nn::Conv2d(bott + config.noise_dim, bott, 3, 1, 1, init_rng),
                                     nn::Conv2d(bott, bott, 3, 1, 1, init_rng),
                                     nn::Linear(config.time_embed_dim, bott, init_rng)});
    tap_channels_.push_back(bott);
  }
  prev = bott;
  for (int s = config.depth - 1; s >= 0; --s) {
    const int skip = stage_channels_[static_cast<std::size_t>(s)];
    const int out = s == 0 ? base : stage_channels_[static_cast<std::size_t>(s - 1)];
    decoder_.push_back(Stage{nn::Conv2d(prev + skip, out, 3, 1, 1, init_rng),
                             std::make_unique<DscBlock>(out, out, k, config.dsc_axes, init_rng)});
    prev = out;
  }
  out_conv_ = nn::Conv2d(base, config.in_channels, 3, 1, 1, init_rng);

  // Nine taps spread evenly over the available encoder/bottleneck maps.
  const int available = static_cast<int>(tap_channels_.size());
  for (int i = 0; i < kNumNceLayers; ++i) {
    nce_taps_[static_cast<std::size_t>(i)] =
        static_cast<int>(std::lround(static_cast<double>(i) * (available - 1) / (kNumNceLayers - 1)));
  }
}

void Generator::check_input(const Shape& s, int t_index) const {
  if (t_index < 0 || t_index >= config_.num_time_steps) {
    throw std::out_of_range("generator time index " + std::to_string(t_index) + " outside [0, " +
                            std::to_string(config_.num_time_steps - 1) + "]");
  }
  if (s.c != config_.in_channels) {
    throw std::invalid_argument("generator expects " + std::to_string(config_.in_channels) + " channels, got " +
                                s.str());
  }
  const int m = config_.spatial_multiple();
  if (s.h % m != 0 || s.w % m != 0 || s.h < m || s.w < m) {
    throw std::invalid_argument("generator input " + s.str() + " must have sides divisible by " + std::to_string(m));
  }
  if (s.n < 1) throw std::invalid_argument("generator input batch is empty");
}

ag::Var Generator::run(const ag::Var& x, int t_index, Rng& noise_rng, std::vector<ag::Var>* taps,
                       bool encode_only) const {
  check_input(x.shape(), t_index);
  const int batch = x.shape().n;
  auto tap = [&](const ag::Var& v) {
    if (taps) taps->push_back(v);
  };

  tap(x);
  ag::Var h = lrelu(in_conv_(x));
  tap(h);
  std::vector<ag::Var> skips;
  for (const Stage& st : encoder_) {
    ag::Var a = lrelu(st.conv(h));
    tap(a);
    ag::Var b = lrelu((*st.dsc)(a));
    tap(b);
    skips.push_back(b);
    h = ag::avg_pool2(b);
  }

  // One noise vector per sample, broadcast over space and stacked as channels.
  Tensor z = Tensor::randn(Shape{batch, config_.noise_dim, 1, 1}, noise_rng);
  Tensor zmap(Shape{batch, config_.noise_dim, h.shape().h, h.shape().w});
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < config_.noise_dim; ++c) {
      double* p = zmap.data() + zmap.offset(n, c, 0, 0);
      std::fill(p, p + zmap.shape().plane(), z.at(n, c, 0, 0));
    }
  const ag::Var noise = ag::constant(std::move(zmap));
  const ag::Var temb = lrelu(time_embed_(t_index, batch));
  for (const Bottleneck& bn : bottleneck_) {
    const std::array<ag::Var, 2> parts{h, noise};
    ag::Var a = bn.conv1(ag::concat_channels(parts));
    a = lrelu(ag::add_channel(a, bn.time_proj(temb)));
    h = ag::add(h, bn.conv2(a));
    tap(h);
  }
  if (encode_only) return h;

  for (std::size_t d = 0; d < decoder_.size(); ++d) {
    const Stage& st = decoder_[d];
    const ag::Var& skip = skips[skips.size() - 1 - d];
    ag::Var up = ag::upsample_nearest2(h);
    const ag::Var skip_in = use_skips_ ? skip : ag::constant(Tensor(skip.shape()));
    const std::array<ag::Var, 2> parts{up, skip_in};
    ag::Var a = lrelu(st.conv(ag::concat_channels(parts)));
    h = lrelu((*st.dsc)(a));
  }
  return ag::tanh(out_conv_(h));
}

ag::Var Generator::forward(const ag::Var& x, int t_index, Rng& noise_rng) const {
  return run(x, t_index, noise_rng, nullptr, false);
}

ag::Var Generator::forward(const ag::Var& x, int t_index, Rng& noise_rng, std::vector<ag::Var>& nce_features) const {
  std::vector<ag::Var> all;
  ag::Var out = run(x, t_index, noise_rng, &all, false);
  nce_features.clear();
  for (int idx : nce_taps_) nce_features.push_back(all[static_cast<std::size_t>(idx)]);
  return out;
}

std::vector<ag::Var> Generator::features(const ag::Var& x, int t_index, Rng& noise_rng) const {
  std::vector<ag::Var> all;
  run(x, t_index, noise_rng, &all, true);
  std::vector<ag::Var> picked;
  picked.reserve(kNumNceLayers);
  for (int idx : nce_taps_) picked.push_back(all[static_cast<std::size_t>(idx)]);
  return picked;
}

std::vector<int> Generator::feature_channels() const {
  std::vector<int> ch;
  for (int idx : nce_taps_) ch.push_back(tap_channels_[static_cast<std::size_t>(idx)]);
  return ch;
}

Tensor Generator::predict(const Tensor& x, int t_index, Rng& noise_rng) const {
  ag::NoGradGuard guard;
  return forward(ag::constant(x), t_index, noise_rng).value();
}

nn::ParamList Generator::parameters() {
  nn::ParamList out;
  in_conv_.collect("G.in_conv", out);
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    const std::string p = "G.enc" + std::to_string(s);
    encoder_[s].conv.collect(p + ".conv", out);
    encoder_[s].dsc->collect(p + ".dsc", out);
  }
  time_embed_.collect("G.time", out);
  for (std::size_t b = 0; b < bottleneck_.size(); ++b) {
    const std::string p = "G.bott" + std::to_string(b);
    bottleneck_[b].conv1.collect(p + ".conv1", out);
    bottleneck_[b].conv2.collect(p + ".conv2", out);
    bottleneck_[b].time_proj.collect(p + ".time_proj", out);
  }
  for (std::size_t d = 0; d < decoder_.size(); ++d) {
    const std::string p = "G.dec" + std::to_string(d);
    decoder_[d].conv.collect(p + ".conv", out);
    decoder_[d].dsc->collect(p + ".dsc", out);
  }
  out_conv_.collect("G.out_conv", out);
  return out;
}

// ---- discriminator -------------------------------------------------------------

Discriminator::Discriminator(const DiscriminatorConfig& config, Rng& init_rng) : config_(config) {
  config.validate();
  int prev = config.in_channels;
  int ch = config.base_channels;
  for (int l = 0; l < config.num_layers; ++l) {
    layers_.emplace_back(prev, ch, 4, 2, 1, init_rng);
    prev = ch;
    ch = std::min(ch * 2, config.base_channels * 8);
  }
  time_embed_ = nn::TimeEmbedding(config.time_embed_dim, config.time_embed_dim, init_rng);
  // Time enters after the second strided layer (or the only one).
  const int cond_layer = std::min(1, config.num_layers - 1);
  time_proj_ = nn::Linear(config.time_embed_dim, layers_[static_cast<std::size_t>(cond_layer)].out_channels(), init_rng);
  head_ = nn::Conv2d(prev, 1, 4, 1, 1, init_rng, 0.02);
}

ag::Var Discriminator::forward(const ag::Var& x, int t_index) const {
  if (t_index < 0 || t_index >= config_.num_time_steps) {
    throw std::out_of_range("discriminator time index " + std::to_string(t_index) + " out of range");
  }
  if (x.shape().c != config_.in_channels) throw std::invalid_argument("discriminator channel mismatch");
  const int cond_layer = std::min(1, config_.num_layers - 1);
  ag::Var h = x;
  for (int l = 0; l < config_.num_layers; ++l) {
    h = layers_[static_cast<std::size_t>(l)](h);
    if (l == cond_layer) h = ag::add_channel(h, time_proj_(lrelu(time_embed_(t_index, x.shape().n))));
    h = lrelu(h);
  }
  if (h.shape().h < 2 || h.shape().w < 2) {
    throw std::invalid_argument("discriminator input " + x.shape().str() + " too small for " +
                                std::to_string(config_.num_layers) + " strided layers");
  }
  return head_(h);
}

nn::ParamList Discriminator::parameters() {
  nn::ParamList out;
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect("D.layer" + std::to_string(l), out);
  time_embed_.collect("D.time", out);
  time_proj_.collect("D.time_proj", out);
  head_.collect("D.head", out);
  return out;
}

// ---- entropy critic ------------------------------------------------------------

EntropyCritic::EntropyCritic(const CriticConfig& config, Rng& init_rng) : config_(config) {
  config.validate();
  int prev = 2 * config.in_channels;
  int ch = config.base_channels;
  for (int l = 0; l < config.num_layers; ++l) {
    layers_.emplace_back(prev, ch, 4, 2, 1, init_rng);
    prev = ch;
    ch = std::min(ch * 2, config.base_channels * 8);
  }
  head_ = nn::Conv2d(prev, 1, 3, 1, 1, init_rng, 0.02);
}

ag::Var EntropyCritic::score(const ag::Var& x_a, const ag::Var& x_b) const {
  if (!(x_a.shape() == x_b.shape())) throw std::invalid_argument("critic pair shape mismatch");
  const std::array<ag::Var, 2> parts{x_a, x_b};
  ag::Var h = ag::concat_channels(parts);
  for (const nn::Conv2d& layer : layers_) h = lrelu(layer(h));
  return ag::mean_per_sample(head_(h));
}

nn::ParamList EntropyCritic::parameters() {
  nn::ParamList out;
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect("E.layer" + std::to_string(l), out);
  head_.collect("E.head", out);
  return out;
}

ag::Var mi_estimator_forward(const EntropyCritic& critic, const ag::Var& x_a, const ag::Var& x_b) {
  const int n = x_a.shape().n;
  if (n < 2) throw std::invalid_argument("mutual-information estimate needs a batch of at least 2");
  if (!(x_a.shape() == x_b.shape())) throw std::invalid_argument("mutual-information pair shape mismatch");
  const ag::Var joint = critic.score(x_a, x_b);
  std::vector<int> ia;
  std::vector<int> ib;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) {
        ia.push_back(i);
        ib.push_back(j);
      }
  const ag::Var marginal = critic.score(ag::gather_batch(x_a, ia), ag::gather_batch(x_b, ib));
  return ag::sub(ag::mean(joint), ag::log_mean_exp(marginal));
}

// ---- projection heads ----------------------------------------------------------

ProjectionHeadSet::ProjectionHeadSet(const std::vector<int>& in_channels, int embed_dim, Rng& init_rng)
    : embed_dim_(embed_dim) {
  if (static_cast<int>(in_channels.size()) != kNumNceLayers) {
    throw std::invalid_argument("projection heads need exactly nine input widths");
  }
  require_positive(embed_dim, "nce embed_dim");
  for (int c : in_channels) heads_.push_back(Head{nn::Linear(c, embed_dim, init_rng), nn::Linear(embed_dim, embed_dim, init_rng)});
}

ag::Var ProjectionHeadSet::project(int layer, const ag::Var& rows) const {
  if (layer < 0 || layer >= size()) throw std::out_of_range("projection head index out of range");
  const Head& h = heads_[static_cast<std::size_t>(layer)];
  return h.fc2(ag::relu(h.fc1(rows)));
}

nn::ParamList ProjectionHeadSet::parameters() {
  nn::ParamList out;
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    heads_[i].fc1.collect("F.head" + std::to_string(i) + ".fc1", out);
    heads_[i].fc2.collect("F.head" + std::to_string(i) + ".fc2", out);
  }
  return out;
}

}  // namespace cunsb::net
