#pragma once

// Adversarial bridge training. One step draws a time index, simulates the
// bridge chain to x_{t_i} without a graph, predicts x_hat_1 and then runs
// three separate updates: discriminator, entropy critic, generator (with
// the projection heads).

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cunsb/bridge.hpp"
#include "cunsb/losses.hpp"
#include "cunsb/networks.hpp"
#include "cunsb/nn.hpp"

namespace cunsb::train {

struct TrainConfig {
  int epochs = 130;
  int decay_start_epoch = 80;
  int batch_size = 8;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  loss::LossWeights weights;
  bridge::BridgeConfig bridge;
  std::uint64_t seed = 0;

  net::GeneratorConfig generator;
  net::DiscriminatorConfig discriminator;
  net::CriticConfig critic;
  loss::SsimOptions ssim;
  int nce_dim = 256;
  int nce_patches = 256;
  double nce_temperature = 0.07;
  /// Identity branch evaluated at the step's t_i; otherwise at t_0.
  bool identity_at_step_time = true;

  int image_size = 256;
  int log_every = 1;          // steps between CSV log rows
  int sample_every = 500;     // steps between sample grids, 0 disables
  int checkpoint_every = 10;  // epochs between checkpoints, 0 disables

  /// Copies bridge.num_steps into the network configs.
  void sync();
  void validate() const;
};

/// Uniform index in {0, ..., N - 1}.
int select_time_step(Rng& rng, int num_steps);

/// Constant until decay_start_epoch, then linear to zero at `epochs`.
double lr_at(int epoch, const TrainConfig& config);

/// Shuffled index batches over n items, partial batch dropped.
std::vector<std::vector<int>> epoch_batches(int n, int batch_size, Rng& rng);

/// Intermediate state of one step, exposed so each phase can be inspected.
struct StepContext {
  int t_index = 0;
  double t = 0.0;
  ag::Var low;     // x_0 batch (constant)
  ag::Var high;    // x_1 batch (constant)
  ag::Var x_t;     // simulated bridge state (constant)
  ag::Var x1_hat;  // generator prediction with its graph
  std::vector<ag::Var> source_features;  // encoder maps of x_t from that pass
};

struct StepResult {
  loss::LossReport report;
  double discriminator_loss = 0.0;
  double critic_statistic = 0.0;
  int t_index = 0;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig config);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// Full step on unpaired batches of equal shape.
  StepResult train_step(const Tensor& low, const Tensor& high);

  // The phases of train_step, in order.
  StepContext prepare_step(const Tensor& low, const Tensor& high);
  double update_discriminator(const StepContext& ctx);
  double update_critic(const StepContext& ctx);
  loss::LossReport update_generator(const StepContext& ctx);

  /// Sets every optimizer's learning rate from lr_at(epoch).
  void set_epoch(int epoch);
  int epoch() const { return epoch_; }
  long long step() const { return step_; }

  const TrainConfig& config() const { return config_; }
  net::Generator& generator() { return generator_; }
  const net::Generator& generator() const { return generator_; }
  net::Discriminator& discriminator() { return discriminator_; }
  net::EntropyCritic& critic() { return critic_; }
  net::ProjectionHeadSet& heads() { return heads_; }
  Rng& rng() { return rng_; }

  nn::Adam& generator_optimizer() { return opt_g_; }
  nn::Adam& discriminator_optimizer() { return opt_d_; }
  nn::Adam& critic_optimizer() { return opt_e_; }

  /// Plain-tensor generator wrapper for bridge::infer / simulate_forward.
  bridge::GeneratorFn generator_fn() const;

  void save(const std::string& path) const;
  /// Restores a checkpoint. When `expected` is given its architecture
  /// fields must match the stored ones.
  static std::unique_ptr<Trainer> load(const std::string& path, const TrainConfig* expected = nullptr);

  void set_position(int epoch, long long step) {
    epoch_ = epoch;
    step_ = step;
  }

 private:
  TrainConfig config_;
  Rng init_rng_;
  net::Generator generator_;
  net::Discriminator discriminator_;
  net::EntropyCritic critic_;
  net::ProjectionHeadSet heads_;
  nn::Adam opt_g_;
  nn::Adam opt_d_;
  nn::Adam opt_e_;
  Rng rng_;
  int epoch_ = 0;
  long long step_ = 0;
};

/// Unpaired training data, each a (1, C, H, W) tensor of equal shape.
struct Dataset {
  std::vector<Tensor> low;
  std::vector<Tensor> high;
};

Dataset load_dataset(const std::string& low_dir, const std::string& high_dir, int image_size);

struct TrainOptions {
  std::string output_dir;      // log, checkpoints, samples; empty writes nothing
  int max_epochs = -1;         // stop after this many epochs of this call, -1 runs to config.epochs
};

/// Epoch loop from trainer.epoch() to config.epochs. Returns the reports.
std::vector<StepResult> run_training(Trainer& trainer, const Dataset& data, const TrainOptions& options);

std::string log_header();
std::string log_row(int epoch, long long step, double lr, const StepResult& r);

}  // namespace cunsb::train
