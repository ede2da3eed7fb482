#include "cunsb/trainer.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cunsb/config.hpp"
#include "cunsb/error.hpp"
#include "cunsb/image_io.hpp"
#include "cunsb/text.hpp"

namespace cunsb::train {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "CUNSB-CKPT-v1";
constexpr const char* kMagicPrefix = "CUNSB-CKPT-v";
constexpr std::uint64_t kStreamSalt = 0x9E3779B97F4A7C15ULL;

TrainConfig checked(TrainConfig c) {
  c.sync();
  c.validate();
  return c;
}

nn::ParamList join(nn::ParamList a, const nn::ParamList& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

nn::AdamOptions adam_options(const TrainConfig& c) {
  nn::AdamOptions o;
  o.lr = c.learning_rate;
  o.beta1 = c.adam_beta1;
  o.beta2 = c.adam_beta2;
  return o;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("train config: " + what);
}

}  // namespace

void TrainConfig::sync() {
  generator.num_time_steps = bridge.num_steps;
  discriminator.num_time_steps = bridge.num_steps;
}

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be >= 1");
  require(decay_start_epoch >= 0 && decay_start_epoch < epochs, "decay_start_epoch must be in [0, epochs)");
  require(batch_size >= 2, "batch_size must be >= 2 (the entropy critic needs mismatched pairs)");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam betas must be in [0, 1)");
  weights.validate();
  bridge.validate();
  generator.validate();
  discriminator.validate();
  critic.validate();
  ssim.validate();
  require(generator.num_time_steps == bridge.num_steps && discriminator.num_time_steps == bridge.num_steps,
          "network time steps must equal num_steps");
  require(discriminator.in_channels == generator.in_channels && critic.in_channels == generator.in_channels,
          "channel counts must agree across networks");
  require(nce_dim >= 1 && nce_patches >= 1, "nce.dim and nce.patches must be >= 1");
  require(nce_temperature > 0.0, "nce.temperature must be positive");
  require(image_size >= 1 && image_size % generator.spatial_multiple() == 0,
          "image_size must be a positive multiple of 2^generator.depth");
  require(image_size >= (ssim.window << (ssim.scales - 1)), "image_size too small for the SSIM window and scales");
  require(log_every >= 1 && sample_every >= 0 && checkpoint_every >= 0, "intervals must be nonnegative (log_every >= 1)");
}

int select_time_step(Rng& rng, int num_steps) {
  if (num_steps < 1) throw std::invalid_argument("select_time_step: N must be >= 1");
  // Rejection sampling keeps the draw uniform and portable.
  const std::uint64_t n = static_cast<std::uint64_t>(num_steps);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return static_cast<int>(v % n);
}

double lr_at(int epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.epochs) + ")");
  }
  if (epoch < config.decay_start_epoch) return config.learning_rate;
  return config.learning_rate * static_cast<double>(config.epochs - epoch) /
         static_cast<double>(config.epochs - config.decay_start_epoch);
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, Rng& rng) {
  if (n < 0 || batch_size < 1) throw std::invalid_argument("epoch_batches: bad sizes");
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = select_time_step(rng, i + 1);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  std::vector<std::vector<int>> batches;
  for (int start = 0; start + batch_size <= n; start += batch_size) {
    batches.emplace_back(order.begin() + start, order.begin() + start + batch_size);
  }
  return batches;
}

Trainer::Trainer(TrainConfig config)
    : config_(checked(std::move(config))),
      init_rng_(config_.seed),
      generator_(config_.generator, init_rng_),
      discriminator_(config_.discriminator, init_rng_),
      critic_(config_.critic, init_rng_),
      heads_(generator_.feature_channels(), config_.nce_dim, init_rng_),
      opt_g_(join(generator_.parameters(), heads_.parameters()), adam_options(config_)),
      opt_d_(discriminator_.parameters(), adam_options(config_)),
      opt_e_(critic_.parameters(), adam_options(config_)),
      rng_(config_.seed ^ kStreamSalt) {
  set_epoch(0);
}

void Trainer::set_epoch(int epoch) {
  epoch_ = epoch;
  const double lr = lr_at(std::min(std::max(epoch, 0), config_.epochs - 1), config_);
  opt_g_.set_lr(lr);
  opt_d_.set_lr(lr);
  opt_e_.set_lr(lr);
}

bridge::GeneratorFn Trainer::generator_fn() const {
  return [this](const Tensor& x, int t_index, Rng& rng) { return generator_.predict(x, t_index, rng); };
}

StepContext Trainer::prepare_step(const Tensor& low, const Tensor& high) {
  if (low.empty() || high.empty()) throw std::invalid_argument("train_step: empty batch");
  if (!(low.shape() == high.shape())) {
    throw std::invalid_argument("train_step: batch shape mismatch " + low.shape().str() + " vs " + high.shape().str());
  }
  if (low.n() < 2) throw std::invalid_argument("train_step: batches need at least two images");
  StepContext ctx;
  ctx.t_index = select_time_step(rng_, config_.bridge.num_steps);
  ctx.t = bridge::TimeGrid(config_.bridge.num_steps).at(ctx.t_index);
  ctx.low = ag::constant(low);
  ctx.high = ag::constant(high);
  {
    ag::NoGradGuard no_grad;
    ctx.x_t = ag::constant(bridge::simulate_forward(low, generator_fn(), ctx.t_index, config_.bridge, rng_));
  }
  ctx.x1_hat = generator_.forward(ctx.x_t, ctx.t_index, rng_, ctx.source_features);
  return ctx;
}

double Trainer::update_discriminator(const StepContext& ctx) {
  opt_d_.zero_grad();
  const ag::Var real = discriminator_.forward(ctx.high, ctx.t_index);
  const ag::Var fake = discriminator_.forward(ag::detach(ctx.x1_hat), ctx.t_index);
  const ag::Var loss = loss::adversarial_loss(real, fake, loss::AdvRole::kDiscriminator);
  ag::backward(loss);
  opt_d_.step();
  opt_d_.zero_grad();
  return loss.value()[0];
}

double Trainer::update_critic(const StepContext& ctx) {
  opt_e_.zero_grad();
  const ag::Var mi = net::mi_estimator_forward(critic_, ctx.x_t, ag::detach(ctx.x1_hat));
  ag::backward(ag::scale(mi, -1.0));
  opt_e_.step();
  opt_e_.zero_grad();
  return mi.value()[0];
}

loss::LossReport Trainer::update_generator(const StepContext& ctx) {
  opt_g_.zero_grad();
  const int i = ctx.t_index;
  const int idt_index = config_.identity_at_step_time ? i : 0;

  const ag::Var adv =
      loss::adversarial_loss(ag::Var(), discriminator_.forward(ctx.x1_hat, i), loss::AdvRole::kGenerator);
  const ag::Var mi = net::mi_estimator_forward(critic_, ctx.x_t, ctx.x1_hat);
  const ag::Var transport = loss::sb_transport(ctx.x_t, ctx.x1_hat);
  const ag::Var sb = loss::sb_loss(ctx.x_t, ctx.x1_hat, ctx.t, config_.bridge.tau, mi);

  std::vector<ag::Var> src_idt;
  const ag::Var x1_idt = generator_.forward(ctx.high, idt_index, rng_, src_idt);
  const loss::SsimTerms ssim = loss::ssim_regularization(ctx.x_t, ctx.x1_hat, ctx.high, x1_idt, config_.ssim);

  // Source features come from the forward passes above; only the outputs
  // are re-encoded.
  const auto gen = generator_.features(ctx.x1_hat, i, rng_);
  const ag::Var nce_main =
      loss::patchnce_loss(ctx.source_features, gen, heads_, config_.nce_temperature, config_.nce_patches, rng_);
  const auto gen_idt = generator_.features(x1_idt, idt_index, rng_);
  const ag::Var nce_idt =
      loss::patchnce_loss(src_idt, gen_idt, heads_, config_.nce_temperature, config_.nce_patches, rng_);
  const ag::Var nce = ag::scale(ag::add(nce_main, nce_idt), 0.5);

  const loss::LossWeights& w = config_.weights;
  ag::Var total = ag::add(adv, ag::scale(sb, w.lambda_sb));
  total = ag::add(total, ag::scale(ssim.combined, w.lambda_s));
  total = ag::add(total, ag::scale(nce, w.lambda_p));
  ag::backward(total);
  opt_g_.step();
  opt_g_.zero_grad();
  // The generator loss also reached D and E; their grads are not used.
  opt_d_.zero_grad();
  opt_e_.zero_grad();

  loss::LossParts parts;
  parts.adv = adv.value()[0];
  parts.sb_transport = transport.value()[0];
  parts.sb_entropy = mi.value()[0];
  parts.ssim_gen = ssim.gen.value()[0];
  parts.ssim_idt = ssim.idt.value()[0];
  parts.patchnce = nce.value()[0];
  return loss::total_loss(parts, w, ctx.t, config_.bridge.tau);
}

StepResult Trainer::train_step(const Tensor& low, const Tensor& high) {
  StepResult r;
  const StepContext ctx = prepare_step(low, high);
  r.t_index = ctx.t_index;
  r.discriminator_loss = update_discriminator(ctx);
  r.critic_statistic = update_critic(ctx);
  r.report = update_generator(ctx);
  ++step_;
  return r;
}

// Checkpoint layout: magic line, "config <n>" + n key=value lines,
// "position <epoch> <step>", "rng <state>", then per group
// "params <group> <count>" entries of "<name> <numel>\n<raw doubles>\n"
// and "adam <group> <steps> <count>" with raw first then second moments.
// A final "end" line marks a complete file.

namespace {

struct Group {
  const char* name;
  nn::Adam* opt;
};

void write_raw(std::ostream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  std::string line() {
    const auto nl = data_.find('\n', pos_);
    if (nl == std::string::npos) corrupt("truncated");
    std::string l = data_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return l;
  }

  std::vector<std::string> fields(const std::string& tag, std::size_t count) {
    auto f = text::split_whitespace(line());
    if (f.empty() || f[0] != tag || f.size() != count) corrupt("expected '" + tag + "' record");
    return f;
  }

  void raw(Tensor& t) {
    const std::size_t bytes = t.size() * sizeof(double);
    if (data_.size() - pos_ < bytes + 1) corrupt("truncated");
    std::memcpy(t.data(), data_.data() + pos_, bytes);
    pos_ += bytes;
    if (data_[pos_] != '\n') corrupt("bad record terminator");
    ++pos_;
  }

  long long number(const std::string& s) {
    try {
      return text::parse_int(s, "checkpoint");
    } catch (const std::invalid_argument&) {
      corrupt("bad number '" + s + "'");
    }
  }

  [[noreturn]] void corrupt(const std::string& why) const {
    throw CheckpointError("corrupt checkpoint '" + path_ + "': " + why);
  }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void Trainer::save(const std::string& path) const {
  auto& self = const_cast<Trainer&>(*this);
  std::ostringstream out(std::ios::binary);
  out << kMagic << '\n';
  const config::KeyValues kv = config::train_key_values(config_);
  out << "config " << kv.size() << '\n';
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
  out << "position " << epoch_ << ' ' << step_ << '\n';
  out << "rng " << rng_ << '\n';
  const Group groups[] = {{"generator", &self.opt_g_}, {"discriminator", &self.opt_d_}, {"critic", &self.opt_e_}};
  for (const Group& g : groups) {
    const nn::ParamList& params = g.opt->params();
    out << "params " << g.name << ' ' << params.size() << '\n';
    for (const nn::NamedParam& p : params) {
      out << p.name << ' ' << p.var->value().size() << '\n';
      write_raw(out, p.var->value());
      out << '\n';
    }
    out << "adam " << g.name << ' ' << g.opt->step_count() << ' ' << params.size() << '\n';
    for (const Tensor& m : g.opt->first_moments()) write_raw(out, m);
    for (const Tensor& v : g.opt->second_moments()) write_raw(out, v);
    out << '\n';
  }
  out << "end\n";
  const std::string tmp = path + ".tmp";
  text::write_file(tmp, out.str());
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot write checkpoint '" + path + "': " + ec.message());
}

std::unique_ptr<Trainer> Trainer::load(const std::string& path, const TrainConfig* expected) {
  std::string data;
  try {
    data = text::read_file(path);
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
  Reader in(std::move(data), path);
  const auto nl_magic = in.line();
  if (nl_magic != kMagic) {
    if (nl_magic.rfind(kMagicPrefix, 0) == 0) {
      throw CheckpointError("checkpoint '" + path + "' has unsupported version '" + nl_magic + "' (expected " + kMagic + ")");
    }
    throw CheckpointError("'" + path + "' is not a checkpoint (missing " + std::string(kMagic) + " magic)");
  }
  const auto cfg_head = in.fields("config", 2);
  const long long n_keys = in.number(cfg_head[1]);
  config::KeyValues kv;
  for (long long i = 0; i < n_keys; ++i) {
    const std::string l = in.line();
    const auto eq = l.find('=');
    if (eq == std::string::npos) in.corrupt("bad config line");
    kv[l.substr(0, eq)] = l.substr(eq + 1);
  }
  config::FullConfig stored;
  try {
    stored = config::from_key_values(kv);
  } catch (const Error& e) {
    in.corrupt(std::string("bad stored config: ") + e.what());
  }
  if (expected) {
    TrainConfig want = *expected;
    want.sync();
    const config::KeyValues want_kv = config::train_key_values(want);
    const config::KeyValues have_kv = config::train_key_values(stored.train);
    for (const std::string& key : config::architecture_keys()) {
      if (want_kv.at(key) != have_kv.at(key)) {
        throw CheckpointError("checkpoint config mismatch: field '" + key + "' is " + have_kv.at(key) +
                              " in the checkpoint but " + want_kv.at(key) + " in the config");
      }
    }
  }
  std::unique_ptr<Trainer> t;
  try {
    t = std::make_unique<Trainer>(stored.train);
  } catch (const std::invalid_argument& e) {
    in.corrupt(std::string("invalid stored config: ") + e.what());
  }
  const auto pos = in.fields("position", 3);
  const int epoch = static_cast<int>(in.number(pos[1]));
  const long long step = in.number(pos[2]);
  {
    const std::string l = in.line();
    if (l.rfind("rng ", 0) != 0) in.corrupt("expected rng state");
    std::istringstream rs(l.substr(4));
    rs >> t->rng_;
    if (!rs) in.corrupt("bad rng state");
  }
  const Group groups[] = {{"generator", &t->opt_g_}, {"discriminator", &t->opt_d_}, {"critic", &t->opt_e_}};
  for (const Group& g : groups) {
    const nn::ParamList& params = g.opt->params();
    const auto head = in.fields("params", 3);
    if (head[1] != g.name || in.number(head[2]) != static_cast<long long>(params.size())) {
      in.corrupt(std::string("parameter group '") + g.name + "' does not match the architecture");
    }
    for (const nn::NamedParam& p : params) {
      const auto f = text::split_whitespace(in.line());
      if (f.size() != 2 || f[0] != p.name || in.number(f[1]) != static_cast<long long>(p.var->value().size())) {
        in.corrupt("parameter '" + p.name + "' missing or resized");
      }
      in.raw(p.var->mutable_value());
    }
    const auto adam = in.fields("adam", 4);
    if (adam[1] != g.name || in.number(adam[3]) != static_cast<long long>(params.size())) {
      in.corrupt(std::string("optimizer state for '") + g.name + "' does not match");
    }
    g.opt->set_step_count(in.number(adam[2]));
    auto& m = g.opt->first_moments();
    auto& v = g.opt->second_moments();
    // Moments are written back to back; the per-tensor terminator check in
    // raw() is replaced by one trailing newline.
    std::vector<Tensor*> all;
    for (Tensor& x : m) all.push_back(&x);
    for (Tensor& x : v) all.push_back(&x);
    std::size_t total = 0;
    for (Tensor* x : all) total += x->size();
    Tensor joined(Shape{1, 1, 1, static_cast<int>(total)});
    in.raw(joined);
    std::size_t off = 0;
    for (Tensor* x : all) {
      std::memcpy(x->data(), joined.data() + off, x->size() * sizeof(double));
      off += x->size();
    }
  }
  if (in.line() != "end") in.corrupt("missing end marker");
  t->set_position(epoch, step);
  t->set_epoch(epoch);
  return t;
}

Dataset load_dataset(const std::string& low_dir, const std::string& high_dir, int image_size) {
  Dataset d;
  const auto read_all = [image_size](const std::string& dir, std::vector<Tensor>& out) {
    for (const std::string& p : io::list_pngs(dir)) {
      const io::Image im = io::read_png(p);
      if (im.channels != 3) throw DataError("'" + p + "' has " + std::to_string(im.channels) + " channel(s); expected 3");
      out.push_back(io::to_tensor(io::ingest(im, image_size)));
    }
    if (out.empty()) throw DataError("no PNG images in '" + dir + "'");
  };
  read_all(low_dir, d.low);
  read_all(high_dir, d.high);
  return d;
}

std::string log_header() {
  return "epoch,step,t_index,lr,adv,d_loss,critic_mi,sb_transport,sb_entropy,ssim_gen,ssim_idt,patchnce,total";
}

std::string log_row(int epoch, long long step, double lr, const StepResult& r) {
  using text::format_double;
  std::ostringstream o;
  o << epoch << ',' << step << ',' << r.t_index << ',' << format_double(lr) << ',' << format_double(r.report.adv) << ','
    << format_double(r.discriminator_loss) << ',' << format_double(r.critic_statistic) << ','
    << format_double(r.report.sb_transport) << ',' << format_double(r.report.sb_entropy) << ','
    << format_double(r.report.ssim_gen) << ',' << format_double(r.report.ssim_idt) << ','
    << format_double(r.report.patchnce) << ',' << format_double(r.report.total);
  return o.str();
}

std::vector<StepResult> run_training(Trainer& trainer, const Dataset& data, const TrainOptions& options) {
  const TrainConfig& cfg = trainer.config();
  if (static_cast<int>(data.low.size()) < cfg.batch_size || static_cast<int>(data.high.size()) < cfg.batch_size) {
    throw DataError("training needs at least batch_size (" + std::to_string(cfg.batch_size) + ") images per domain");
  }
  const bool write = !options.output_dir.empty();
  std::ofstream log;
  if (write) {
    fs::create_directories(options.output_dir);
    if (cfg.sample_every > 0) fs::create_directories(fs::path(options.output_dir) / "samples");
    const fs::path log_path = fs::path(options.output_dir) / "train_log.csv";
    const bool fresh = !fs::exists(log_path);
    log.open(log_path, std::ios::app);
    if (!log) throw DataError("cannot open training log '" + log_path.string() + "'");
    if (fresh) log << log_header() << '\n';
  }
  std::vector<StepResult> results;
  const int first = trainer.epoch();
  const int last = options.max_epochs < 0 ? cfg.epochs : std::min(cfg.epochs, first + options.max_epochs);
  for (int e = first; e < last; ++e) {
    trainer.set_epoch(e);
    const auto low_batches = epoch_batches(static_cast<int>(data.low.size()), cfg.batch_size, trainer.rng());
    const auto high_batches = epoch_batches(static_cast<int>(data.high.size()), cfg.batch_size, trainer.rng());
    const std::size_t iters = std::min(low_batches.size(), high_batches.size());
    for (std::size_t b = 0; b < iters; ++b) {
      std::vector<Tensor> lo;
      std::vector<Tensor> hi;
      for (int idx : low_batches[b]) lo.push_back(data.low[static_cast<std::size_t>(idx)]);
      for (int idx : high_batches[b]) hi.push_back(data.high[static_cast<std::size_t>(idx)]);
      const Tensor low = concat_batch(lo);
      const StepResult r = trainer.train_step(low, concat_batch(hi));
      results.push_back(r);
      const long long step = trainer.step();
      if (write && step % cfg.log_every == 0) log << log_row(e, step, lr_at(e, cfg), r) << '\n';
      if (write && cfg.sample_every > 0 && step % cfg.sample_every == 0) {
        const int k = std::min(4, low.n());
        Rng sample_rng(cfg.seed + static_cast<std::uint64_t>(step));
        ag::NoGradGuard no_grad;
        const Tensor pred = trainer.generator().predict(low.batch_slice(0, k), 0, sample_rng);
        std::vector<io::Image> tiles;
        for (int i = 0; i < k; ++i) tiles.push_back(io::to_image(low.batch_slice(i, 1)));
        for (int i = 0; i < k; ++i) tiles.push_back(io::to_image(pred.batch_slice(i, 1)));
        io::write_png((fs::path(options.output_dir) / "samples" / ("step" + std::to_string(step) + ".png")).string(),
                      io::tile(tiles, k));
      }
    }
    trainer.set_position(e + 1, trainer.step());
    if (write && cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0) {
      trainer.save((fs::path(options.output_dir) / ("epoch" + std::to_string(e + 1) + ".ckpt")).string());
    }
  }
  trainer.set_epoch(trainer.epoch());
  if (write) {
    log.flush();
    trainer.save((fs::path(options.output_dir) / "latest.ckpt").string());
  }
  return results;
}

}  // namespace cunsb::train
