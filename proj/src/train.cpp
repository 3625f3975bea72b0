#include "mspfn/train.hpp"

#include <cmath>
#include <fstream>
#include <optional>

#include "mspfn/autograd.hpp"
#include "mspfn/metrics.hpp"
#include "mspfn/ops.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.batch_size = 8;
  c.lr_init = 2e-4;
  c.lr_half_every = 20000;
  c.lr_floor = 1e-6;
  c.epochs = 30;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 1 || patch < 1 || epochs < 1 || steps < 0 || lr_half_every < 1 ||
      checkpoint_every < 1) {
    throw std::invalid_argument("training sizes and intervals must be positive");
  }
  if (!(lr_init > 0.0) || !(lr_floor > 0.0) || lr_floor > lr_init) {
    throw std::invalid_argument("learning rates must satisfy 0 < lr_floor <= lr_init");
  }
  if (!(loss.epsilon > 0.0) || loss.lambda < 0.0) {
    throw std::invalid_argument("loss epsilon must be > 0 and lambda >= 0");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"lr_init", c.lr_init},
                     {"lr_half_every", c.lr_half_every},
                     {"lr_floor", c.lr_floor},
                     {"epochs", c.epochs},
                     {"steps", c.steps},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"seed", c.seed},
                     {"patch", c.patch},
                     {"checkpoint_every", c.checkpoint_every},
                     {"epsilon", c.loss.epsilon},
                     {"lambda", c.loss.lambda}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr_init").get_to(c.lr_init);
  j.at("lr_half_every").get_to(c.lr_half_every);
  j.at("lr_floor").get_to(c.lr_floor);
  j.at("epochs").get_to(c.epochs);
  j.at("steps").get_to(c.steps);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("adam_eps").get_to(c.adam_eps);
  j.at("seed").get_to(c.seed);
  j.at("patch").get_to(c.patch);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  j.at("epsilon").get_to(c.loss.epsilon);
  j.at("lambda").get_to(c.loss.lambda);
}

double lr_schedule(std::int64_t step, const TrainConfig& cfg) {
  if (step < 0) throw std::invalid_argument("lr_schedule: negative step");
  const std::int64_t halvings = step / cfg.lr_half_every;
  const double lr = halvings > 4096 ? 0.0 : std::ldexp(cfg.lr_init, -static_cast<int>(halvings));
  return std::max(cfg.lr_floor, lr);
}

AdamState AdamState::zeros_like(const ParamStore& params) {
  AdamState s;
  for (const auto& t : params.tensors()) {
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
  }
  return s;
}

void adam_step(ParamStore& params, AdamState& state, double lr, const AdamHyper& hyper) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not mirror the parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params.tensors()[k].has_grad()) {
      throw std::invalid_argument("adam_step: parameter '" + params.names()[k] +
                                  "' has no gradient");
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params.tensors()[k];
    auto pd = p.mutable_data();
    const auto g = p.grad();
    auto m = state.m[k].mutable_data();
    auto v = state.v[k].mutable_data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double gi = g[i];
      const double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
      const double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
      m[i] = static_cast<real>(mi);
      v[i] = static_cast<real>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + hyper.eps);
      pd[i] = static_cast<real>(pd[i] - update);
    }
  }
}

nlohmann::json StepLog::to_json() const {
  return {{"step", step}, {"lr", lr},         {"loss", loss},
          {"l_con", l_con}, {"l_edge", l_edge}, {"psnr", psnr}};
}

namespace {

std::uint64_t sampler_seed(std::uint64_t seed) {
  std::uint64_t x = seed ^ 0x5851f42d4c957f2dULL;
  return Rng::splitmix64(x);
}

void check_patch(const ModelConfig& model, const TrainConfig& train) {
  const int m = model.required_multiple();
  if (train.patch % m != 0) {
    throw std::invalid_argument("patch " + std::to_string(train.patch) +
                                " must be a multiple of " + std::to_string(m) +
                                " for this architecture");
  }
}

}  // namespace

Trainer::Trainer(const ModelConfig& model, const TrainConfig& train, const DatasetManifest& data)
    : model_(model),
      train_(train),
      params_(init_params(model, train.seed)),
      adam_(AdamState::zeros_like(params_)),
      sampler_(data, train.patch, train.batch_size, sampler_seed(train.seed)) {
  train_.validate();
  check_patch(model_, train_);
}

Trainer::Trainer(const Checkpoint& ckpt, const DatasetManifest& data)
    : model_(ckpt.model),
      train_(ckpt.train),
      params_(ckpt.params.clone()),
      adam_(ckpt.adam.m.empty() ? AdamState::zeros_like(ckpt.params) : ckpt.adam),
      sampler_(data, ckpt.train.patch, ckpt.train.batch_size, 0),
      step_(ckpt.step) {
  train_.validate();
  check_patch(model_, train_);
  params_.set_requires_grad(true);
  // deep copy so the trainer never aliases the checkpoint's moments
  for (auto& t : adam_.m) t = t.clone();
  for (auto& t : adam_.v) t = t.clone();
  sampler_.set_state(ckpt.sampler);
}

StepLog Trainer::step() {
  StepLog log;
  log.lr = lr_schedule(step_, train_);
  const Batch batch = sampler_.next();

  current_tape().reset();
  params_.zero_grad();
  const MspfnOutput out = mspfn_forward(batch.rain, params_, model_);
  Tensor residual_true;
  {
    NoGradGuard no_grad;
    residual_true = sub(batch.rain, batch.clean);
  }
  LossTerms terms = total_loss(out.residual, residual_true, batch.clean, out.derained, train_.loss);
  log.loss = terms.total.item();
  log.l_con = terms.l_con.item();
  log.l_edge = terms.l_edge.item();
  log.psnr = psnr(out.derained, batch.clean);
  if (!std::isfinite(log.loss) || !std::isfinite(log.l_con) || !std::isfinite(log.l_edge)) {
    current_tape().reset();
    log.step = step_;
    throw TrainingDiverged("non-finite loss at step " + std::to_string(step_) +
                               " (lr=" + std::to_string(log.lr) + ", l_con=" +
                               std::to_string(log.l_con) + ", l_edge=" +
                               std::to_string(log.l_edge) + ")",
                           log);
  }
  backward(terms.total);
  adam_step(params_, adam_, log.lr, {train_.beta1, train_.beta2, train_.adam_eps});
  ++step_;
  log.step = step_;
  return log;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.model = model_;
  c.train = train_;
  c.params = params_.clone();
  c.adam.t = adam_.t;
  for (const auto& t : adam_.m) c.adam.m.push_back(t.clone());
  for (const auto& t : adam_.v) c.adam.v.push_back(t.clone());
  c.step = step_;
  c.sampler = sampler_.state();
  return c;
}

TrainResult train(const ModelConfig& model, const TrainConfig& train, const DatasetManifest& data,
                  const TrainRunOptions& opt) {
  std::optional<Trainer> slot;
  if (opt.resume) {
    // The resumed run keeps its recorded hyperparameters but adopts the new step budget.
    Checkpoint ck = *opt.resume;
    ck.train.steps = train.steps;
    slot.emplace(ck, data);
  } else {
    slot.emplace(model, train, data);
  }
  Trainer& trainer = *slot;
  const TrainConfig& cfg = trainer.train_config();
  const std::int64_t total = cfg.steps;

  std::ofstream log_file;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    log_file.open(opt.out_dir / "train_log.jsonl", opt.resume ? std::ios::app : std::ios::trunc);
  }
  TrainResult result;
  while (trainer.steps_done() < total) {
    StepLog entry;
    try {
      entry = trainer.step();
    } catch (const TrainingDiverged& e) {
      if (!opt.out_dir.empty()) {
        nlohmann::json dump = e.diagnostics().to_json();
        dump["error"] = e.what();
        std::ofstream(opt.out_dir / "divergence.json") << dump.dump(2) << "\n";
      }
      throw;
    }
    const std::string line = entry.to_json().dump();
    if (log_file) log_file << line << "\n";
    if (opt.log) *opt.log << line << "\n";
    result.history.push_back(entry);
    if (opt.on_step) opt.on_step(entry);
    if (!opt.out_dir.empty() && trainer.steps_done() % cfg.checkpoint_every == 0) {
      save_checkpoint(trainer.checkpoint(),
                      opt.out_dir / ("checkpoint_step" + std::to_string(trainer.steps_done()) + ".mspfn"));
    }
  }
  result.final_checkpoint = trainer.checkpoint();
  if (!opt.out_dir.empty()) save_checkpoint(result.final_checkpoint, opt.out_dir / "checkpoint.mspfn");
  return result;
}

}  // namespace MSPFN_ABI
}  // namespace mspfn
