#include "mspfn/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "mspfn/autograd.hpp"
#include "mspfn/dataset.hpp"
#include "mspfn/image_io.hpp"
#include "mspfn/metrics.hpp"
#include "mspfn/model.hpp"
#include "mspfn/pyramid.hpp"
#include "mspfn/train.hpp"

namespace mspfn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_sci(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific);
  std::string s(buf, res.ptr);
  const auto e = s.find('e');
  if (e == std::string::npos) return s;
  std::string mant = s.substr(0, e), exp = s.substr(e + 1);
  std::string sign;
  if (!exp.empty() && (exp[0] == '-' || exp[0] == '+')) {
    if (exp[0] == '-') sign = "-";
    exp.erase(0, 1);
  }
  exp.erase(0, std::min(exp.find_first_not_of('0'), exp.size() - 1));
  return mant + "e" + sign + exp;
}

namespace {

// Raised for bad flag values that CLI11 validators cannot express.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json psnr_json(double v) { return std::isinf(v) ? json("inf") : json(v); }

std::string fixed(double v, int decimals) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

unsigned worker_count(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MSPFN_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index is
// written by exactly one worker so results land in input order.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Tensor derain_image(const Tensor& rain, const ParamStore& params, const ModelConfig& cfg) {
  NoGradGuard guard;
  const Tensor padded = pad_to_multiple(rain, cfg.required_multiple());
  const MspfnOutput out = mspfn_forward(padded, params, cfg);
  return crop(out.derained, rain.h(), rain.w());
}

std::vector<int> parse_channels(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) {
    int v = 0;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (r.ec != std::errc{} || r.ptr != tok.data() + tok.size() || v < 1)
      throw UsageError("--channels expects positive integers separated by commas, got '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--channels must list at least one width");
  return out;
}

void print_config(std::ostream& out, const ModelConfig& c) {
  out << "variant              " << variant_name(c.variant) << "\n"
      << "levels               " << c.levels << "\n"
      << "scale_channels       ";
  for (std::size_t i = 0; i < c.scale_channels.size(); ++i)
    out << (i ? "," : "") << c.scale_channels[i];
  out << "\n"
      << "M                    " << c.M << "\n"
      << "N                    " << c.N << "\n"
      << "T                    " << c.T << "\n"
      << "urab_sampling_pairs  " << c.urab_sampling_pairs << "\n"
      << "kernel_size          " << c.kernel_size << "\n"
      << "attention_reduction  " << c.attention_reduction << "\n";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string clean_dir, out = "data", format = "ppm";
  std::size_t count = 4, scenes = 0;
  int scene_size = 64;
  std::uint64_t seed = 0;
  double test_fraction = 0.0;
  RainRanges ranges;
  bool json = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  a.ranges.validate();
  if (a.scenes > 0) write_scenes(a.clean_dir, a.scenes, a.scene_size, a.scene_size, a.seed ^ 0x5ceae5ULL);
  SynthOptions opt;
  opt.count = a.count;
  opt.ranges = a.ranges;
  opt.seed = a.seed;
  opt.test_fraction = a.test_fraction;
  opt.format = a.format;
  const DatasetManifest m = make_dataset(a.clean_dir, a.out, opt);
  const fs::path manifest = fs::path(a.out) / "manifest.json";
  if (a.json) {
    out << json{{"manifest", manifest.string()},
                {"train", m.count(Split::Train)},
                {"test", m.count(Split::Test)}}
               .dump()
        << "\n";
  } else {
    out << "wrote " << m.entries.size() << " pairs (" << m.count(Split::Train) << " train, "
        << m.count(Split::Test) << " test)\n"
        << manifest.string() << "\n";
  }
  return kOk;
}

struct TrainArgs {
  std::string manifest, variant = "tiny", out = "run", resume, channels;
  TrainConfig cfg;
  int M = 0, N = 0, T = 0, urab_pairs = 0;
  bool paper = false, json = false, quiet = false;
};

int cmd_train(TrainArgs a, const CLI::App& sub, std::ostream& out) {
  const auto given = [&](const char* name) { return sub.count(name) > 0; };
  TrainConfig cfg = a.paper ? TrainConfig::paper() : TrainConfig{};
  if (given("--batch")) cfg.batch_size = a.cfg.batch_size;
  if (given("--patch")) cfg.patch = a.cfg.patch;
  if (given("--lr")) cfg.lr_init = a.cfg.lr_init;
  if (given("--lr-half-every")) cfg.lr_half_every = a.cfg.lr_half_every;
  if (given("--lr-floor")) cfg.lr_floor = a.cfg.lr_floor;
  if (given("--epochs")) cfg.epochs = a.cfg.epochs;
  if (given("--steps")) cfg.steps = a.cfg.steps;
  if (given("--lambda")) cfg.loss.lambda = a.cfg.loss.lambda;
  if (given("--epsilon")) cfg.loss.epsilon = a.cfg.loss.epsilon;
  if (given("--seed")) cfg.seed = a.cfg.seed;
  if (given("--ckpt-every")) cfg.checkpoint_every = a.cfg.checkpoint_every;

  ModelConfig model = make_variant(a.variant);
  if (!a.channels.empty()) {
    model.scale_channels = parse_channels(a.channels);
    model.levels = static_cast<int>(model.scale_channels.size());
  }
  if (given("--M")) model.M = a.M;
  if (given("--N")) model.N = a.N;
  if (given("--T")) model.T = a.T;
  if (given("--urab-pairs")) model.urab_sampling_pairs = a.urab_pairs;
  try {
    model.validate();
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const DatasetManifest data = load_manifest(a.manifest);
  TrainRunOptions opt;
  opt.out_dir = a.out;
  if (!a.resume.empty()) {
    opt.resume = load_checkpoint(a.resume);
    model = opt.resume->model;
    const std::int64_t target = cfg.steps;
    cfg = opt.resume->train;
    cfg.steps = target;
  }

  std::ostringstream header;
  header << "variant=" << a.variant << " params=" << param_count(model) << " steps=" << cfg.steps
         << " batch=" << cfg.batch_size << " patch=" << cfg.patch << " lr=" << format_sci(cfg.lr_init)
         << " lr_half_every=" << cfg.lr_half_every << " lr_floor=" << format_sci(cfg.lr_floor)
         << " epochs=" << cfg.epochs << " lambda=" << cfg.loss.lambda
         << " epsilon=" << format_sci(cfg.loss.epsilon) << " seed=" << cfg.seed;
  if (opt.resume) header << " resume_from=" << opt.resume->step;
  if (!a.json) out << header.str() << "\n";

  const std::int64_t every = std::max<std::int64_t>(1, cfg.steps / 20);
  if (!a.quiet && !a.json) {
    opt.on_step = [&](const StepLog& s) {
      if (s.step % every == 0 || s.step == cfg.steps) {
        out << "step " << s.step << "/" << cfg.steps << " lr=" << format_sci(s.lr)
            << " loss=" << fixed(s.loss, 6) << " psnr=" << fixed(s.psnr, 3) << "\n";
      }
    };
  }
  const TrainResult r = train(model, cfg, data, opt);
  const fs::path ckpt = fs::path(a.out) / "checkpoint.mspfn";
  if (a.json) {
    json j{{"checkpoint", ckpt.string()},
           {"steps", r.final_checkpoint.step},
           {"params", param_count(model)},
           {"lr", cfg.lr_init},
           {"batch", cfg.batch_size},
           {"epochs", cfg.epochs}};
    if (!r.history.empty()) j["final_loss"] = r.history.back().loss;
    out << j.dump() << "\n";
  } else {
    out << "checkpoint " << ckpt.string() << "\n";
  }
  return kOk;
}

int cmd_derain(const std::string& ckpt_path, const std::string& in, const std::string& out_path,
               std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Tensor rain = load_image(in);
  save_image(derain_image(rain, ckpt.params, ckpt.model), out_path);
  out << out_path << "\n";
  return kOk;
}

struct EvalRow {
  std::string name;
  std::string pred, ref;
  double psnr = 0.0, ssim = 0.0;
};

struct EvalArgs {
  std::string manifest, ckpt, split = "all";
  std::vector<std::string> pairs;
  bool luma = false, json = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  struct Job {
    std::string name;
    fs::path pred, ref;
  };
  std::vector<Job> jobs;
  if (!a.manifest.empty()) {
    const DatasetManifest m = load_manifest(a.manifest);
    for (const auto& e : m.entries) {
      if (a.split == "train" && e.split != Split::Train) continue;
      if (a.split == "test" && e.split != Split::Test) continue;
      jobs.push_back({e.rain.filename().string(), e.rain, e.clean});
    }
  } else {
    for (const auto& p : a.pairs) {
      const auto colon = p.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == p.size())
        throw UsageError("--pairs expects PRED:REF, got '" + p + "'");
      jobs.push_back({fs::path(p.substr(0, colon)).filename().string(), p.substr(0, colon), p.substr(colon + 1)});
    }
  }
  std::optional<Checkpoint> ckpt;
  if (!a.ckpt.empty()) ckpt = load_checkpoint(a.ckpt);

  std::vector<EvalRow> rows(jobs.size());
  parallel_for(jobs.size(), worker_count(jobs.size()), [&](std::size_t i) {
    Tensor pred = load_image(jobs[i].pred);
    Tensor ref = load_image(jobs[i].ref);
    if (!(pred.shape() == ref.shape()))
      throw DatasetError("pair " + jobs[i].pred.string() + " / " + jobs[i].ref.string() +
                         " has mismatched dimensions " + pred.shape().str() + " vs " + ref.shape().str());
    if (ckpt) pred = derain_image(pred, ckpt->params, ckpt->model);
    if (a.luma) {
      pred = to_luma(pred);
      ref = to_luma(ref);
    }
    rows[i] = {jobs[i].name, jobs[i].pred.string(), jobs[i].ref.string(), psnr(pred, ref), ssim(pred, ref)};
  });

  double mp = 0.0, ms = 0.0;
  for (const auto& r : rows) {
    mp += r.psnr;
    ms += r.ssim;
  }
  if (!rows.empty()) {
    mp /= static_cast<double>(rows.size());
    ms /= static_cast<double>(rows.size());
  }
  const std::string channel = a.luma ? "luma" : "rgb";
  if (a.json) {
    json items = json::array();
    for (const auto& r : rows)
      items.push_back({{"name", r.name}, {"pred", r.pred}, {"ref", r.ref}, {"psnr", psnr_json(r.psnr)}, {"ssim", r.ssim}});
    out << json{{"channels", channel},
                {"derained", ckpt.has_value()},
                {"images", items},
                {"mean", {{"psnr", psnr_json(mp)}, {"ssim", ms}}},
                {"count", rows.size()}}
               .dump(2)
        << "\n";
    return kOk;
  }
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.name.size());
  out << std::left << std::setw(static_cast<int>(w)) << "image" << "  " << std::right << std::setw(12)
      << "psnr_db" << "  " << std::setw(10) << "ssim" << "\n";
  const auto line = [&](const std::string& name, double p, double s) {
    out << std::left << std::setw(static_cast<int>(w)) << name << "  " << std::right << std::setw(12)
        << fixed(p, 6) << "  " << std::setw(10) << fixed(s, 6) << "\n";
  };
  for (const auto& r : rows) line(r.name, r.psnr, r.ssim);
  out << std::string(w + 26, '-') << "\n";
  line("mean", mp, ms);
  out << "(" << rows.size() << " images, " << channel << (ckpt ? ", derained" : "") << ")\n";
  return kOk;
}

int cmd_inspect(const std::string& variant, bool as_json, std::ostream& out) {
  const ModelConfig c = make_variant(variant);
  const std::size_t total = param_count(c);
  const auto bd = param_breakdown(c);
  if (as_json) {
    json j{{"name", variant}, {"config", c}, {"param_count", total}, {"breakdown", bd}};
    out << j.dump(2) << "\n";
    return kOk;
  }
  out << "name                 " << variant << "\n";
  print_config(out, c);
  std::ostringstream m;
  m << std::fixed << std::setprecision(3) << static_cast<double>(total) / 1e6;
  out << "param_count          " << total << " (" << m.str() << "M)\n";
  for (const char* k : {"init", "cfm", "ffm", "rm"})
    out << "  " << std::left << std::setw(19) << k << std::right << bd.at(k) << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale progressive fusion network for single-image deraining", "mspfn"};
  app.require_subcommand(1);
  app.fallthrough(false);

  const auto variants = variant_names();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Render synthetic clean/rain pairs and a manifest");
  synth->add_option("--clean-dir", sa.clean_dir, "Directory of clean images (created when --scenes is given)")->required();
  synth->add_option("--out", sa.out, "Output directory")->capture_default_str();
  synth->add_option("--count", sa.count, "Number of pairs")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  synth->add_option("--scenes", sa.scenes, "First write this many procedural clean scenes into --clean-dir");
  synth->add_option("--scene-size", sa.scene_size, "Edge length of procedural scenes")->capture_default_str()->check(CLI::Range(8, 4096));
  synth->add_option("--angle-min", sa.ranges.angle_min, "Streak angle range (degrees)")->capture_default_str()->check(CLI::Range(-45.0, 45.0));
  synth->add_option("--angle-max", sa.ranges.angle_max)->capture_default_str()->check(CLI::Range(-45.0, 45.0));
  synth->add_option("--length-min", sa.ranges.length_min, "Streak length range (pixels)")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--length-max", sa.ranges.length_max)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--density-min", sa.ranges.density_min, "Streak density range")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  synth->add_option("--density-max", sa.ranges.density_max)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  synth->add_option("--intensity-min", sa.ranges.intensity_min, "Streak intensity range")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  synth->add_option("--intensity-max", sa.ranges.intensity_max)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  synth->add_option("--format", sa.format, "Image format")->capture_default_str()->check(CLI::IsMember({"ppm", "png"}));
  synth->add_option("--test-fraction", sa.test_fraction, "Fraction of pairs assigned to the test split")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  synth->add_flag("--json", sa.json, "Print a JSON summary");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a model on a manifest");
  trn->add_option("--manifest", ta.manifest, "Dataset manifest")->required();
  trn->add_option("--variant", ta.variant, "Architecture preset")->capture_default_str()->check(CLI::IsMember(variants));
  trn->add_option("--out", ta.out, "Run directory for checkpoints and train_log.jsonl")->capture_default_str();
  trn->add_option("--steps", ta.cfg.steps, "Total optimisation steps")->default_val(TrainConfig{}.steps)->check(CLI::NonNegativeNumber);
  trn->add_option("--batch", ta.cfg.batch_size, "Batch size")->default_val(TrainConfig{}.batch_size)->check(CLI::PositiveNumber);
  trn->add_option("--patch", ta.cfg.patch, "Training crop size")->default_val(TrainConfig{}.patch)->check(CLI::PositiveNumber);
  trn->add_option("--lr", ta.cfg.lr_init, "Initial learning rate")->default_val(TrainConfig{}.lr_init)->check(CLI::PositiveNumber);
  trn->add_option("--lr-half-every", ta.cfg.lr_half_every, "Halve the learning rate every this many steps")->default_val(TrainConfig{}.lr_half_every)->check(CLI::PositiveNumber);
  trn->add_option("--lr-floor", ta.cfg.lr_floor, "Learning rate floor")->default_val(TrainConfig{}.lr_floor)->check(CLI::PositiveNumber);
  trn->add_option("--epochs", ta.cfg.epochs, "Epoch budget recorded with the run")->default_val(TrainConfig{}.epochs)->check(CLI::PositiveNumber);
  trn->add_option("--lambda", ta.cfg.loss.lambda, "Edge loss weight")->default_val(LossConfig{}.lambda)->check(CLI::NonNegativeNumber);
  trn->add_option("--epsilon", ta.cfg.loss.epsilon, "Charbonnier epsilon")->default_val(LossConfig{}.epsilon)->check(CLI::PositiveNumber);
  trn->add_option("--seed", ta.cfg.seed, "Random seed")->default_val(0);
  trn->add_option("--ckpt-every", ta.cfg.checkpoint_every, "Checkpoint interval in steps")->default_val(TrainConfig{}.checkpoint_every)->check(CLI::PositiveNumber);
  trn->add_option("--resume", ta.resume, "Continue from this checkpoint up to --steps in total");
  trn->add_option("--channels", ta.channels, "Override per-level widths, coarse to fine (e.g. 8,16,32)");
  trn->add_option("--M", ta.M, "Override the number of fine-fusion modules")->check(CLI::NonNegativeNumber);
  trn->add_option("--N", ta.N, "Override attention units per URAB")->check(CLI::PositiveNumber);
  trn->add_option("--T", ta.T, "Override recurrent steps")->check(CLI::PositiveNumber);
  trn->add_option("--urab-pairs", ta.urab_pairs, "Override strided sampling pairs per URAB")->check(CLI::NonNegativeNumber);
  trn->add_flag("--paper-defaults", ta.paper, "Use the published regime: batch 8, lr 2e-4 halved every 20000 steps to 1e-6, 30 epochs");
  trn->add_flag("--quiet", ta.quiet, "Suppress progress lines");
  trn->add_flag("--json", ta.json, "Print a JSON summary instead of text");

  std::string d_ckpt, d_in, d_out;
  auto* der = app.add_subcommand("derain", "Remove rain from one image");
  der->add_option("--ckpt", d_ckpt, "Checkpoint")->required();
  der->add_option("--in", d_in, "Input image (PPM or PNG)")->required();
  der->add_option("--out", d_out, "Output image (PPM or PNG)")->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score images with PSNR and SSIM");
  auto* ev_manifest = ev->add_option("--manifest", ea.manifest, "Score rain images of a manifest against their clean pairs");
  ev->add_option("--ckpt", ea.ckpt, "Derain inputs with this checkpoint before scoring")->needs(ev_manifest);
  ev->add_option("--split", ea.split, "Manifest split to score")->capture_default_str()->check(CLI::IsMember({"train", "test", "all"}));
  auto* ev_pairs = ev->add_option("--pairs", ea.pairs, "PRED:REF image pairs")->excludes(ev_manifest);
  ev->add_flag("--luma", ea.luma, "Score BT.601 luma instead of RGB");
  ev->add_flag("--json", ea.json, "Print JSON instead of a table");
  ev_manifest->excludes(ev_pairs);

  std::string iv = "baseline_m10n3";
  bool ij = false;
  auto* ins = app.add_subcommand("inspect", "Report a preset's configuration and parameter counts");
  ins->add_option("--variant", iv, "Architecture preset")->capture_default_str()->check(CLI::IsMember(variants));
  ins->add_flag("--json", ij, "Print JSON");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
    if (*ev && ea.manifest.empty() && ea.pairs.empty())
      throw CLI::ValidationError("eval", "one of --manifest or --pairs is required");
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err) == 0 ? kOk : kUsage;
    const auto parsed = app.get_subcommands();
    err << "error: " << e.what() << "\n\n" << (parsed.empty() ? app.help() : parsed.front()->help());
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(sa, out);
    if (*trn) return cmd_train(ta, *trn, out);
    if (*der) return cmd_derain(d_ckpt, d_in, d_out, out);
    if (*ev) return cmd_eval(ea, out);
    if (*ins) return cmd_inspect(iv, ij, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace mspfn::cli
