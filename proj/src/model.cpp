#include "mspfn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "mspfn/autograd.hpp"
#include "mspfn/ops.hpp"
#include "mspfn/pyramid.hpp"
#include "mspfn/rng.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

namespace {

const std::vector<std::pair<Variant, const char*>> kVariantNames = {
    {Variant::Full, "full"},
    {Variant::Model1_SingleScale, "single_scale"},
    {Variant::Model2_NoCFM, "no_cfm"},
    {Variant::Model3_NoFFM, "no_ffm"},
    {Variant::Model4_ParallelFusion, "parallel_fusion"},
    {Variant::Lightweight, "lightweight"},
};

std::string lvl(int l) { return ".level" + std::to_string(l); }

}  // namespace

const char* variant_name(Variant v) {
  for (const auto& [k, name] : kVariantNames)
    if (k == v) return name;
  return "full";
}

Variant parse_variant(const std::string& name) {
  for (const auto& [k, n] : kVariantNames)
    if (name == n) return k;
  throw ConfigError("unknown architecture variant '" + name + "'");
}

void ModelConfig::validate() const {
  if (levels < 1) throw ConfigError("levels must be >= 1");
  if (static_cast<int>(scale_channels.size()) != levels) {
    throw ConfigError("scale_channels has " + std::to_string(scale_channels.size()) +
                      " entries but levels = " + std::to_string(levels));
  }
  for (int c : scale_channels)
    if (c < 1) throw ConfigError("scale_channels must be positive");
  if (M < 0) throw ConfigError("M must be >= 0");
  if (M >= 1 && N < 1) throw ConfigError("N must be >= 1 when M >= 1");
  if (T < 1) throw ConfigError("T must be >= 1");
  if (urab_sampling_pairs < 0) throw ConfigError("urab_sampling_pairs must be >= 0");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
  if (attention_reduction < 1) throw ConfigError("attention_reduction must be >= 1");
}

int ModelConfig::required_multiple() const {
  int m = 1 << (levels - 1);
  if (uses_ffm()) m <<= urab_sampling_pairs;
  return m;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"levels", c.levels},
                     {"scale_channels", c.scale_channels},
                     {"M", c.M},
                     {"N", c.N},
                     {"T", c.T},
                     {"urab_sampling_pairs", c.urab_sampling_pairs},
                     {"kernel_size", c.kernel_size},
                     {"attention_reduction", c.attention_reduction},
                     {"variant", variant_name(c.variant)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.levels = j.at("levels").get<int>();
  c.scale_channels = j.at("scale_channels").get<std::vector<int>>();
  c.M = j.at("M").get<int>();
  c.N = j.at("N").get<int>();
  c.T = j.at("T").get<int>();
  c.urab_sampling_pairs = j.at("urab_sampling_pairs").get<int>();
  c.kernel_size = j.at("kernel_size").get<int>();
  c.attention_reduction = j.at("attention_reduction").get<int>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.validate();
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {
      "model1", "model2", "model3",  "model4", "model5", "model6",      "baseline_m10n3",
      "final_m17n1", "m30n1", "m13n2", "m17n2", "m8n5", "lightweight", "tiny"};
  return names;
}

ModelConfig make_variant(const std::string& name) {
  ModelConfig c;  // baseline: 3 levels, 32/64/128, M=10, N=3
  auto mn = [&c](int m, int n) {
    c.M = m;
    c.N = n;
  };
  if (name == "baseline_m10n3") {
  } else if (name == "model1") {
    c.variant = Variant::Model1_SingleScale;
    c.levels = 1;
    c.scale_channels = {128};
  } else if (name == "model2") {
    c.variant = Variant::Model2_NoCFM;
  } else if (name == "model3") {
    c.variant = Variant::Model3_NoFFM;
  } else if (name == "model4") {
    c.variant = Variant::Model4_ParallelFusion;
  } else if (name == "model5") {
    mn(5, 1);
  } else if (name == "model6") {
    mn(6, 3);
  } else if (name == "final_m17n1") {
    mn(17, 1);
  } else if (name == "m30n1") {
    mn(30, 1);
  } else if (name == "m13n2") {
    mn(13, 2);
  } else if (name == "m17n2") {
    mn(17, 2);
  } else if (name == "m8n5") {
    mn(8, 5);
  } else if (name == "lightweight") {
    c.variant = Variant::Lightweight;
    c.scale_channels = {32, 32, 32};
    mn(5, 1);
    c.urab_sampling_pairs = 2;
  } else if (name == "tiny") {
    c.scale_channels = {8, 16, 32};
    mn(2, 1);
    c.T = 2;
  } else {
    throw ConfigError("unknown variant '" + name + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// ParamStore

void ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_.emplace(name, tensors_.size());
  names_.push_back(name);
  tensors_.push_back(std::move(t));
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) != 0; }

const Tensor& ParamStore::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
  return tensors_[it->second];
}

Tensor& ParamStore::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
  return tensors_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

void ParamStore::set_requires_grad(bool value) {
  for (auto& t : tensors_) t.set_requires_grad(value);
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    Tensor t = tensors_[i].clone();
    t.set_requires_grad(tensors_[i].requires_grad());
    out.add(names_[i], std::move(t));
  }
  return out;
}

bool bit_equal(const ParamStore& a, const ParamStore& b) {
  if (a.names() != b.names()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bit_equal(a.tensors()[i], b.tensors()[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Layout

namespace {

class LayoutBuilder {
 public:
  explicit LayoutBuilder(int k) : k_(k) {}

  void conv(const std::string& name, int cin, int cout, int ksize) {
    specs.push_back({name + ".w", {cout, cin, ksize, ksize}, false, cin * ksize * ksize});
    bias(name, cout);
  }
  // Stride-2 transpose conv: each output sees roughly a quarter of the taps.
  void deconv(const std::string& name, int cin, int cout) {
    specs.push_back({name + ".w", {cin, cout, k_, k_}, false, std::max(1, cin * k_ * k_ / 4)});
    bias(name, cout);
  }
  void lstm(const std::string& name, int cin, int c) {
    specs.push_back({name + ".w_x", {4 * c, cin, k_, k_}, false, cin * k_ * k_});
    specs.push_back({name + ".w_h", {4 * c, c, k_, k_}, false, c * k_ * k_});
    specs.push_back({name + ".b", {1, 4 * c, 1, 1}, true, 1});
  }
  void cross_scale(const std::string& prefix, int coarse, int fine) {
    deconv(prefix + ".up", coarse, fine);
    conv(prefix + ".fuse", 2 * fine, fine, 1);
  }
  void urab(const std::string& prefix, int c, const ModelConfig& cfg) {
    for (int j = 0; j < cfg.urab_sampling_pairs; ++j)
      conv(prefix + ".down" + std::to_string(j), c, c, k_);
    const int reduced = std::max(1, c / cfg.attention_reduction);
    for (int i = 0; i < cfg.N; ++i) {
      const std::string p = prefix + ".cau" + std::to_string(i);
      conv(p + ".conv1", c, c, k_);
      conv(p + ".conv2", c, c, k_);
      conv(p + ".fc_reduce", c, reduced, 1);
      conv(p + ".fc_expand", reduced, c, 1);
    }
    for (int j = 0; j < cfg.urab_sampling_pairs; ++j) deconv(prefix + ".up" + std::to_string(j), c, c);
  }

  std::vector<ParamSpec> specs;

 private:
  void bias(const std::string& name, int cout) {
    specs.push_back({name + ".b", {1, cout, 1, 1}, true, 1});
  }
  int k_;
};

}  // namespace

std::vector<ParamSpec> param_layout(const ModelConfig& cfg) {
  cfg.validate();
  const auto& ch = cfg.scale_channels;
  LayoutBuilder b(cfg.kernel_size);
  for (int l = 0; l < cfg.levels; ++l) b.conv("init" + lvl(l), 3, ch[l], cfg.kernel_size);

  if (cfg.uses_cfm()) {
    for (int l = 0; l < cfg.levels; ++l) {
      const std::string p = "cfm" + lvl(l);
      if (l > 0 && cfg.cross_scale()) b.cross_scale(p, ch[l - 1], ch[l]);
      b.lstm(p + ".lstm", ch[l], ch[l]);
    }
  }
  if (cfg.uses_ffm()) {
    for (int k = 1; k <= cfg.M; ++k)
      for (int l = 0; l < cfg.levels; ++l) {
        const std::string p = "ffm" + std::to_string(k) + lvl(l);
        if (l > 0 && cfg.cross_scale()) b.cross_scale(p, ch[l - 1], ch[l]);
        b.urab(p + ".urab", ch[l], cfg);
      }
  }
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string p = "rm" + lvl(l);
    b.conv(p + ".merge", 2 * ch[l], ch[l], 1);
    if (l > 0) b.cross_scale(p, ch[l - 1], ch[l]);
  }
  b.conv("rm.out", ch.back(), 3, cfg.kernel_size);
  return std::move(b.specs);
}

ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  for (const auto& spec : param_layout(config)) {
    Tensor t(spec.shape, true);
    if (!spec.is_bias) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
      for (auto& v : t.mutable_data()) v = static_cast<real>(rng.uniform(-bound, bound));
    }
    store.add(spec.name, std::move(t));
  }
  return store;
}

std::size_t param_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& s : param_layout(config)) n += s.shape.numel();
  return n;
}

std::map<std::string, std::size_t> param_breakdown(const ModelConfig& config) {
  std::map<std::string, std::size_t> out{{"init", 0}, {"cfm", 0}, {"ffm", 0}, {"rm", 0}};
  for (const auto& s : param_layout(config)) {
    std::string top = s.name.substr(0, s.name.find('.'));
    if (top.rfind("ffm", 0) == 0) top = "ffm";
    out[top] += s.shape.numel();
  }
  return out;
}

void check_params(const ParamStore& params, const ModelConfig& config) {
  const auto layout = param_layout(config);
  if (layout.size() != params.size()) {
    throw ConfigError("parameter store has " + std::to_string(params.size()) +
                      " tensors, configuration expects " + std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params.names()[i] != layout[i].name) {
      throw ConfigError("parameter " + std::to_string(i) + " is '" + params.names()[i] +
                        "', expected '" + layout[i].name + "'");
    }
    if (!(params.tensors()[i].shape() == layout[i].shape)) {
      throw ConfigError("parameter '" + layout[i].name + "' has shape " +
                        params.tensors()[i].shape().str() + ", expected " +
                        layout[i].shape.str());
    }
  }
}

// ---------------------------------------------------------------------------
// Forward

namespace {

Tensor conv_named(const Tensor& x, const ParamStore& p, const std::string& name, int stride = 1) {
  const Tensor& w = p.at(name + ".w");
  return conv2d(x, w, p.at(name + ".b"), stride, w.h() / 2);
}

// Stride-2 upsampling that exactly doubles spatial extents.
Tensor upsample_named(const Tensor& x, const ParamStore& p, const std::string& name) {
  const Tensor& w = p.at(name + ".w");
  const int pad = w.h() / 2;
  // (H - 1) * 2 - 2 * pad + k + op == 2H  =>  op = 2 + 2 * pad - k
  const int op = 2 + 2 * pad - w.h();
  return conv2d_transpose(x, w, p.at(name + ".b"), 2, pad, op);
}

Tensor fuse_named(const Tensor& coarse, const Tensor& stream, const ParamStore& p,
                  const std::string& prefix) {
  const Tensor up = upsample_named(coarse, p, prefix + ".up");
  return conv_named(concat_channels(up, stream), p, prefix + ".fuse");
}

}  // namespace

LstmState conv_lstm_step(const Tensor& x, const LstmState& state, const ParamStore& params,
                         const std::string& prefix) {
  const Tensor& wx = params.at(prefix + ".w_x");
  const Tensor& wh = params.at(prefix + ".w_h");
  const int c = wh.c();
  if (!state.empty()) {
    if (!(state.h.shape() == state.c.shape())) {
      throw ShapeError("conv_lstm_step: hidden " + state.h.shape().str() + " vs cell " +
                       state.c.shape().str());
    }
    if (state.h.h() != x.h() || state.h.w() != x.w() || state.h.n() != x.n() ||
        state.h.c() != c) {
      throw ShapeError("conv_lstm_step: input " + x.shape().str() + " not aligned with state " +
                       state.h.shape().str());
    }
  }
  Tensor gates = conv2d(x, wx, params.at(prefix + ".b"), 1, wx.h() / 2);
  if (!state.empty()) gates = add(gates, conv2d(state.h, wh, Tensor{}, 1, wh.h() / 2));
  const Tensor i = sigmoid(slice_channels(gates, 0, c));
  const Tensor f = sigmoid(slice_channels(gates, c, 2 * c));
  const Tensor o = sigmoid(slice_channels(gates, 2 * c, 3 * c));
  const Tensor g = tanh(slice_channels(gates, 3 * c, 4 * c));
  Tensor cell = mul(i, g);
  if (!state.empty()) cell = add(mul(f, state.c), cell);
  LstmState next;
  next.h = mul(o, tanh(cell));
  next.c = cell;
  return next;
}

std::vector<Tensor> rru_forward(const std::vector<Tensor>& features, const ParamStore& params,
                                const ModelConfig& config, int steps,
                                std::vector<LstmState>* carry) {
  const auto levels = static_cast<std::size_t>(config.levels);
  if (features.size() != levels) {
    throw ConfigError("rru_forward: " + std::to_string(features.size()) +
                      " feature levels for a " + std::to_string(levels) + "-level model");
  }
  std::vector<LstmState> state(levels);
  if (carry != nullptr) {
    if (carry->size() == levels) state = *carry;
    else if (!carry->empty()) throw ConfigError("rru_forward: carried state level mismatch");
  }
  for (int t = 0; t < steps; ++t) {
    for (std::size_t l = 0; l < levels; ++l) {
      const std::string p = "cfm" + lvl(static_cast<int>(l));
      Tensor x = features[l];
      if (l > 0 && config.cross_scale()) {
        const Tensor& coarse_h = state[l - 1].h;
        x = fuse_named(coarse_h, features[l], params, p);
      }
      state[l] = conv_lstm_step(x, state[l], params, p + ".lstm");
    }
  }
  std::vector<Tensor> out(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    out[l] = state[l].empty() ? features[l] : add(state[l].h, features[l]);
  }
  if (carry != nullptr) *carry = std::move(state);
  return out;
}

Tensor cau_forward(const Tensor& x, const ParamStore& params, const std::string& prefix,
                   const ForwardOptions& opt) {
  const Tensor& w1 = params.at(prefix + ".conv1.w");
  if (w1.c() != x.c()) {
    throw ShapeError("cau_forward: input " + x.shape().str() + " vs weight " + w1.shape().str());
  }
  const Tensor f = conv_named(relu(conv_named(x, params, prefix + ".conv1")), params,
                              prefix + ".conv2");
  switch (opt.attention) {
    case AttentionOverride::Ones:
      return add(x, f);
    case AttentionOverride::Zeros:
      return add(x, scale(f, 0.0));
    case AttentionOverride::None:
      break;
  }
  const Tensor squeezed = relu(conv_named(global_avg_pool(f), params, prefix + ".fc_reduce"));
  const Tensor gate = sigmoid(conv_named(squeezed, params, prefix + ".fc_expand"));
  return add(x, mul(f, gate));
}

Tensor urab_forward(const Tensor& x, const ParamStore& params, const std::string& prefix,
                    const ModelConfig& config, const ForwardOptions& opt) {
  const int pairs = config.urab_sampling_pairs;
  const int div = 1 << pairs;
  if (x.h() % div != 0 || x.w() % div != 0) {
    throw ShapeError("urab_forward: extents of " + x.shape().str() + " not divisible by " +
                     std::to_string(div));
  }
  Tensor y = x;
  for (int j = 0; j < pairs; ++j) y = conv_named(y, params, prefix + ".down" + std::to_string(j), 2);
  for (int i = 0; i < config.N; ++i) y = cau_forward(y, params, prefix + ".cau" + std::to_string(i), opt);
  for (int j = pairs - 1; j >= 0; --j) y = upsample_named(y, params, prefix + ".up" + std::to_string(j));
  return add(x, y);
}

std::vector<Tensor> ffm_forward(const std::vector<Tensor>& inputs, const ParamStore& params,
                                const ModelConfig& config, int k, const ForwardOptions& opt) {
  std::vector<Tensor> out(inputs.size());
  for (std::size_t l = 0; l < inputs.size(); ++l) {
    const std::string p = "ffm" + std::to_string(k) + lvl(static_cast<int>(l));
    Tensor stream = inputs[l];
    if (l > 0 && config.cross_scale()) stream = fuse_named(out[l - 1], stream, params, p);
    out[l] = urab_forward(stream, params, p + ".urab", config, opt);
  }
  return out;
}

std::vector<Tensor> ffm_chain(const std::vector<Tensor>& inputs, const ParamStore& params,
                              const ModelConfig& config, const ForwardOptions& opt) {
  if (config.M < 1) return inputs;
  std::vector<Tensor> cur = ffm_forward(inputs, params, config, 1, opt);
  for (int k = 2; k <= config.M; ++k) {
    std::vector<Tensor> next_in(inputs.size());
    for (std::size_t l = 0; l < inputs.size(); ++l) next_in[l] = add(cur[l], inputs[l]);
    cur = ffm_forward(next_in, params, config, k, opt);
  }
  for (std::size_t l = 0; l < inputs.size(); ++l) cur[l] = add(cur[l], inputs[l]);
  return cur;
}

Tensor rm_forward(const std::vector<Tensor>& cfm_out, const std::vector<Tensor>& ffm_out,
                  const ParamStore& params, const ModelConfig& config) {
  const auto levels = static_cast<std::size_t>(config.levels);
  if (cfm_out.size() != levels || ffm_out.size() != levels) {
    throw ConfigError("rm_forward: expected " + std::to_string(levels) + " levels, got " +
                      std::to_string(cfm_out.size()) + " and " + std::to_string(ffm_out.size()));
  }
  Tensor acc;
  for (std::size_t l = 0; l < levels; ++l) {
    const std::string p = "rm" + lvl(static_cast<int>(l));
    const Tensor merged = conv_named(concat_channels(cfm_out[l], ffm_out[l]), params, p + ".merge");
    acc = l == 0 ? merged : fuse_named(acc, merged, params, p);
  }
  return conv_named(acc, params, "rm.out");
}

MspfnOutput mspfn_forward(const Tensor& rain, const ParamStore& params, const ModelConfig& config,
                          const ForwardOptions& opt) {
  check_params(params, config);
  if (rain.c() != 3) throw ShapeError("mspfn_forward: expected RGB input, got " + rain.shape().str());
  const int m = config.required_multiple();
  if (rain.h() % m != 0 || rain.w() % m != 0) {
    throw ShapeError("mspfn_forward: input " + rain.shape().str() + " extents must be multiples of " +
                     std::to_string(m));
  }
  const PyramidSet pyramid = build_pyramid(rain, config.levels);
  std::vector<Tensor> features(pyramid.size());
  for (std::size_t l = 0; l < pyramid.size(); ++l) {
    features[l] = conv_named(pyramid.levels[l], params, "init" + lvl(static_cast<int>(l)));
  }
  const std::vector<Tensor> cfm =
      config.uses_cfm() ? rru_forward(features, params, config, config.T) : features;
  const std::vector<Tensor> ffm = config.uses_ffm() ? ffm_chain(cfm, params, config, opt) : cfm;
  MspfnOutput out;
  out.residual = rm_forward(cfm, ffm, params, config);
  out.derained = clamp(sub(rain, out.residual), 0.0, 1.0);
  return out;
}

}  // namespace MSPFN_ABI
}  // namespace mspfn
