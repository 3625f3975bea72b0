#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mspfn/tensor.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

enum class Variant {
  Full,
  Model1_SingleScale,
  Model2_NoCFM,
  Model3_NoFFM,
  Model4_ParallelFusion,
  Lightweight,
};

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Architecture hyperparameters. `scale_channels` runs coarse to fine.
struct ModelConfig {
  int levels = 3;
  std::vector<int> scale_channels{32, 64, 128};
  int M = 10;  // cascaded fine-fusion modules
  int N = 3;   // channel attention units per URAB
  int T = 3;   // recurrent steps per RRU
  int urab_sampling_pairs = 1;
  int kernel_size = 3;
  int attention_reduction = 4;
  Variant variant = Variant::Full;

  void validate() const;
  [[nodiscard]] bool uses_cfm() const { return variant != Variant::Model2_NoCFM; }
  [[nodiscard]] bool uses_ffm() const { return variant != Variant::Model3_NoFFM && M > 0; }
  /// Cross-scale links inside CFM and FFM (all but the parallel-fusion variant).
  [[nodiscard]] bool cross_scale() const { return variant != Variant::Model4_ParallelFusion; }
  /// Input extents must be multiples of this.
  [[nodiscard]] int required_multiple() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Named presets: model1..model6, baseline_m10n3, final_m17n1, m30n1, m13n2,
/// m17n2, m8n5, lightweight, and the desk-scale `tiny`.
ModelConfig make_variant(const std::string& name);
const std::vector<std::string>& variant_names();

/// Ordered name -> tensor map. Iteration order is insertion order and is the
/// order used by checkpoints.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t);
  [[nodiscard]] bool contains(const std::string& name) const;
  [[nodiscard]] const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  [[nodiscard]] std::size_t size() const { return tensors_.size(); }
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
  [[nodiscard]] const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  [[nodiscard]] std::size_t scalar_count() const;

  void zero_grad();
  void set_requires_grad(bool value);
  [[nodiscard]] ParamStore clone() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

bool bit_equal(const ParamStore& a, const ParamStore& b);

/// One learnable tensor in the documented naming scheme.
///
/// Per pyramid level l (0 = coarsest), FFM index k (1-based), CAU index i and
/// sampling stage j:
///   init.level{l}.{w,b}                      3 -> C_l, kxk
///   cfm.level{l}.up.{w,b}                    C_{l-1} -> C_l transpose conv (l >= 1, cross-scale)
///   cfm.level{l}.fuse.{w,b}                  2C_l -> C_l, 1x1 (l >= 1, cross-scale)
///   cfm.level{l}.lstm.{w_x,w_h,b}            gates stacked i,f,o,g: 4C_l outputs
///   ffm{k}.level{l}.up / .fuse               as in cfm
///   ffm{k}.level{l}.urab.down{j}.{w,b}       stride-2 conv
///   ffm{k}.level{l}.urab.cau{i}.conv1/conv2  kxk convs
///   ffm{k}.level{l}.urab.cau{i}.fc_reduce    C -> C/r, 1x1
///   ffm{k}.level{l}.urab.cau{i}.fc_expand    C/r -> C, 1x1
///   ffm{k}.level{l}.urab.up{j}.{w,b}         stride-2 transpose conv
///   rm.level{l}.merge.{w,b}                  2C_l -> C_l, 1x1
///   rm.level{l}.up / .fuse                   (l >= 1)
///   rm.out.{w,b}                             C_fine -> 3, kxk
struct ParamSpec {
  std::string name;
  Shape shape;
  bool is_bias = false;
  int fan_in = 1;
};

std::vector<ParamSpec> param_layout(const ModelConfig& config);

/// Conv weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

std::size_t param_count(const ModelConfig& config);
/// Parameter totals keyed by top-level module: init, cfm, ffm, rm.
std::map<std::string, std::size_t> param_breakdown(const ModelConfig& config);

/// Throws ConfigError when `params` does not match `config`'s layout.
void check_params(const ParamStore& params, const ModelConfig& config);

// ---------------------------------------------------------------------------
// Forward pass building blocks.

enum class AttentionOverride { None, Ones, Zeros };

struct ForwardOptions {
  AttentionOverride attention = AttentionOverride::None;
};

/// Conv-LSTM hidden and cell state. Undefined tensors denote the zero state.
struct LstmState {
  Tensor h;
  Tensor c;
  [[nodiscard]] bool empty() const { return !h.defined(); }
};

LstmState conv_lstm_step(const Tensor& x, const LstmState& state, const ParamStore& params,
                         const std::string& prefix);

/// Coarse-fusion module: one residual recurrent unit per level, coarse-to-fine
/// guidance at every step. When `carry` is given it supplies the initial
/// states (empty entries are zero) and receives the final ones.
std::vector<Tensor> rru_forward(const std::vector<Tensor>& features, const ParamStore& params,
                                const ModelConfig& config, int steps,
                                std::vector<LstmState>* carry = nullptr);

Tensor cau_forward(const Tensor& x, const ParamStore& params, const std::string& prefix,
                   const ForwardOptions& opt = {});

Tensor urab_forward(const Tensor& x, const ParamStore& params, const std::string& prefix,
                    const ModelConfig& config, const ForwardOptions& opt = {});

/// A single fine-fusion module (1-based index k).
std::vector<Tensor> ffm_forward(const std::vector<Tensor>& inputs, const ParamStore& params,
                                const ModelConfig& config, int k, const ForwardOptions& opt = {});

/// M cascaded FFMs with additive long skips from the chain input.
std::vector<Tensor> ffm_chain(const std::vector<Tensor>& inputs, const ParamStore& params,
                              const ModelConfig& config, const ForwardOptions& opt = {});

Tensor rm_forward(const std::vector<Tensor>& cfm_out, const std::vector<Tensor>& ffm_out,
                  const ParamStore& params, const ModelConfig& config);

struct MspfnOutput {
  Tensor residual;
  Tensor derained;
};

MspfnOutput mspfn_forward(const Tensor& rain, const ParamStore& params, const ModelConfig& config,
                          const ForwardOptions& opt = {});

}  // namespace MSPFN_ABI
}  // namespace mspfn
