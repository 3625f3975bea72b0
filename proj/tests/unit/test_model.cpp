#include <cmath>
#include <set>

#include "doctest.h"
#include "mspfn/autograd.hpp"
#include "mspfn/losses.hpp"
#include "mspfn/model.hpp"
#include "mspfn/ops.hpp"
#include "mspfn/synth.hpp"
#include "oracles.hpp"

using namespace mspfn;
using oracle::random_tensor;

namespace {

void zero_prefix(ParamStore& p, const std::string& prefix) {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.names()[i].rfind(prefix, 0) == 0)
      for (auto& v : p.tensors()[i].mutable_data()) v = 0;
}

void zero_all(ParamStore& p) { zero_prefix(p, ""); }

ParamStore lstm_params(int cin, int c, std::uint64_t seed, bool zero = false) {
  ParamStore p;
  p.add("l.w_x", zero ? Tensor({4 * c, cin, 3, 3}) : random_tensor({4 * c, cin, 3, 3}, seed, -0.4, 0.4));
  p.add("l.w_h", zero ? Tensor({4 * c, c, 3, 3}) : random_tensor({4 * c, c, 3, 3}, seed + 1, -0.4, 0.4));
  p.add("l.b", zero ? Tensor({1, 4 * c, 1, 1}) : random_tensor({1, 4 * c, 1, 1}, seed + 2));
  return p;
}

ParamStore cau_params(int c, int r, std::uint64_t seed) {
  ParamStore p;
  p.add("u.conv1.w", random_tensor({c, c, 3, 3}, seed, -0.3, 0.3));
  p.add("u.conv1.b", random_tensor({1, c, 1, 1}, seed + 1, -0.1, 0.1));
  p.add("u.conv2.w", random_tensor({c, c, 3, 3}, seed + 2, -0.3, 0.3));
  p.add("u.conv2.b", random_tensor({1, c, 1, 1}, seed + 3, -0.1, 0.1));
  p.add("u.fc_reduce.w", random_tensor({r, c, 1, 1}, seed + 4));
  p.add("u.fc_reduce.b", random_tensor({1, r, 1, 1}, seed + 5));
  p.add("u.fc_expand.w", random_tensor({c, r, 1, 1}, seed + 6));
  p.add("u.fc_expand.b", random_tensor({1, c, 1, 1}, seed + 7));
  return p;
}

}  // namespace

TEST_CASE("variant presets") {
  CHECK(make_variant("final_m17n1").M == 17);
  CHECK(make_variant("final_m17n1").N == 1);
  const auto lw = make_variant("lightweight");
  CHECK(lw.scale_channels == std::vector<int>{32, 32, 32});
  CHECK(lw.M == 5);
  CHECK(lw.N == 1);
  CHECK(lw.urab_sampling_pairs == 2);
  CHECK(make_variant("model1").levels == 1);
  CHECK(make_variant("model2").variant == Variant::Model2_NoCFM);
  CHECK(make_variant("model3").variant == Variant::Model3_NoFFM);
  CHECK(make_variant("model4").variant == Variant::Model4_ParallelFusion);
  CHECK(make_variant("model5").M == 5);
  CHECK(make_variant("model6").N == 3);
  const auto base = make_variant("baseline_m10n3");
  CHECK(base.levels == 3);
  CHECK(base.scale_channels == std::vector<int>{32, 64, 128});
  CHECK(base.M == 10);
  CHECK(base.N == 3);
  CHECK(make_variant("m8n5").N == 5);
  CHECK_THROWS_AS(make_variant("model7"), ConfigError);
  for (const auto& n : variant_names()) CHECK_NOTHROW(make_variant(n));
}

TEST_CASE("config validation and json") {
  ModelConfig c;
  c.scale_channels = {8, 16};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.T = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.N = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.M = 0;
  CHECK_NOTHROW(c.validate());

  const auto lw = make_variant("lightweight");
  nlohmann::json j = lw;
  CHECK(j.get<ModelConfig>() == lw);
  CHECK(parse_variant(variant_name(Variant::Model4_ParallelFusion)) == Variant::Model4_ParallelFusion);

  CHECK(make_variant("baseline_m10n3").required_multiple() == 8);
  CHECK(lw.required_multiple() == 16);
  CHECK(make_variant("model1").required_multiple() == 2);
  CHECK(make_variant("model3").required_multiple() == 4);
}

TEST_CASE("init_params") {
  const auto cfg = make_variant("tiny");
  const auto a = init_params(cfg, 7), b = init_params(cfg, 7), c = init_params(cfg, 8);
  CHECK(bit_equal(a, b));
  CHECK_FALSE(bit_equal(a, c));
  const auto layout = param_layout(cfg);
  REQUIRE(layout.size() == a.size());
  std::set<const real*> storage;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    CHECK(a.names()[i] == layout[i].name);
    CHECK(a.tensors()[i].shape() == layout[i].shape);
    storage.insert(a.tensors()[i].ptr());
    const double bound = 1.0 / std::sqrt(static_cast<double>(layout[i].fan_in));
    for (real v : a.tensors()[i].data()) {
      if (layout[i].is_bias) CHECK(v == 0);
      else CHECK(std::abs(v) <= bound);
    }
  }
  CHECK(storage.size() == a.size());
  CHECK(a.scalar_count() == param_count(cfg));
  CHECK(a.contains("cfm.level2.lstm.w_x"));
  CHECK(a.at("cfm.level2.lstm.w_x").shape() == Shape{128, 32, 3, 3});
  CHECK(a.contains("ffm2.level1.urab.cau0.fc_reduce.w"));
  CHECK(a.contains("rm.out.w"));
  CHECK_THROWS_AS(check_params(init_params(make_variant("model5"), 0), cfg), ConfigError);
}

TEST_CASE("param_count orderings") {
  const auto count = [](ModelConfig c) { return param_count(c); };
  ModelConfig base = make_variant("baseline_m10n3");
  for (int m = 1; m < 6; ++m) {
    ModelConfig a = base, b = base;
    a.M = m;
    b.M = m + 1;
    CHECK(count(a) < count(b));
    a.M = b.M = 3;
    a.N = m;
    b.N = m + 1;
    CHECK(count(a) < count(b));
  }
  ModelConfig m2 = base, m4 = base;
  m2.M = 2;
  m4.M = 4;
  CHECK(count(m2) < count(m4));
  CHECK(count(make_variant("model3")) < count(base));
  CHECK(param_breakdown(make_variant("model3")).at("ffm") == 0);

  ModelConfig one = base;
  one.levels = 1;
  one.scale_channels = {32};
  ModelConfig two = base;
  two.levels = 2;
  two.scale_channels = {32, 32};
  ModelConfig three = base;
  three.scale_channels = {32, 32, 32};
  CHECK(count(one) < count(two));
  CHECK(count(two) < count(three));

  ModelConfig wide = base;
  wide.scale_channels = {32, 64, 136};
  CHECK(count(base) < count(wide));
  wide.scale_channels = {40, 64, 128};
  CHECK(count(base) < count(wide));

  // Recurrent weights are shared across steps, so T leaves the count unchanged.
  ModelConfig t5 = base;
  t5.T = 5;
  CHECK(count(t5) == count(base));

  // A URAB's parameters grow linearly in N.
  ModelConfig n1 = make_variant("tiny"), n2 = n1, n3 = n1;
  n2.N = 2;
  n3.N = 3;
  CHECK(count(n3) - count(n2) == count(n2) - count(n1));

  const auto bd = param_breakdown(base);
  std::size_t total = 0;
  for (const auto& [k, v] : bd) total += v;
  CHECK(total == count(base));
}

TEST_CASE("conv_lstm_step analytic cases") {
  const Tensor x = random_tensor({1, 2, 4, 4}, 1);
  const auto zp = lstm_params(2, 3, 0, true);
  const auto s0 = conv_lstm_step(x, {}, zp, "l");
  for (real v : s0.h.data()) CHECK(v == 0);
  for (real v : s0.c.data()) CHECK(v == 0);

  const Tensor c = random_tensor({1, 3, 4, 4}, 2, -2, 2);
  const auto s1 = conv_lstm_step(x, {Tensor({1, 3, 4, 4}), c}, zp, "l");
  for (std::size_t i = 0; i < c.numel(); ++i) {
    CHECK(s1.c.data()[i] == doctest::Approx(0.5 * c.data()[i]).epsilon(1e-15));
    CHECK(s1.h.data()[i] == doctest::Approx(0.5 * std::tanh(0.5 * c.data()[i])).epsilon(1e-14));
  }
  CHECK_THROWS_AS(conv_lstm_step(x, {Tensor({1, 3, 4, 5}), Tensor({1, 3, 4, 5})}, zp, "l"), ShapeError);
}

TEST_CASE("conv_lstm_step matches the scalar reference") {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const int cin = 2, c = 3;
    const Tensor x = random_tensor({2, cin, 5, 4}, seed);
    const Tensor h = random_tensor({2, c, 5, 4}, seed + 10), cs = random_tensor({2, c, 5, 4}, seed + 20);
    const auto p = lstm_params(cin, c, seed + 30);
    const auto got = conv_lstm_step(x, {h, cs}, p, "l");
    std::vector<double> ho, co;
    oracle::lstm_step(oracle::values(x), oracle::dims(x), oracle::values(h), oracle::values(cs), c,
                      oracle::values(p.at("l.w_x")), oracle::dims(p.at("l.w_x")),
                      oracle::values(p.at("l.w_h")), oracle::dims(p.at("l.w_h")),
                      oracle::values(p.at("l.b")), ho, co);
    for (std::size_t i = 0; i < ho.size(); ++i) {
      CHECK(std::abs(got.h.data()[i] - ho[i]) <= 1e-6);
      CHECK(std::abs(got.c.data()[i] - co[i]) <= 1e-6);
    }
    // A zero state is the empty state.
    const auto a = conv_lstm_step(x, {}, p, "l");
    const auto b = conv_lstm_step(x, {Tensor({2, c, 5, 4}), Tensor({2, c, 5, 4})}, p, "l");
    CHECK(max_abs_diff(a.h, b.h) <= 1e-15);
  }
}

TEST_CASE("rru_forward") {
  auto cfg = make_variant("tiny");
  auto params = init_params(cfg, 3);
  std::vector<Tensor> feats = {random_tensor({2, 8, 4, 4}, 1), random_tensor({2, 16, 8, 8}, 2),
                               random_tensor({2, 32, 16, 16}, 3)};
  const auto out = rru_forward(feats, params, cfg, 2);
  for (std::size_t l = 0; l < 3; ++l) CHECK(out[l].shape() == feats[l].shape());

  // T=2 in one call equals two T=1 calls threading the state.
  std::vector<LstmState> carry;
  (void)rru_forward(feats, params, cfg, 1, &carry);
  const auto twice = rru_forward(feats, params, cfg, 1, &carry);
  for (std::size_t l = 0; l < 3; ++l) CHECK(bit_equal(twice[l], out[l]));

  zero_all(params);
  const auto passthrough = rru_forward(feats, params, cfg, 1);
  for (std::size_t l = 0; l < 3; ++l) CHECK(bit_equal(passthrough[l], feats[l]));

  feats.pop_back();
  CHECK_THROWS_AS(rru_forward(feats, params, cfg, 1), ConfigError);
}

TEST_CASE("cau_forward") {
  const int c = 8, r = 2;
  const Tensor x = random_tensor({2, c, 6, 6}, 1);
  auto p = cau_params(c, r, 10);

  // Direct evaluation of f and the attention vector.
  oracle::Dims fd{}, hd{};
  auto hv = oracle::conv2d(oracle::values(x), oracle::dims(x), oracle::values(p.at("u.conv1.w")),
                           oracle::dims(p.at("u.conv1.w")), oracle::values(p.at("u.conv1.b")), 1, 1, hd);
  for (auto& v : hv) v = std::max(v, 0.0);
  const auto fv = oracle::conv2d(hv, hd, oracle::values(p.at("u.conv2.w")), oracle::dims(p.at("u.conv2.w")),
                                 oracle::values(p.at("u.conv2.b")), 1, 1, fd);
  const Tensor y = cau_forward(x, p, "u");
  for (int n = 0; n < 2; ++n) {
    std::vector<double> pooled(c, 0.0), mid(r), s(c);
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < 36; ++i) pooled[ch] += fv[fd.idx(n, ch, 0, 0) + i];
      pooled[ch] /= 36;
    }
    for (int j = 0; j < r; ++j) {
      double a = p.at("u.fc_reduce.b").data()[j];
      for (int ch = 0; ch < c; ++ch) a += p.at("u.fc_reduce.w").at(j, ch, 0, 0) * pooled[ch];
      mid[j] = std::max(a, 0.0);
    }
    for (int ch = 0; ch < c; ++ch) {
      double a = p.at("u.fc_expand.b").data()[ch];
      for (int j = 0; j < r; ++j) a += p.at("u.fc_expand.w").at(ch, j, 0, 0) * mid[j];
      s[ch] = oracle::sigmoid(a);
    }
    for (int ch = 0; ch < c; ++ch) {
      double dn = 0, fn = 0;
      for (int i = 0; i < 36; ++i) {
        const std::size_t k = fd.idx(n, ch, 0, 0) + i;
        const double d = y.data()[k] - x.data()[k];
        dn += d * d;
        fn += fv[k] * fv[k];
      }
      CHECK(std::sqrt(dn) == doctest::Approx(s[ch] * std::sqrt(fn)).epsilon(1e-10));
    }
  }

  // Attention forced to ones gives x + f.
  const Tensor y1 = cau_forward(x, p, "u", {AttentionOverride::Ones});
  for (std::size_t i = 0; i < fv.size(); ++i) CHECK(std::abs(y1.data()[i] - (x.data()[i] + fv[i])) <= 1e-12);

  zero_prefix(p, "u.conv");
  CHECK(bit_equal(cau_forward(x, p, "u"), x));
  CHECK_THROWS_AS((void)cau_forward(random_tensor({1, 4, 6, 6}, 2), p, "u"), ShapeError);
}

TEST_CASE("urab_forward") {
  for (int pairs : {1, 2}) {
    auto cfg = make_variant("tiny");
    cfg.urab_sampling_pairs = pairs;
    cfg.N = 2;
    auto params = init_params(cfg, 4);
    const Tensor x = random_tensor({1, 16, 8, 8}, 5);
    const std::string pre = "ffm1.level1.urab";
    CHECK(urab_forward(x, params, pre, cfg).shape() == x.shape());
    // Silenced attention turns every CAU into the identity, leaving down/up around x.
    auto bare = cfg;
    bare.N = 0;
    CHECK(max_abs_diff(urab_forward(x, params, pre, cfg, {AttentionOverride::Zeros}),
                       urab_forward(x, params, pre, bare)) <= 1e-12);
    const int bad = (1 << pairs) * 3 - 1;
    CHECK_THROWS_AS((void)urab_forward(random_tensor({1, 16, bad, bad}, 6), params, pre, cfg), ShapeError);
  }
}

TEST_CASE("ffm_chain") {
  auto cfg = make_variant("tiny");
  const std::vector<Tensor> in = {random_tensor({1, 8, 4, 4}, 1), random_tensor({1, 16, 8, 8}, 2),
                                  random_tensor({1, 32, 16, 16}, 3)};
  cfg.M = 1;
  const auto params = init_params(cfg, 9);
  const auto chain = ffm_chain(in, params, cfg);
  const auto single = ffm_forward(in, params, cfg, 1);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(chain[l].shape() == in[l].shape());
    CHECK(bit_equal(chain[l], add(single[l], in[l])));
  }
  cfg.M = 3;
  const auto deep = ffm_chain(in, init_params(cfg, 9), cfg);
  for (std::size_t l = 0; l < 3; ++l) CHECK(deep[l].shape() == in[l].shape());
}

TEST_CASE("rm_forward") {
  const auto cfg = make_variant("tiny");
  auto params = init_params(cfg, 2);
  std::vector<Tensor> cfm = {random_tensor({1, 8, 4, 4}, 1), random_tensor({1, 16, 8, 8}, 2),
                             random_tensor({1, 32, 16, 16}, 3)};
  for (auto& t : cfm) t.set_requires_grad(true);
  const std::vector<Tensor> ffm = {random_tensor({1, 8, 4, 4}, 4), random_tensor({1, 16, 8, 8}, 5),
                                   random_tensor({1, 32, 16, 16}, 6)};
  Tensor r = rm_forward(cfm, ffm, params, cfg);
  CHECK(r.shape() == Shape{1, 3, 16, 16});
  Tensor m = mean(r);
  backward(m);
  for (const auto& t : cfm) {
    REQUIRE(t.has_grad());
    double g = 0;
    for (real v : t.grad()) g += std::abs(v);
    CHECK(g > 0);
  }
  zero_prefix(params, "rm.");
  for (real v : rm_forward(cfm, ffm, params, cfg).data()) CHECK(v == 0);
}

TEST_CASE("mspfn_forward identities and shapes") {
  const auto cfg = make_variant("tiny");
  auto params = init_params(cfg, 3);
  const Tensor rain = random_tensor({2, 3, 32, 32}, 8, 0, 1);
  const auto out = mspfn_forward(rain, params, cfg);
  CHECK(out.derained.shape() == rain.shape());
  for (std::size_t i = 0; i < rain.numel(); ++i) {
    const double d = out.derained.data()[i];
    if (d > 0 && d < 1) CHECK(d + out.residual.data()[i] == doctest::Approx(rain.data()[i]).epsilon(1e-14));
  }

  const auto again = mspfn_forward(rain, params, cfg);
  CHECK(bit_equal(again.residual, out.residual));
  CHECK(bit_equal(again.derained, out.derained));

  for (const auto& [h, w] : std::vector<std::pair<int, int>>{{64, 64}, {96, 64}, {128, 96}}) {
    const Tensor img = random_tensor({1, 3, h, w}, 9, 0, 1);
    CHECK(mspfn_forward(img, params, cfg).derained.shape() == img.shape());
  }
  CHECK_THROWS_AS((void)mspfn_forward(random_tensor({1, 3, 30, 32}, 1, 0, 1), params, cfg), ShapeError);
  CHECK_THROWS_AS((void)mspfn_forward(random_tensor({1, 1, 32, 32}, 1, 0, 1), params, cfg), ShapeError);
  CHECK_THROWS((void)mspfn_forward(rain, init_params(make_variant("model1"), 1), cfg));

  zero_prefix(params, "rm.out");
  CHECK(bit_equal(mspfn_forward(rain, params, cfg).derained, rain));
}

TEST_CASE("ablation smoke matrix") {
  const Tensor rain = random_tensor({1, 3, 64, 64}, 11, 0, 1);
  for (const char* base : {"tiny", "model2", "model3"}) {
    auto cfg = make_variant(base);
    // Narrow the ablations so the matrix stays quick; topology is what is under test.
    cfg.scale_channels = std::vector<int>(static_cast<std::size_t>(cfg.levels), 8);
    cfg.M = std::min(cfg.M, 2);
    cfg.N = 1;
    INFO(base);
    const auto out = mspfn_forward(rain, init_params(cfg, 5), cfg);
    CHECK(out.derained.shape() == rain.shape());
    CHECK(all_finite(out.residual));
  }
}

TEST_CASE("end-to-end gradient matches finite differences") {
  auto cfg = make_variant("tiny");
  cfg.M = 1;
  auto params = init_params(cfg, 12);
  params.set_requires_grad(true);
  const Tensor clean = random_tensor({1, 3, 16, 16}, 13, 0.3, 0.6);
  const Tensor rain = random_tensor({1, 3, 16, 16}, 14, 0.4, 0.7);
  const Tensor truth = sub(rain, clean);
  ScalarClosure fn = [&](std::span<Tensor>) {
    const auto out = mspfn_forward(rain, params, cfg);
    return total_loss(out.residual, truth, clean, out.derained, {}).total;
  };
  GradCheckOptions opt;
  opt.step = 1e-5;
  opt.tol = 1e-4;
  opt.max_coords = 240;
  opt.seed = 3;
  const auto rep = grad_check(fn, params.tensors(), opt);
  CHECK(rep.coords_checked >= 200);
  CHECK(rep.max_rel_err < 1e-4);
  CHECK(rep.pass);
}

TEST_CASE("residual response stays near a local streak") {
  const auto cfg = make_variant("tiny");
  const auto params = init_params(cfg, 21);
  const int size = 64, q = size / 2, dilate = 8;
  const Tensor clean = procedural_scene(size, size, 4);
  // Streaks confined to the top-left quadrant.
  RainParams rp;
  rp.density = 0.05;
  rp.seed = 2;
  const Tensor layer = streak_layer(q, q, rp);
  Tensor rain = clean.clone();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < q; ++y)
      for (int x = 0; x < q; ++x) rain.at(0, c, y, x) = std::min<real>(1, rain.at(0, c, y, x) + layer.at(0, 0, y, x));

  NoGradGuard no_grad;
  const Tensor d = sub(mspfn_forward(rain, params, cfg).residual, mspfn_forward(clean, params, cfg).residual);
  double inside = 0, total = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double e = static_cast<double>(d.at(0, c, y, x)) * d.at(0, c, y, x);
        total += e;
        if (y < q + dilate && x < q + dilate) inside += e;
      }
  REQUIRE(total > 0);
  CHECK((total - inside) / total < 0.5);
}
