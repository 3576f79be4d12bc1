// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "support/model_checks.hpp"
#include "support/test_util.hpp"
#include "trmqe/checkpoint.hpp"
#include "trmqe/errors.hpp"
#include "trmqe/model.hpp"

using namespace trmqe;
using trmqe::test::random_matrix;

namespace {

TrmConfig desk_config() {
  TrmConfig c;
  c.input_dim = 16;
  c.hidden_dim = 64;
  c.n_heads = 4;
  c.l_cycles = 4;
  c.external_steps = 1;
  c.max_seq_len = 64;
  c.dropout = 0.0;
  return c;
}

struct Pair {
  FloatMatrix src, tr;
};

Pair random_pair(std::size_t s, std::size_t t, std::size_t din, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {random_matrix(s, din, rng), random_matrix(t, din, rng)};
}

double sinusoid(std::size_t pos, std::size_t i, std::size_t d) {
  const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i - i % 2) / d);
  return i % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("trmqe_test_model_" + name);
}

}  // namespace

TEST_CASE("assembled sequence length and markers") {
  TrmConfig cfg = desk_config();
  TrmModel<float> model(cfg);

  SUBCASE("s=2, t=3 gives 8 positions") {
    auto p = random_pair(2, 3, cfg.input_dim, 1);
    const SequencePair sp{&p.src, &p.tr};
    auto batch = pack_batch<float>(std::span(&sp, 1), cfg);
    CHECK(batch.total_rows() == 8);
    CHECK(model.assemble(batch).shape() == ag::Shape{8, cfg.hidden_dim});
    CHECK(batch.layout[0].source == 1);
    CHECK(batch.layout[3].source == 2);
    CHECK(batch.layout[7].source == 3);
  }
  SUBCASE("empty source gives t+3 positions") {
    auto p = random_pair(0, 4, cfg.input_dim, 2);
    const SequencePair sp{&p.src, &p.tr};
    auto batch = pack_batch<float>(std::span(&sp, 1), cfg);
    CHECK(batch.total_rows() == 7);
    const auto out = model.forward(batch);
    CHECK(out.quality.numel() == 1);
  }
  SUBCASE("overlong pair loses its translation tail") {
    cfg.max_seq_len = 10;
    auto p = random_pair(4, 9, cfg.input_dim, 3);
    const SequencePair sp{&p.src, &p.tr};
    auto batch = pack_batch<float>(std::span(&sp, 1), cfg);
    CHECK(batch.total_rows() == 10);
    CHECK(batch.truncated == 1);
    // All four source rows survive; three translation rows remain.
    std::size_t tokens = 0;
    for (const auto& r : batch.layout) tokens += r.source == 0;
    CHECK(tokens == 7);
    CHECK(batch.layout[5].source == 2);
  }
}

TEST_CASE("identity projection passes source rows through up to the position signal") {
  TrmConfig cfg = desk_config();
  cfg.input_dim = cfg.hidden_dim;
  TrmModel<double> model(cfg);
  auto& w = model.params().at("embedding.proj.weight");
  auto wd = w.mutable_data();
  std::fill(wd.begin(), wd.end(), 0.0);
  for (std::size_t i = 0; i < cfg.hidden_dim; ++i) wd[i * cfg.hidden_dim + i] = 1.0;

  auto p = random_pair(3, 2, cfg.input_dim, 4);
  const SequencePair sp{&p.src, &p.tr};
  const auto x = model.assemble(pack_batch<double>(std::span(&sp, 1), cfg));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < cfg.hidden_dim; ++c) {
      CHECK(x.at(r + 1, c) - sinusoid(r + 1, c, cfg.hidden_dim) ==
            doctest::Approx(p.src(r, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("shared block at initialization is the identity") {
  TrmConfig cfg = desk_config();
  TrmModel<float> model(cfg);
  std::mt19937_64 rng(5);
  auto x = trmqe::test::random_tensor<float>({9, cfg.hidden_dim}, rng);
  std::size_t counter = 0;
  const auto y = model.shared_block_forward(x, {0, 4, 9}, {}, counter);
  CHECK(counter == 2);
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y.data()[i] - x.data()[i]) <= 1e-5f);

  model.shared_block_forward(y, {0, 4, 9}, {}, counter);
  CHECK(counter == 4);
}

TEST_CASE("layer applications equal N times 2L") {
  auto p = random_pair(2, 3, 16, 6);
  for (auto [n, l] : {std::pair{1, 6}, std::pair{4, 4}, std::pair{16, 1}, std::pair{3, 2}}) {
    TrmConfig cfg = desk_config();
    cfg.external_steps = n;
    cfg.l_cycles = l;
    TrmModel<float> model(cfg);
    const auto out = model.forward(p.src, p.tr);
    CHECK(out.layer_applications == static_cast<std::size_t>(n * 2 * l));
    CHECK(out.steps.size() == static_cast<std::size_t>(n));
  }
}

TEST_CASE("single-step forward matches a hand-driven step loop") {
  TrmConfig cfg = desk_config();
  cfg.l_cycles = 3;
  TrmModel<double> model(cfg);
  model.randomize(7, 0.1);
  auto p = random_pair(2, 2, cfg.input_dim, 8);
  const SequencePair sp{&p.src, &p.tr};
  const auto batch = pack_batch<double>(std::span(&sp, 1), cfg);

  ag::Tensor64 state = model.assemble(batch);
  std::size_t counter = 0;
  for (int c = 0; c < 3; ++c) state = model.shared_block_forward(state, batch.offsets, {}, counter);
  // Head arithmetic spelled out: rms-norm of row 0, then the 2-logit projection.
  const auto& gain = model.params().at("head.norm.gain");
  const auto& wq = model.params().at("head.q.weight");
  const auto& bq = model.params().at("head.q.bias");
  double ms = 0;
  for (std::size_t c = 0; c < cfg.hidden_dim; ++c) ms += state.at(0, c) * state.at(0, c);
  const double inv = 1.0 / std::sqrt(ms / cfg.hidden_dim + cfg.norm_eps);
  double q = bq.data()[0];
  for (std::size_t c = 0; c < cfg.hidden_dim; ++c) q += state.at(0, c) * inv * gain.data()[c] * wq.at(c, 0);

  const auto out = model.forward(batch);
  CHECK(out.quality.item() == doctest::Approx(1.0 / (1.0 + std::exp(-q))).epsilon(1e-12));
  const auto head = out.head_outputs(0).at(0);
  CHECK(head.quality == 1.0 / (1.0 + std::exp(-head.q_halt)));
}

TEST_CASE("quality is in (0,1) and forward is deterministic") {
  TrmConfig cfg = desk_config();
  cfg.external_steps = 2;
  TrmModel<float> a(cfg), b(cfg);
  a.randomize(11, 0.5);
  b.randomize(11, 0.5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = random_pair(1 + seed % 4, 1 + seed % 3, cfg.input_dim, seed);
    const float qa = a.forward(p.src, p.tr).quality.item();
    const float qb = b.forward(p.src, p.tr).quality.item();
    CHECK(qa > 0.0f);
    CHECK(qa < 1.0f);
    CHECK(std::bit_cast<std::uint32_t>(qa) == std::bit_cast<std::uint32_t>(qb));
  }
}

TEST_CASE("parameter names and counts do not depend on L or N") {
  TrmConfig cfg = desk_config();
  cfg.l_cycles = 1;
  cfg.external_steps = 1;
  const TrmModel<float> ref(cfg);
  for (std::size_t l = 1; l <= 6; ++l) {
    for (std::size_t n : {1u, 7u, 16u}) {
      cfg.l_cycles = l;
      cfg.external_steps = n;
      const TrmModel<float> m(cfg);
      CHECK(m.params().names() == ref.params().names());
      CHECK(count_trainable(m.params()) == count_trainable(ref.params()));
    }
  }
}

TEST_CASE("gradients from an L=4 forward land on the single shared block") {
  TrmConfig cfg = desk_config();
  TrmModel<float> model(cfg);
  model.randomize(12, 0.05);
  auto p = random_pair(3, 3, cfg.input_dim, 13);
  const auto out = model.forward(p.src, p.tr);
  const float target = 0.7f;
  ag::backward(ag::mse_loss(out.quality, std::span<const float>(&target, 1)));
  for (const auto& name : model.params().names()) {
    if (name.rfind("block.", 0) != 0) continue;
    const auto& t = model.params().at(name);
    INFO(name);
    REQUIRE(t.has_grad());
    double norm = 0;
    for (float g : t.grad()) norm += std::abs(g);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("unshared stack") {
  TrmConfig cfg = desk_config();
  cfg.l_cycles = 1;
  TrmModel<float> shared(cfg);
  shared.randomize(14, 0.2);

  SUBCASE("depth 2 with copied weights reproduces the shared model exactly") {
    const auto stack = unshared_from_shared(shared, 2);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto p = random_pair(2 + seed, 3, cfg.input_dim, 100 + seed);
      CHECK(stack.forward(p.src, p.tr).quality.item() == shared.forward(p.src, p.tr).quality.item());
    }
  }
  SUBCASE("layer weights are distinct tensors") {
    const auto stack = unshared_from_shared(shared, 4);
    CHECK(stack.params().at("stack.layer0.attn.wq").node() != stack.params().at("stack.layer2.attn.wq").node());
    CHECK_FALSE(stack.params().contains("block.layer0.attn.wq"));
  }
  SUBCASE("depth 8 holds four times the shared block") {
    cfg.architecture = Architecture::standard;
    cfg.standard_depth = 8;
    const TrmModel<float> stack(cfg);
    CHECK(count_trainable(stack.params(), {"embedding.*", "head.*"}) ==
          4 * count_trainable(shared.params(), {"embedding.*", "head.*"}));
    CHECK(stack.forward(random_pair(2, 2, cfg.input_dim, 15).src, random_pair(2, 2, cfg.input_dim, 15).tr)
              .layer_applications == 8);
  }
  SUBCASE("depth 0 is rejected") {
    cfg.architecture = Architecture::standard;
    cfg.standard_depth = 0;
    CHECK_THROWS_AS(TrmModel<float>{cfg}, ConfigError);
    CHECK_THROWS_AS(unshared_from_shared(shared, 0), ConfigError);
  }
}

TEST_CASE("decoupled regression head") {
  TrmConfig cfg = desk_config();
  cfg.head_type = HeadType::decoupled;
  TrmModel<float> model(cfg);
  model.randomize(16, 0.1);
  auto p = random_pair(2, 3, cfg.input_dim, 17);

  SUBCASE("zero weights give 0.5") {
    for (auto* name : {"head.reg.weight", "head.reg.bias"}) {
      auto d = model.params().at(name).mutable_data();
      std::fill(d.begin(), d.end(), 0.0f);
    }
    CHECK(model.forward(p.src, p.tr).quality.item() == 0.5f);
  }
  SUBCASE("repeat calls agree") {
    CHECK(model.forward(p.src, p.tr).quality.item() == model.forward(p.src, p.tr).quality.item());
  }
  SUBCASE("gradients reach the regression head and not the halting head") {
    const auto out = model.forward(p.src, p.tr);
    const float target = 0.2f;
    ag::backward(ag::mse_loss(out.quality, std::span<const float>(&target, 1)));
    CHECK(model.params().at("head.reg.weight").has_grad());
    for (auto* name : {"head.q.weight", "head.q.bias"}) {
      const auto& t = model.params().at(name);
      bool all_zero = true;
      for (float g : t.grad()) all_zero = all_zero && g == 0.0f;
      CHECK(all_zero);
    }
  }
}

TEST_CASE("trainable parameter count") {
  SUBCASE("desk config matches closed form") {
    TrmConfig cfg = desk_config();
    const std::size_t d = 64, din = cfg.input_dim, f = 4 * d;
    const std::size_t attention = 4 * d * d, ffn = d * f + f + f * d + d, norms = 2 * d;
    const std::size_t layer = attention + ffn + norms;
    const std::size_t embedding = din * d + d + 3 * d;
    const std::size_t heads = d + (2 * d + 2) + (d + 1);
    const TrmModel<float> model(cfg);
    CHECK(count_trainable(model.params()) == embedding + 2 * layer + heads);
    CHECK(count_trainable(model.params(), {"*"}) == 0);
    CHECK(count_trainable(model.params(), {"embedding.*"}) == 2 * layer + heads);
  }
  SUBCASE("default width lands near seven million") {
    const TrmModel<float> model(TrmConfig{});
    const auto n = count_trainable(model.params());
    CHECK(n >= 6'300'000);
    CHECK(n <= 7'700'000);
  }
}

TEST_CASE("full-model gradients agree with central differences") {
  for (std::size_t l : {1u, 2u}) {
    for (std::size_t n : {1u, 2u}) {
      const auto r = trmqe::test::full_model_grad_check(l, n, 40 + l * 3 + n);
      INFO("L=" << l << " N=" << n << " worst input " << r.worst_input << "[" << r.worst_index
                << "] analytic " << r.worst_analytic << " numeric " << r.worst_numeric);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
  SUBCASE("decoupled head") {
    CHECK(trmqe::test::full_model_grad_check(1, 2, 77, HeadType::decoupled).max_rel_error < 1e-4);
  }
  SUBCASE("corrupted attention backward is caught") {
    ag::testing::ScopedBackwardFault fault(ag::testing::FaultOp::attention, 1.1);
    CHECK(trmqe::test::full_model_grad_check(1, 1, 41).max_rel_error > 1e-2);
  }
}

TEST_CASE("non-finite activations fail fast with step and cycle") {
  TrmConfig cfg = desk_config();
  cfg.external_steps = 2;
  TrmModel<float> model(cfg);
  model.params().at("block.layer1.ffn.b2").mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  auto p = random_pair(2, 2, cfg.input_dim, 18);
  try {
    model.forward(p.src, p.tr);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("external step 1, cycle 1") != std::string::npos);
  }
}

TEST_CASE("config validation names the field") {
  TrmConfig cfg = desk_config();
  auto field_of = [](const TrmConfig& c) {
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string{};
  };
  CHECK(field_of(cfg).empty());
  cfg.l_cycles = 7;
  CHECK(field_of(cfg) == "l_cycles");
  cfg = desk_config();
  cfg.external_steps = 17;
  CHECK(field_of(cfg) == "external_steps");
  cfg = desk_config();
  cfg.n_heads = 5;
  CHECK(field_of(cfg) == "n_heads");
  CHECK_THROWS_AS(config_from_json({{"hidden_dimm", 4}}), ConfigError);
  CHECK(config_from_json(config_to_json(desk_config())) == desk_config());
}

TEST_CASE("checkpoint round-trip") {
  TrmConfig cfg = desk_config();
  cfg.external_steps = 2;
  TrmModel<float> model(cfg);
  model.randomize(19, 0.1);
  const auto path = temp_path("roundtrip.ckpt");
  write_checkpoint(path, model, {{"epoch", 3}}, {{"projector.mean", ag::Tensor32({2}, {1.5f, -2.0f})}});

  const auto ck = read_checkpoint(path);
  CHECK(ck.config == cfg);
  CHECK(ck.metadata.at("epoch") == 3);
  CHECK(ck.extras.at("projector.mean").data()[1] == -2.0f);
  const auto restored = ck.make_model();
  auto p = random_pair(3, 2, cfg.input_dim, 20);
  CHECK(restored.forward(p.src, p.tr).quality.item() == model.forward(p.src, p.tr).quality.item());

  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXXXXXX", 8);
    f.close();
    CHECK_THROWS_AS(read_checkpoint(path), FormatError);
  }
  SUBCASE("truncated blob") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
    CHECK_THROWS_AS(read_checkpoint(path), FormatError);
  }
  std::filesystem::remove(path);
}
