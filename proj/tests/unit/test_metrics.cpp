// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "support/metric_oracles.hpp"
#include "trmqe/errors.hpp"
#include "trmqe/metrics.hpp"
#include "trmqe/report.hpp"

using namespace trmqe;
using namespace trmqe::test;

TEST_CASE("pearson examples") {
  const std::vector<double> x = {1, 2, 3, 5};
  std::vector<double> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](double v) { return 2 * v + 1; });
  CHECK(pearson(x, y) == doctest::Approx(1.0).epsilon(1e-15));
  std::transform(x.begin(), x.end(), y.begin(), [](double v) { return -v; });
  CHECK(pearson(x, y) == doctest::Approx(-1.0).epsilon(1e-15));
  const std::vector<double> y2 = {2, 1, 4, 5};
  CHECK(std::abs(pearson(x, y2) - reference_pearson(x, y2)) < 1e-12);
}

TEST_CASE("constant inputs are an error, not NaN") {
  const std::vector<double> x = {1, 2, 3}, c = {4, 4, 4};
  for (auto fn : {&pearson, &spearman}) {
    try {
      fn(x, c);
      FAIL("expected UndefinedMetricError");
    } catch (const UndefinedMetricError& e) {
      CHECK(std::string(e.what()) == "undefined correlation (zero variance)");
    }
  }
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{2}), ContractError);
  CHECK_THROWS_AS(pearson(x, std::vector<double>{1, 2}), DimensionError);
}

TEST_CASE("spearman examples and ties") {
  const std::vector<double> x = {1, 2, 3}, y = {3, 1, 2};
  CHECK(spearman(x, y) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{-3, 0.5, 9, 100}) == 1.0);

  const std::vector<double> tx = {1, 1, 2}, ty = {1, 2, 3};
  CHECK(std::abs(spearman(tx, ty) - reference_pearson(brute_force_ranks(tx), brute_force_ranks(ty))) < 1e-12);
  CHECK(average_ranks(tx) == std::vector<double>{1.5, 1.5, 3});

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> small(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(9), b(9);
    for (auto& v : a) v = small(rng);
    for (auto& v : b) v = small(rng);
    try {
      const double got = spearman(a, b);
      CHECK(std::abs(got - reference_pearson(brute_force_ranks(a), brute_force_ranks(b))) < 1e-12);
    } catch (const UndefinedMetricError&) {
      CHECK((*std::min_element(a.begin(), a.end()) == *std::max_element(a.begin(), a.end()) ||
             *std::min_element(b.begin(), b.end()) == *std::max_element(b.begin(), b.end())));
    }
  }
}

TEST_CASE("spearman matches the rank-difference formula on all 720 permutations") {
  const auto r = exhaustive_spearman_check();
  CHECK(r.permutations == 720);
  CHECK(r.max_abs_diff < 1e-12);
}

TEST_CASE("mae") {
  const std::vector<double> a = {0.2, 0.4};
  CHECK(mae(a, a) == 0.0);
  CHECK(mae(std::vector<double>{0.5}, std::vector<double>{0.1}) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK_THROWS_AS(mae(std::vector<double>{}, std::vector<double>{}), ContractError);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(101), g(101);
    for (auto& v : p) v = u(rng);
    for (auto& v : g) v = u(rng);
    CHECK(std::abs(mae(p, g) - reference_mae(p, g)) < 1e-12);
    CHECK(std::abs(pearson(p, g) - reference_pearson(p, g)) < 1e-12);
  }
}

TEST_CASE("invariances and symmetry") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(40), y(40);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = n(rng);
      y[i] = 0.4 * x[i] + n(rng);
    }
    const double rho = spearman(x, y), r = pearson(x, y);
    auto mapped = [&](auto fn) {
      std::vector<double> out(x.size());
      std::transform(x.begin(), x.end(), out.begin(), fn);
      return out;
    };
    CHECK(spearman(mapped([](double v) { return std::exp(v); }), y) == rho);
    CHECK(spearman(mapped([](double v) { return 3 * v - 7; }), y) == rho);
    CHECK(spearman(mapped([](double v) { return v * v * v; }), y) == rho);
    CHECK(std::abs(pearson(mapped([](double v) { return 2.5 * v + 11; }), y) - r) < 1e-12);
    CHECK(spearman(y, x) == rho);
    CHECK(pearson(y, x) == r);
  }
}

TEST_CASE("bootstrap intervals") {
  std::vector<double> x(30);
  std::iota(x.begin(), x.end(), 0.0);
  std::vector<double> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](double v) { return 3 * v + 2; });

  SUBCASE("perfect correlation collapses the interval at 1") {
    const auto ci = bootstrap_ci(pearson, x, y, {.resamples = 200, .seed = 4});
    CHECK(ci.low == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ci.high == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("seeded and reproducible") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 1);
    for (auto& v : y) v = n(rng);
    const auto a = bootstrap_ci(spearman, x, y, {.seed = 9});
    const auto b = bootstrap_ci(spearman, x, y, {.seed = 9});
    CHECK(a.low == b.low);
    CHECK(a.high == b.high);
    const double point = spearman(x, y);
    CHECK(a.low <= point);
    CHECK(point <= a.high);
  }
  SUBCASE("forced full-sample indices give the point estimate") {
    BootstrapOptions opts{.resamples = 1};
    opts.sampler = [](std::mt19937_64&, std::vector<std::size_t>& idx) { std::iota(idx.begin(), idx.end(), 0); };
    y[3] = 40;
    const auto ci = bootstrap_ci(spearman, x, y, opts);
    CHECK(ci.low == spearman(x, y));
    CHECK(ci.high == spearman(x, y));
  }
  SUBCASE("mostly undefined resamples are an error") {
    BootstrapOptions opts{.resamples = 10};
    opts.sampler = [](std::mt19937_64&, std::vector<std::size_t>& idx) { std::fill(idx.begin(), idx.end(), 0); };
    CHECK_THROWS_AS(bootstrap_ci(pearson, x, y, opts), UndefinedMetricError);
  }
  SUBCASE("sparse undefined resamples are redrawn") {
    BootstrapOptions opts{.resamples = 50};
    int calls = 0;
    opts.sampler = [&](std::mt19937_64& rng, std::vector<std::size_t>& idx) {
      std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
      if (calls++ % 2 == 0) {
        std::fill(idx.begin(), idx.end(), 0);
      } else {
        for (auto& i : idx) i = pick(rng);
      }
    };
    CHECK_NOTHROW(bootstrap_ci(pearson, x, y, opts));
    CHECK(calls == 100);
  }
}

TEST_CASE("bootstrap coverage on a bivariate Gaussian") {
  CHECK(bootstrap_coverage(100, 200, 0.5, 77) >= 90);
}

TEST_CASE("evaluation report") {
  std::vector<Prediction> preds;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::normal_distribution<double> noise(0, 0.1);
  for (int i = 0; i < 40; ++i) {
    const double g = u(rng);
    preds.push_back({i % 2 ? "en-si" : "en-ta", g, std::clamp(g + noise(rng), 0.001, 0.999)});
  }

  SUBCASE("oracle predictions are perfect") {
    auto gold = preds;
    for (auto& p : gold) p.predicted = p.gold;
    const auto r = build_eval_report(gold);
    REQUIRE(r.pairs.size() == 2);
    for (const auto& pr : r.pairs) {
      CHECK(*pr.metrics.pearson == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(*pr.metrics.spearman == 1.0);
      CHECK(*pr.metrics.mae == 0.0);
    }
    CHECK(*r.overall.spearman == 1.0);
  }
  SUBCASE("constant predictions surface a per-pair error and the run continues") {
    auto flat = preds;
    for (auto& p : flat) p.predicted = 0.5;
    const auto r = build_eval_report(flat);
    REQUIRE(r.pairs.size() == 2);
    CHECK_FALSE(r.pairs[0].metrics.pearson.has_value());
    CHECK(r.pairs[0].metrics.error.find("undefined correlation (zero variance)") != std::string::npos);
    CHECK(r.pairs[0].metrics.mae.has_value());
    CHECK(r.to_json()["pairs"][0]["pearson"].is_null());
  }
  SUBCASE("overall is the pooled recomputation") {
    const auto r = build_eval_report(preds);
    std::vector<double> p, g;
    for (const auto& x : preds) {
      p.push_back(x.predicted);
      g.push_back(x.gold);
    }
    CHECK(std::abs(*r.overall.pearson - reference_pearson(p, g)) < 1e-12);
    CHECK(std::abs(*r.overall.spearman - reference_pearson(brute_force_ranks(p), brute_force_ranks(g))) < 1e-12);
    CHECK(std::abs(*r.overall.mae - reference_mae(p, g)) < 1e-12);
    CHECK(r.overall.n == 40);
    CHECK(*r.macro_mae == doctest::Approx(0.5 * (*r.pairs[0].metrics.mae + *r.pairs[1].metrics.mae)));
    for (const auto* m : {&r.overall, &r.pairs[0].metrics}) {
      CHECK(m->spearman_ci->low <= *m->spearman);
      CHECK(*m->spearman <= m->spearman_ci->high);
    }
    CHECK(r.to_markdown().find("| Overall | 40 |") != std::string::npos);
    CHECK(build_eval_report(preds).to_json().dump() == r.to_json().dump());
  }
  SUBCASE("singleton pairs are skipped with a warning") {
    auto extra = preds;
    extra.push_back({"en-ne", 0.3, 0.4});
    const auto r = build_eval_report(extra);
    CHECK(r.pairs.size() == 2);
    CHECK(r.overall.n == 41);
    CHECK(r.warnings.at(0).find("en-ne") != std::string::npos);
  }
  SUBCASE("prediction dump round-trips") {
    const auto path = std::filesystem::temp_directory_path() / "trmqe_test_metrics_predictions.tsv";
    write_predictions_tsv(path, preds);
    const auto back = read_predictions_tsv(path);
    REQUIRE(back.size() == preds.size());
    CHECK(back[7].predicted == preds[7].predicted);
    CHECK(back[7].pair_id == preds[7].pair_id);
    std::filesystem::remove(path);
  }
}
