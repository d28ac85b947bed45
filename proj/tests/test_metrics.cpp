#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "kd/metrics.hpp"
#include "kd/rng.hpp"

using namespace kd;
using metrics::EvalResult;

namespace {

// Mann-Whitney pair-count AUC: P(score_pos > score_neg) + 0.5 P(tie)
double auc_oracle(const std::vector<double>& scores, const std::vector<int>& pos) {
  double wins = 0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (pos[j]) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Definition-level AP: for each positive's recall level k/P, take the best
// precision among operating points whose recall reaches that level.
double ap_oracle(const std::vector<double>& scores, const std::vector<int>& pos) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::int64_t P = 0;
  for (int p : pos) P += p;
  if (P == 0) return 0;

  std::vector<double> recs, precs;
  std::int64_t tp = 0, taken = 0;
  std::size_t i = 0;
  while (i < n) {
    const double s = scores[idx[i]];
    while (i < n && scores[idx[i]] == s) {
      tp += pos[idx[i]];
      ++taken;
      ++i;
    }
    recs.push_back(static_cast<double>(tp) / static_cast<double>(P));
    precs.push_back(static_cast<double>(tp) / static_cast<double>(taken));
  }
  double ap = 0;
  for (std::int64_t k = 1; k <= P; ++k) {
    const double level = static_cast<double>(k) / static_cast<double>(P);
    double best = 0;
    for (std::size_t t = 0; t < recs.size(); ++t)
      if (recs[t] >= level - 1e-12) best = std::max(best, precs[t]);
    ap += best / static_cast<double>(P);
  }
  return ap;
}

EvalResult brute_force_reference(const std::vector<double>& probs, std::int64_t n,
                                 std::int64_t c, const std::vector<std::int64_t>& labels) {
  EvalResult r;
  double auc_sum = 0, ap_sum = 0;
  std::int64_t auc_n = 0, ap_n = 0;
  std::vector<double> scores(static_cast<std::size_t>(n));
  std::vector<int> pos(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < c; ++k) {
    std::int64_t P = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      scores[static_cast<std::size_t>(i)] = probs[static_cast<std::size_t>(i * c + k)];
      pos[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)] == k;
      P += pos[static_cast<std::size_t>(i)];
    }
    if (P > 0 && P < n) {
      auc_sum += auc_oracle(scores, pos);
      ++auc_n;
    }
    if (P > 0) {
      ap_sum += ap_oracle(scores, pos);
      ++ap_n;
    }
  }
  r.auc_macro = auc_n ? auc_sum / static_cast<double>(auc_n) : 0.0;
  r.map_macro = ap_n ? ap_sum / static_cast<double>(ap_n) : 0.0;
  return r;
}

}  // namespace

TEST_CASE("perfect predictions score one everywhere") {
  const std::int64_t n = 12, c = 3;
  std::vector<double> probs;
  std::vector<std::int64_t> labels;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t y = i % c;
    labels.push_back(y);
    for (std::int64_t j = 0; j < c; ++j) probs.push_back(j == y ? 0.9 : 0.05);
  }
  auto r = metrics::evaluate(probs, n, c, labels);
  REQUIRE(r.accuracy == 1.0);
  REQUIRE(r.precision_macro == 1.0);
  REQUIRE(r.recall_macro == 1.0);
  REQUIRE(r.f1_macro == 1.0);
  REQUIRE(r.auc_macro == 1.0);
  REQUIRE(r.map_macro == 1.0);
  for (std::int64_t k = 0; k < c; ++k)
    REQUIRE(r.confusion[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)] == 4);
}

TEST_CASE("binary auc hand cases") {
  REQUIRE(metrics::detail::roc_auc_binary({0.9, 0.1}, {1, 0}) == 1.0);
  REQUIRE(metrics::detail::roc_auc_binary({0.1, 0.9}, {1, 0}) == 0.0);
  REQUIRE(metrics::detail::roc_auc_binary({0.5, 0.5}, {1, 0}) == Catch::Approx(0.5));
  // 3 pos, 3 neg, one inversion: 8 wins + 0 ties of 9 pairs
  REQUIRE(metrics::detail::roc_auc_binary({0.9, 0.8, 0.4, 0.5, 0.3, 0.1},
                                          {1, 1, 1, 0, 0, 0}) == Catch::Approx(8.0 / 9.0));
}

TEST_CASE("average precision hand cases") {
  REQUIRE(metrics::detail::average_precision_binary({0.9, 0.1}, {1, 0}) == 1.0);
  // ranking: pos, neg, pos -> levels 1/2 (prec 1) and 2/2 (prec 2/3)
  REQUIRE(metrics::detail::average_precision_binary({0.9, 0.8, 0.7}, {1, 0, 1}) ==
          Catch::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0)));
}

TEST_CASE("auc and map match brute-force oracles on random instances") {
  Rng rng(123);
  for (int inst = 0; inst < 100; ++inst) {
    const std::int64_t n = rng.uniform_int(4, 20);
    const std::int64_t c = rng.uniform_int(2, 4);
    std::vector<double> probs;
    std::vector<std::int64_t> labels;
    for (std::int64_t i = 0; i < n; ++i) {
      labels.push_back(rng.uniform_int(0, c - 1));
      // small integer weights produce frequent exact ties across rows
      std::vector<double> row(static_cast<std::size_t>(c));
      double s = 0;
      for (auto& v : row) {
        v = static_cast<double>(rng.uniform_int(1, 4));
        s += v;
      }
      for (auto& v : row) probs.push_back(v / s);
    }
    auto got = metrics::evaluate(probs, n, c, labels);
    auto ref = brute_force_reference(probs, n, c, labels);
    REQUIRE(std::abs(got.auc_macro - ref.auc_macro) < 1e-9);
    REQUIRE(std::abs(got.map_macro - ref.map_macro) < 1e-9);
  }
}

TEST_CASE("accuracy and macro scores agree with the confusion matrix") {
  Rng rng(9);
  const std::int64_t n = 40, c = 5;
  std::vector<double> probs;
  std::vector<std::int64_t> labels;
  for (std::int64_t i = 0; i < n; ++i) {
    labels.push_back(rng.uniform_int(0, c - 1));
    std::vector<double> row(static_cast<std::size_t>(c));
    double s = 0;
    for (auto& v : row) {
      v = rng.uniform(0.01, 1.0);
      s += v;
    }
    for (auto& v : row) probs.push_back(v / s);
  }
  auto r = metrics::evaluate(probs, n, c, labels);
  std::int64_t total = 0, diag = 0;
  for (std::int64_t a = 0; a < c; ++a)
    for (std::int64_t b = 0; b < c; ++b) {
      total += r.confusion[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
      if (a == b) diag += r.confusion[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
    }
  REQUIRE(total == n);
  REQUIRE(r.accuracy == Catch::Approx(static_cast<double>(diag) / n));
  REQUIRE(r.auc_macro >= 0.0);
  REQUIRE(r.auc_macro <= 1.0);
  REQUIRE(r.map_macro >= 0.0);
  REQUIRE(r.map_macro <= 1.0);
}

TEST_CASE("argmax ties resolve to the lowest class index") {
  const std::vector<double> probs = {0.5, 0.5};
  auto r = metrics::evaluate(probs, 1, 2, {1});
  REQUIRE(r.confusion[1][0] == 1);
  REQUIRE(r.accuracy == 0.0);
}

TEST_CASE("evaluate validates its inputs") {
  std::vector<double> probs = {0.6, 0.4, 0.3, 0.7};
  REQUIRE_THROWS_AS(metrics::evaluate(probs, 3, 2, {0, 1, 0}), DimError);
  REQUIRE_THROWS_AS(metrics::evaluate(probs, 2, 2, {0}), DimError);
  REQUIRE_THROWS_AS(metrics::evaluate(probs, 2, 2, {0, 2}), DataError);
  std::vector<double> bad = {0.6, 0.6, 0.3, 0.7};
  REQUIRE_THROWS_AS(metrics::evaluate(bad, 2, 2, {0, 1}), DataError);
}
