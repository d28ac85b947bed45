#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kd/errors.hpp"

namespace kd::metrics {

struct EvalResult {
  double accuracy = 0;
  double precision_macro = 0;
  double recall_macro = 0;
  double f1_macro = 0;
  double auc_macro = 0;
  double map_macro = 0;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][pred]
};

namespace detail {

// One-vs-rest ROC area by trapezoidal rule over thresholds at every
// distinct score. Classes without both positives and negatives are skipped
// by the caller.
inline double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& pos) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::int64_t P = 0, N = 0;
  for (int p : pos) p ? ++P : ++N;
  double auc = 0;
  double prev_fpr = 0, prev_tpr = 0;
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < n) {
    const double s = scores[idx[i]];
    // take all samples tied at this score in one threshold step
    while (i < n && scores[idx[i]] == s) {
      pos[idx[i]] ? ++tp : ++fp;
      ++i;
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(P);
    const double fpr = static_cast<double>(fp) / static_cast<double>(N);
    auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  return auc;
}

// Average precision with interpolated max-precision convention: each recall
// point takes the maximum precision at recall >= that point.
inline double average_precision_binary(const std::vector<double>& scores,
                                       const std::vector<int>& pos) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::int64_t P = 0;
  for (int p : pos) P += p;
  if (P == 0) return 0;

  // operating points at distinct thresholds
  std::vector<double> recall{0.0}, precision{1.0};
  std::int64_t tp = 0, taken = 0;
  std::size_t i = 0;
  while (i < n) {
    const double s = scores[idx[i]];
    while (i < n && scores[idx[i]] == s) {
      tp += pos[idx[i]];
      ++taken;
      ++i;
    }
    recall.push_back(static_cast<double>(tp) / static_cast<double>(P));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(taken));
  }
  // interpolate: precision at recall r is max precision at recall >= r
  for (std::size_t k = precision.size() - 1; k-- > 0;)
    precision[k] = std::max(precision[k], precision[k + 1]);
  double ap = 0;
  for (std::size_t k = 1; k < recall.size(); ++k)
    ap += (recall[k] - recall[k - 1]) * precision[k];
  return ap;
}

}  // namespace detail

// probs: N x C row-major, rows summing to 1 within 1e-4.
inline EvalResult evaluate(const std::vector<double>& probs, std::int64_t n, std::int64_t c,
                           const std::vector<std::int64_t>& labels) {
  if (static_cast<std::int64_t>(probs.size()) != n * c)
    throw DimError("evaluate: probs size does not match N x C");
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw DimError("evaluate: labels length does not match N");
  for (auto l : labels)
    if (l < 0 || l >= c)
      throw DataError("evaluate: label " + std::to_string(l) + " out of range");
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::int64_t j = 0; j < c; ++j) s += probs[static_cast<std::size_t>(i * c + j)];
    if (std::abs(s - 1.0) > 1e-4)
      throw DataError("evaluate: probability row " + std::to_string(i) + " sums to " +
                      std::to_string(s));
  }

  EvalResult r;
  r.confusion.assign(static_cast<std::size_t>(c), std::vector<std::int64_t>(static_cast<std::size_t>(c), 0));
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t pred = 0;  // argmax, ties toward the lowest index
    for (std::int64_t j = 1; j < c; ++j)
      if (probs[static_cast<std::size_t>(i * c + j)] > probs[static_cast<std::size_t>(i * c + pred)])
        pred = j;
    ++r.confusion[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]
                 [static_cast<std::size_t>(pred)];
    if (pred == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  double psum = 0, rsum = 0, fsum = 0;
  for (std::int64_t k = 0; k < c; ++k) {
    std::int64_t tp = r.confusion[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)];
    std::int64_t pred_k = 0, true_k = 0;
    for (std::int64_t j = 0; j < c; ++j) {
      pred_k += r.confusion[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
      true_k += r.confusion[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
    }
    const double prec = pred_k ? static_cast<double>(tp) / static_cast<double>(pred_k) : 0.0;
    const double rec = true_k ? static_cast<double>(tp) / static_cast<double>(true_k) : 0.0;
    const double f1 = (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    psum += prec;
    rsum += rec;
    fsum += f1;
  }
  r.precision_macro = psum / static_cast<double>(c);
  r.recall_macro = rsum / static_cast<double>(c);
  r.f1_macro = fsum / static_cast<double>(c);

  // macro one-vs-rest AUC and mAP over classes with both positives and
  // negatives present
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
      auc_sum += detail::roc_auc_binary(scores, pos);
      ++auc_n;
    }
    if (P > 0) {
      ap_sum += detail::average_precision_binary(scores, pos);
      ++ap_n;
    }
  }
  r.auc_macro = auc_n ? auc_sum / static_cast<double>(auc_n) : 0.0;
  r.map_macro = ap_n ? ap_sum / static_cast<double>(ap_n) : 0.0;
  return r;
}

}  // namespace kd::metrics
