#pragma once

#include <vector>

namespace uad {

using Code = std::vector<double>;

// Margin-augmented InfoNCE on unit-normalized codes:
//   L = -log( exp(s+) / (exp(s+ - eps) + sum_j exp(s_j-)) )
// with s+ = cos(anchor, positive), s_j- = cos(anchor, negative_j). The
// optional temperature divides every similarity before the margin is applied;
// at temperature 1 the expression above is evaluated verbatim. All codes must
// be unit-normalized (norm deviation > 1e-3 is rejected).
double epsilon_infonce(const Code& anchor, const Code& positive,
                       const std::vector<Code>& negatives, double epsilon,
                       double temperature = 1.0);

// Same value, plus analytic gradients with respect to the raw code entries
// (codes treated as free vectors). Null output pointers are skipped.
double epsilon_infonce_grad(const Code& anchor, const Code& positive,
                            const std::vector<Code>& negatives, double epsilon,
                            double temperature, Code* g_anchor, Code* g_positive,
                            std::vector<Code>* g_negatives);

// Instance-alignment margin: true iff for every negative
//   ||a - n_j||^2 - ||a - p||^2 >= epsilon.
bool instance_margin_check(const Code& anchor, const Code& positive,
                           const std::vector<Code>& negatives, double epsilon);

// Fraction of test codes whose majority vote among the k nearest training
// codes (cosine similarity) matches the true id. Deterministic tie-breaking:
// neighbors sorted by (-similarity, index); vote ties go to the label seen
// earliest in that order.
double knn_identity_eval(const std::vector<Code>& train_codes,
                         const std::vector<int>& train_ids,
                         const std::vector<Code>& test_codes,
                         const std::vector<int>& test_ids, int k);

// Trains a multinomial logistic regression probe on frozen codes (full-batch
// gradient descent, deterministic zero init) and returns held-out accuracy.
double linear_probe_eval(const std::vector<Code>& train_codes,
                         const std::vector<int>& train_labels,
                         const std::vector<Code>& test_codes,
                         const std::vector<int>& test_labels);

}  // namespace uad
