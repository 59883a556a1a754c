// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ooc/dataset.hpp"
#include "ooc/model.hpp"

namespace ooc {

struct ScoredSet {
    std::vector<double> scores; // p_class per sample, in [0, 1]
    std::vector<int> labels;    // 0 or 1, aligned by index

    void validate() const;
    bool has_both_classes() const;
};

struct Metrics {
    double accuracy_at_half = 0;
    double th_eer = 0;
    double accuracy_at_theer = 0;
    double roc_auc = 0;
    double eer = 0;
};

/// Fraction of items where (score >= th) matches label == 1.
double accuracy(const ScoredSet& set, double threshold);

/// Area under the ROC curve; tied scores contribute one half
/// (the rank / Mann-Whitney formulation). Requires both classes.
double roc_auc(const ScoredSet& set);

struct EerResult {
    double eer = 0;
    double threshold = 0;
};

/// Sweeps candidate thresholds (midpoints between consecutive distinct sorted
/// scores, plus 0 and 1), minimizing |FPR - FNR|; ties go to the lower
/// threshold. EER is the mean of FPR and FNR at the chosen threshold.
EerResult eer_and_threshold(const ScoredSet& set);

/// Eval-mode p_class scores over a dataset.
ScoredSet score_dataset(const Dataset& data, const ModelParams& params,
                        const ModelConfig& config);

/// Table metrics: thEER, EER and ROC AUC on the validation split; accuracies
/// at 0.5 and at thEER on the test split.
Metrics evaluate(const ModelParams& params, const ModelConfig& config, const Dataset& val_set,
                 const Dataset& test_set);

} // namespace ooc
