// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#include "ooc/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace ooc {

void ScoredSet::validate() const {
    if (scores.empty()) throw Error("scored set: empty");
    if (scores.size() != labels.size()) throw Error("scored set: scores/labels length mismatch");
    for (double s : scores)
        if (!(s >= 0.0 && s <= 1.0)) throw Error("scored set: scores must lie in [0, 1]");
    for (int label : labels)
        if (label != 0 && label != 1) throw Error("scored set: labels must be 0 or 1");
}

bool ScoredSet::has_both_classes() const {
    bool pos = false;
    bool neg = false;
    for (int label : labels) (label == 1 ? pos : neg) = true;
    return pos && neg;
}

double accuracy(const ScoredSet& set, double threshold) {
    set.validate();
    size_t correct = 0;
    for (size_t i = 0; i < set.scores.size(); ++i) {
        bool falsified = set.scores[i] >= threshold;
        if (falsified == (set.labels[i] == 1)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(set.scores.size());
}

double roc_auc(const ScoredSet& set) {
    set.validate();
    if (!set.has_both_classes()) throw Error("roc_auc: both classes must be present");

    std::vector<size_t> order(set.scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return set.scores[a] > set.scores[b]; });

    double n_pos = 0;
    double n_neg = 0;
    for (int label : set.labels) (label == 1 ? n_pos : n_neg) += 1.0;

    // Trapezoids over threshold groups of tied scores; equivalent to the rank
    // formulation where ties count one half.
    double auc = 0;
    double tp = 0;
    double fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        double group_tp = 0;
        double group_fp = 0;
        size_t j = i;
        while (j < order.size() && set.scores[order[j]] == set.scores[order[i]]) {
            if (set.labels[order[j]] == 1) {
                group_tp += 1.0;
            } else {
                group_fp += 1.0;
            }
            ++j;
        }
        auc += (group_fp / n_neg) * (tp + group_tp / 2.0) / n_pos;
        tp += group_tp;
        fp += group_fp;
        i = j;
    }
    return std::clamp(auc, 0.0, 1.0);
}

EerResult eer_and_threshold(const ScoredSet& set) {
    set.validate();
    if (!set.has_both_classes()) throw Error("eer_and_threshold: both classes must be present");

    std::vector<double> distinct = set.scores;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<double> candidates;
    candidates.push_back(0.0);
    for (size_t i = 0; i + 1 < distinct.size(); ++i)
        candidates.push_back((distinct[i] + distinct[i + 1]) / 2.0);
    candidates.push_back(1.0);
    std::sort(candidates.begin(), candidates.end());

    double n_pos = 0;
    double n_neg = 0;
    for (int label : set.labels) (label == 1 ? n_pos : n_neg) += 1.0;

    EerResult best;
    double best_gap = std::numeric_limits<double>::infinity();
    for (double th : candidates) {
        double fp = 0;
        double fn = 0;
        for (size_t i = 0; i < set.scores.size(); ++i) {
            bool predicted = set.scores[i] >= th;
            if (predicted && set.labels[i] == 0) fp += 1.0;
            if (!predicted && set.labels[i] == 1) fn += 1.0;
        }
        double fpr = fp / n_neg;
        double fnr = fn / n_pos;
        double gap = std::abs(fpr - fnr);
        if (gap < best_gap) { // ties keep the lower (earlier) threshold
            best_gap = gap;
            best.eer = (fpr + fnr) / 2.0;
            best.threshold = th;
        }
    }
    return best;
}

ScoredSet score_dataset(const Dataset& data, const ModelParams& params,
                        const ModelConfig& config) {
    if (data.samples.empty()) throw Error("score_dataset: empty dataset");
    std::vector<const Sample*> all;
    all.reserve(data.samples.size());
    for (const Sample& s : data.samples) all.push_back(&s);
    BatchOutput out = forward_batch(all, params, config);
    ScoredSet set;
    set.scores.reserve(all.size());
    set.labels.reserve(all.size());
    for (size_t i = 0; i < all.size(); ++i) {
        set.scores.push_back(static_cast<double>(out.probs(static_cast<int>(i), 0)));
        set.labels.push_back(all[i]->label);
    }
    return set;
}

Metrics evaluate(const ModelParams& params, const ModelConfig& config, const Dataset& val_set,
                 const Dataset& test_set) {
    ScoredSet val = score_dataset(val_set, params, config);
    ScoredSet test = score_dataset(test_set, params, config);

    EerResult eer = eer_and_threshold(val);
    Metrics m;
    m.th_eer = eer.threshold;
    m.eer = eer.eer;
    m.roc_auc = roc_auc(val);
    m.accuracy_at_half = accuracy(test, 0.5);
    m.accuracy_at_theer = accuracy(test, eer.threshold);
    return m;
}

} // namespace ooc
