#pragma once

#include "fewshot/common.hpp"

#include <string>
#include <vector>

namespace fewshot::protonet {

struct PrototypeSet {
    std::vector<std::string> class_ids;
    Matrix prototypes;  // row c is P_c

    int size() const noexcept { return static_cast<int>(prototypes.rows()); }
    void validate() const;
};

struct Posterior {
    Matrix prob;      // queries x classes
    Matrix log_prob;
};

/// Lower bound applied to log p(true class) in the loss.
inline constexpr double kLogProbFloor = -50.0;

/// Mean of the rows, accumulated in row order.
Vector support_mean(const Matrix& support);

/// Plain Prototypical Networks prototypes: the per-class support mean.
PrototypeSet support_mean_prototypes(const std::vector<Matrix>& support,
                                     std::vector<std::string> class_ids);

/// Squared Euclidean distance of every query to every prototype.
Matrix squared_distances(const Matrix& queries, const Matrix& prototypes);

/// p_c proportional to exp(-||v - P_c||^2), evaluated with log-sum-exp.
Posterior class_posteriors(const Matrix& queries, const PrototypeSet& prototypes);

/// Mean negative log-likelihood of the true classes.
double cross_entropy(const Posterior& posterior, const std::vector<int>& labels);

struct ClassifierGradients {
    Matrix queries;     // d loss / d v_q
    Matrix prototypes;  // d loss / d P_c
};

ClassifierGradients classifier_backward(const Matrix& queries, const PrototypeSet& prototypes,
                                        const std::vector<int>& labels);

/// Argmax posterior; ties go to the lowest class index.
std::vector<int> predict(const Matrix& queries, const PrototypeSet& prototypes);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);

}  // namespace fewshot::protonet
