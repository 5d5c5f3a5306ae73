#pragma once

#include "fewshot/common.hpp"
#include "fewshot/protonet.hpp"

#include <string>
#include <utility>
#include <vector>

namespace fewshot::qda {

/// Pairwise squared Euclidean distances, rows of `a` against rows of `b`.
Matrix cost_matrix(const Matrix& a, const Matrix& b);

struct TransportPlan {
    Matrix plan;            // rows: queries, cols: supports
    Vector row_marginal;    // uniform 1/rows
    Vector col_marginal;    // uniform 1/cols
    double epsilon = 0.0;
    int iterations_used = 0;
    double marginal_violation = 0.0;  // max-norm residual over both marginals
    bool converged = false;
    double cost = 0.0;      // <C, T>
};

/// Entropic OT between uniform marginals, log-domain Sinkhorn.
///
/// Iterates until the max-norm marginal residual drops below `tol` or
/// `max_iter` updates have run; non-convergence is reported in the result.
/// With `epsilon_scaling`, the solve is warm-started from a geometric ladder
/// of larger epsilons that ends at `epsilon`. Ladder iterations count against
/// `max_iter`.
TransportPlan sinkhorn(const Matrix& cost, double epsilon, double tol = 1e-6, int max_iter = 1000,
                       bool epsilon_scaling = true);

struct ExactPlan {
    Matrix plan;
    double cost = 0.0;
};

/// Minimum-cost coupling of two uniform measures of equal size n <= 8, by
/// enumerating all n! permutation couplings.
ExactPlan exact_ot_oracle(const Matrix& cost);

/// Rows ranked by per-unit-mass transport cost; the R cheapest, ascending
/// score, ties by ascending row index.
std::vector<int> retrieve_top_r(const TransportPlan& plan, const Matrix& cost, int r);

struct MappedPoints {
    std::vector<int> indices;
    Matrix weights;  // row i: normalized plan row of retrieved query i
    Matrix points;   // row i: sum_j weights(i, j) * support_j
};

/// Per-row barycentric projection of the retrieved rows onto the supports.
MappedPoints barycentric_map(const TransportPlan& plan, const std::vector<int>& retrieved,
                             const Matrix& support);

/// The same projection as diag(T 1)^-1 T S restricted to the retrieved rows.
Matrix barycentric_map_matrix(const TransportPlan& plan, const std::vector<int>& retrieved,
                              const Matrix& support);

/// Which points are united with the support set to form a prototype.
enum class Projection {
    /// The retrieved query representations themselves.
    retrieved_queries,
    /// Barycentric projections of the retrieved queries onto the class supports;
    /// prototypes stay inside the support hull.
    support_barycentric,
};

Projection parse_projection(std::string_view name);
std::string_view to_string(Projection projection);

struct OtSettings {
    double epsilon_scale = 0.05;  // epsilon = epsilon_scale * mean(C)
    double tol = 1e-6;
    int max_iter = 1000;
    Projection projection = Projection::retrieved_queries;
};

/// P_c expressed as a fixed linear combination of representations.
struct PrototypeWeights {
    Vector support;                              // one weight per class support
    std::vector<std::pair<int, double>> query;   // (query index, weight)
};

struct AugmentedClass {
    int class_index = 0;
    std::vector<int> retrieved;
    Matrix mapped;  // the points united with the supports
    Vector prototype;
    PrototypeWeights weights;
    TransportPlan plan;
};

struct PrototypeEstimate {
    protonet::PrototypeSet prototypes;
    std::vector<AugmentedClass> classes;
};

/// Per class: cost matrix against all queries, Sinkhorn plan, top-R retrieval,
/// projection, then P_c = mean of the K supports and the R' united points.
/// r == 0 or no queries gives the plain support mean.
PrototypeEstimate estimate_prototypes(const std::vector<Matrix>& support, const Matrix& queries, int r,
                                      const OtSettings& settings,
                                      std::vector<std::string> class_ids = {});

/// Prototypes recomputed from representations with frozen combination weights.
Matrix prototypes_from_weights(const std::vector<Matrix>& support, const Matrix& queries,
                               const std::vector<PrototypeWeights>& weights);

}  // namespace fewshot::qda
