#include "fewshot/protonet.hpp"

#include <cmath>
#include <set>

namespace fewshot::protonet {
namespace {

constexpr const char* kModule = "protonet";

[[noreturn]] void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, kModule, message);
}

void check_inputs(const Matrix& queries, const PrototypeSet& prototypes) {
    if (queries.rows() > 0 && queries.cols() != prototypes.prototypes.cols()) {
        fail(ErrorKind::shape, "query width " + std::to_string(queries.cols()) +
                                   " does not match prototype width " +
                                   std::to_string(prototypes.prototypes.cols()));
    }
    if (!queries.allFinite()) fail(ErrorKind::numeric, "non-finite query representation");
    if (!prototypes.prototypes.allFinite()) fail(ErrorKind::numeric, "non-finite prototype");
}

void check_labels(const std::vector<int>& labels, Eigen::Index queries, int classes) {
    if (static_cast<Eigen::Index>(labels.size()) != queries) {
        fail(ErrorKind::shape, "label count does not match query count");
    }
    for (int y : labels) {
        if (y < 0 || y >= classes) fail(ErrorKind::shape, "label " + std::to_string(y) + " out of range");
    }
}

}  // namespace

void PrototypeSet::validate() const {
    if (prototypes.rows() < 2) fail(ErrorKind::shape, "need at least two prototypes");
    if (static_cast<Eigen::Index>(class_ids.size()) != prototypes.rows()) {
        fail(ErrorKind::shape, "class id count does not match prototype count");
    }
    if (std::set<std::string>(class_ids.begin(), class_ids.end()).size() != class_ids.size()) {
        fail(ErrorKind::consistency, "duplicate class ids");
    }
    if (!prototypes.allFinite()) fail(ErrorKind::numeric, "non-finite prototype");
}

Vector support_mean(const Matrix& support) {
    if (support.rows() < 1) fail(ErrorKind::shape, "empty support set");
    Vector sum = Vector::Zero(support.cols());
    for (Eigen::Index j = 0; j < support.rows(); ++j) sum += support.row(j).transpose();
    return sum / static_cast<double>(support.rows());
}

PrototypeSet support_mean_prototypes(const std::vector<Matrix>& support,
                                     std::vector<std::string> class_ids) {
    if (support.empty()) fail(ErrorKind::shape, "no classes");
    PrototypeSet out;
    out.class_ids = std::move(class_ids);
    out.prototypes.resize(static_cast<Eigen::Index>(support.size()), support.front().cols());
    for (std::size_t c = 0; c < support.size(); ++c) {
        out.prototypes.row(static_cast<Eigen::Index>(c)) = support_mean(support[c]).transpose();
    }
    return out;
}

Matrix squared_distances(const Matrix& queries, const Matrix& prototypes) {
    Matrix d(queries.rows(), prototypes.rows());
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
        for (Eigen::Index c = 0; c < prototypes.rows(); ++c) {
            d(q, c) = (queries.row(q) - prototypes.row(c)).squaredNorm();
        }
    }
    return d;
}

Posterior class_posteriors(const Matrix& queries, const PrototypeSet& prototypes) {
    check_inputs(queries, prototypes);
    const Matrix dist = squared_distances(queries, prototypes.prototypes);
    Posterior post;
    post.log_prob.resize(dist.rows(), dist.cols());
    post.prob.resize(dist.rows(), dist.cols());
    for (Eigen::Index q = 0; q < dist.rows(); ++q) {
        const double mx = (-dist.row(q)).maxCoeff();
        const double lse = mx + std::log((-dist.row(q).array() - mx).exp().sum());
        post.log_prob.row(q) = -dist.row(q).array() - lse;
        post.prob.row(q) = post.log_prob.row(q).array().exp();
    }
    return post;
}

double cross_entropy(const Posterior& posterior, const std::vector<int>& labels) {
    check_labels(labels, posterior.log_prob.rows(), static_cast<int>(posterior.log_prob.cols()));
    if (labels.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t q = 0; q < labels.size(); ++q) {
        total -= std::max(posterior.log_prob(static_cast<Eigen::Index>(q), labels[q]), kLogProbFloor);
    }
    return total / static_cast<double>(labels.size());
}

ClassifierGradients classifier_backward(const Matrix& queries, const PrototypeSet& prototypes,
                                        const std::vector<int>& labels) {
    const Posterior post = class_posteriors(queries, prototypes);
    check_labels(labels, queries.rows(), prototypes.size());
    ClassifierGradients g;
    g.queries = Matrix::Zero(queries.rows(), queries.cols());
    g.prototypes = Matrix::Zero(prototypes.prototypes.rows(), prototypes.prototypes.cols());
    if (labels.empty()) return g;
    const double inv_n = 1.0 / static_cast<double>(labels.size());
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
        const int y = labels[static_cast<std::size_t>(q)];
        // The floor is flat, so floored queries contribute nothing.
        if (post.log_prob(q, y) < kLogProbFloor) continue;
        for (Eigen::Index c = 0; c < prototypes.prototypes.rows(); ++c) {
            // d loss_q / d dist_qc = 1[c == y] - p_qc
            const double coeff = ((c == y) ? 1.0 : 0.0) - post.prob(q, c);
            if (coeff == 0.0) continue;
            const auto diff = (queries.row(q) - prototypes.prototypes.row(c)).eval();
            g.queries.row(q) += (2.0 * coeff * inv_n) * diff;
            g.prototypes.row(c) -= (2.0 * coeff * inv_n) * diff;
        }
    }
    return g;
}

std::vector<int> predict(const Matrix& queries, const PrototypeSet& prototypes) {
    check_inputs(queries, prototypes);
    // argmax of the posterior is argmin of the distance; comparing distances
    // directly avoids ties introduced by the shared normalizer.
    const Matrix dist = squared_distances(queries, prototypes.prototypes);
    std::vector<int> out(static_cast<std::size_t>(queries.rows()));
    for (Eigen::Index q = 0; q < dist.rows(); ++q) {
        int best = 0;
        for (Eigen::Index c = 1; c < dist.cols(); ++c) {
            if (dist(q, c) < dist(q, best)) best = static_cast<int>(c);
        }
        out[static_cast<std::size_t>(q)] = best;
    }
    return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
    if (predicted.size() != labels.size()) fail(ErrorKind::shape, "prediction/label count mismatch");
    if (labels.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace fewshot::protonet
