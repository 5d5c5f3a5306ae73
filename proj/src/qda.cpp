#include "fewshot/qda.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fewshot::qda {
namespace {

constexpr const char* kModule = "qda";

[[noreturn]] void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, kModule, message);
}

double log_sum_exp(const Eigen::Ref<const Eigen::ArrayXd>& x) {
    const double mx = x.maxCoeff();
    if (!std::isfinite(mx)) return mx;
    return mx + std::log((x - mx).exp().sum());
}

struct Potentials {
    Eigen::ArrayXd f;
    Eigen::ArrayXd g;
};

// One f-update followed by one g-update at strength eps.
void sinkhorn_sweep(const Matrix& cost, double eps, double log_a, double log_b, Potentials& p) {
    const Eigen::Index m = cost.rows();
    const Eigen::Index k = cost.cols();
    Eigen::ArrayXd buf(k);
    for (Eigen::Index i = 0; i < m; ++i) {
        buf = (p.g - cost.row(i).transpose().array()) / eps;
        p.f[i] = eps * (log_a - log_sum_exp(buf));
    }
    Eigen::ArrayXd col(m);
    for (Eigen::Index j = 0; j < k; ++j) {
        col = (p.f - cost.col(j).array()) / eps;
        p.g[j] = eps * (log_b - log_sum_exp(col));
    }
}

Matrix plan_from(const Matrix& cost, double eps, const Potentials& p) {
    Matrix t(cost.rows(), cost.cols());
    for (Eigen::Index i = 0; i < cost.rows(); ++i) {
        for (Eigen::Index j = 0; j < cost.cols(); ++j) {
            t(i, j) = std::exp((p.f[i] + p.g[j] - cost(i, j)) / eps);
        }
    }
    return t;
}

double violation(const Matrix& t, double a, double b) {
    const double rows = (t.rowwise().sum().array() - a).abs().maxCoeff();
    const double cols = (t.colwise().sum().array() - b).abs().maxCoeff();
    return std::max(rows, cols);
}

// When the optimal coupling is nearly a permutation, plain sweeps move the
// last bits of mass along cycles whose weight is ~exp(-gap/eps) and stall.
// A Newton step on the same dual fixes that in a few iterations.
constexpr int kSweepsBeforeNewton = 100;
constexpr Eigen::Index kNewtonMaxSize = 600;

// Damped Newton step on the marginal residual, gauge fixed by pinning the
// last g. Returns false (leaving p alone) if no step length helps.
bool newton_step(const Matrix& cost, double eps, double a, double b, Potentials& p, double& viol) {
    const Eigen::Index m = cost.rows();
    const Eigen::Index k = cost.cols();
    const Eigen::Index n = m + k - 1;
    const Matrix t = plan_from(cost, eps, p);
    const Vector r = t.rowwise().sum();
    const Vector c = t.colwise().sum().transpose();
    Matrix jac = Matrix::Zero(n, n);
    Vector rhs(n);
    for (Eigen::Index i = 0; i < m; ++i) {
        jac(i, i) = r[i];
        rhs[i] = a - r[i];
        for (Eigen::Index j = 0; j + 1 < k; ++j) {
            jac(i, m + j) = t(i, j);
            jac(m + j, i) = t(i, j);
        }
    }
    for (Eigen::Index j = 0; j + 1 < k; ++j) {
        jac(m + j, m + j) = c[j];
        rhs[m + j] = b - c[j];
    }
    jac.diagonal().array() += 1e-14 * jac.diagonal().maxCoeff();
    const Vector step = eps * jac.ldlt().solve(rhs);
    if (!step.allFinite()) return false;
    for (double s = 1.0; s > 1e-6; s *= 0.5) {
        Potentials trial = p;
        trial.f += s * step.head(m).array();
        trial.g.head(k - 1) += s * step.tail(k - 1).array();
        const double v = violation(plan_from(cost, eps, trial), a, b);
        if (v < viol) {
            p = std::move(trial);
            viol = v;
            return true;
        }
    }
    return false;
}

}  // namespace

Matrix cost_matrix(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        fail(ErrorKind::shape, "cost matrix operands have widths " + std::to_string(a.cols()) + " and " +
                                   std::to_string(b.cols()));
    }
    Matrix c(a.rows(), b.rows());
    if (a.rows() == 0 || b.rows() == 0) return c;
    // Expanding around the joint mean keeps the cancellation in
    // |x|^2 + |y|^2 - 2 x.y small and makes C translation invariant.
    const Eigen::RowVectorXd center =
        (a.colwise().sum() + b.colwise().sum()) / static_cast<double>(a.rows() + b.rows());
    const Matrix ac = a.rowwise() - center;
    const Matrix bc = b.rowwise() - center;
    const Eigen::VectorXd an = ac.rowwise().squaredNorm();
    const Eigen::VectorXd bn = bc.rowwise().squaredNorm();
    c.noalias() = -2.0 * ac * bc.transpose();
    c.colwise() += an;
    c.rowwise() += bn.transpose();
    c = c.cwiseMax(0.0);
    return c;
}

TransportPlan sinkhorn(const Matrix& cost, double epsilon, double tol, int max_iter,
                       bool epsilon_scaling) {
    const Eigen::Index m = cost.rows();
    const Eigen::Index k = cost.cols();
    if (m == 0 || k == 0) fail(ErrorKind::shape, "empty cost matrix");
    if (!cost.allFinite()) fail(ErrorKind::numeric, "cost matrix has NaN or Inf entries");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail(ErrorKind::config, "epsilon must be > 0");
    if (!(tol > 0.0)) fail(ErrorKind::config, "tol must be > 0");
    if (max_iter < 1) fail(ErrorKind::config, "max_iter must be >= 1");

    const double a = 1.0 / static_cast<double>(m);
    const double b = 1.0 / static_cast<double>(k);
    const double log_a = std::log(a);
    const double log_b = std::log(b);
    Potentials p{Eigen::ArrayXd::Zero(m), Eigen::ArrayXd::Zero(k)};
    int iterations = 0;

    if (epsilon_scaling) {
        double stage_eps = std::max(epsilon, cost.maxCoeff());
        // Each rung only has to get close; the final solve polishes.
        constexpr int kStageIters = 50;
        while (stage_eps > epsilon && iterations < max_iter) {
            for (int it = 0; it < kStageIters && iterations < max_iter; ++it) {
                sinkhorn_sweep(cost, stage_eps, log_a, log_b, p);
                ++iterations;
                if (violation(plan_from(cost, stage_eps, p), a, b) < 1e-3 * a) break;
            }
            stage_eps = std::max(epsilon, stage_eps * 0.5);
        }
    }

    TransportPlan out;
    out.epsilon = epsilon;
    double viol = violation(plan_from(cost, epsilon, p), a, b);
    int plain = 0;
    while (iterations < max_iter && !(viol < tol)) {
        if (plain >= kSweepsBeforeNewton && m + k <= kNewtonMaxSize) {
            ++iterations;
            if (newton_step(cost, epsilon, a, b, p, viol)) continue;
            plain = 0;  // no progress; give the sweeps another stretch
            continue;
        }
        sinkhorn_sweep(cost, epsilon, log_a, log_b, p);
        ++iterations;
        ++plain;
        viol = violation(plan_from(cost, epsilon, p), a, b);
    }
    out.plan = plan_from(cost, epsilon, p);
    if (!out.plan.allFinite()) fail(ErrorKind::numeric, "transport plan is not finite");
    out.row_marginal = Vector::Constant(m, a);
    out.col_marginal = Vector::Constant(k, b);
    out.iterations_used = iterations;
    out.marginal_violation = viol;
    out.converged = viol < tol;
    out.cost = cost.cwiseProduct(out.plan).sum();
    return out;
}

ExactPlan exact_ot_oracle(const Matrix& cost) {
    const Eigen::Index n = cost.rows();
    if (n != cost.cols()) fail(ErrorKind::unsupported_size, "exact OT oracle needs a square cost matrix");
    if (n < 1 || n > 8) fail(ErrorKind::unsupported_size, "exact OT oracle supports 1 <= n <= 8");
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) c += cost(i, perm[static_cast<std::size_t>(i)]);
        if (c < best_cost) {
            best_cost = c;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    ExactPlan out;
    out.plan = Matrix::Zero(n, n);
    const double w = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) out.plan(i, best[static_cast<std::size_t>(i)]) = w;
    out.cost = best_cost * w;
    return out;
}

std::vector<int> retrieve_top_r(const TransportPlan& plan, const Matrix& cost, int r) {
    if (r < 0) fail(ErrorKind::config, "R must be >= 0");
    if (plan.plan.rows() != cost.rows() || plan.plan.cols() != cost.cols()) {
        fail(ErrorKind::shape, "plan and cost shapes differ");
    }
    const Eigen::Index m = cost.rows();
    if (r == 0 || m == 0) return {};
    std::vector<double> score(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
        const double mass = plan.plan.row(i).sum();
        if (!(mass > 0.0) || !std::isfinite(mass)) {
            fail(ErrorKind::degenerate_plan, "query row " + std::to_string(i) + " carries no transport mass");
        }
        score[static_cast<std::size_t>(i)] = plan.plan.row(i).dot(cost.row(i)) / mass;
    }
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return score[static_cast<std::size_t>(x)] < score[static_cast<std::size_t>(y)];
    });
    order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(r)));
    return order;
}

MappedPoints barycentric_map(const TransportPlan& plan, const std::vector<int>& retrieved,
                             const Matrix& support) {
    if (plan.plan.cols() != support.rows()) fail(ErrorKind::shape, "plan columns do not match supports");
    MappedPoints out;
    out.indices = retrieved;
    const auto r = static_cast<Eigen::Index>(retrieved.size());
    out.weights.resize(r, support.rows());
    out.points = Matrix::Zero(r, support.cols());
    for (Eigen::Index i = 0; i < r; ++i) {
        const int q = retrieved[static_cast<std::size_t>(i)];
        if (q < 0 || q >= plan.plan.rows()) fail(ErrorKind::shape, "retrieved index out of range");
        const double mass = plan.plan.row(q).sum();
        if (!(mass > 0.0)) fail(ErrorKind::degenerate_plan, "query row " + std::to_string(q) + " has zero mass");
        for (Eigen::Index j = 0; j < support.rows(); ++j) {
            const double w = plan.plan(q, j) / mass;
            out.weights(i, j) = w;
            out.points.row(i) += w * support.row(j);
        }
    }
    return out;
}

Matrix barycentric_map_matrix(const TransportPlan& plan, const std::vector<int>& retrieved,
                              const Matrix& support) {
    if (plan.plan.cols() != support.rows()) fail(ErrorKind::shape, "plan columns do not match supports");
    const auto r = static_cast<Eigen::Index>(retrieved.size());
    Matrix rows(r, plan.plan.cols());
    for (Eigen::Index i = 0; i < r; ++i) {
        const int q = retrieved[static_cast<std::size_t>(i)];
        if (q < 0 || q >= plan.plan.rows()) fail(ErrorKind::shape, "retrieved index out of range");
        rows.row(i) = plan.plan.row(q);
    }
    const Vector mass = rows.rowwise().sum();
    if (r > 0 && !(mass.minCoeff() > 0.0)) fail(ErrorKind::degenerate_plan, "retrieved row with zero mass");
    return mass.cwiseInverse().asDiagonal() * rows * support;
}

Projection parse_projection(std::string_view name) {
    if (name == "retrieved_queries") return Projection::retrieved_queries;
    if (name == "support_barycentric") return Projection::support_barycentric;
    throw Error(ErrorKind::config, kModule, "unknown projection '" + std::string(name) + "'");
}

std::string_view to_string(Projection projection) {
    return projection == Projection::retrieved_queries ? "retrieved_queries" : "support_barycentric";
}

PrototypeEstimate estimate_prototypes(const std::vector<Matrix>& support, const Matrix& queries, int r,
                                      const OtSettings& settings, std::vector<std::string> class_ids) {
    const auto n_classes = support.size();
    if (n_classes < 2) fail(ErrorKind::shape, "need at least two classes");
    if (r < 0) fail(ErrorKind::config, "R must be >= 0");
    if (!(settings.epsilon_scale > 0.0)) fail(ErrorKind::config, "ot epsilon scale must be > 0");
    const Eigen::Index d = support.front().cols();
    for (const auto& s : support) {
        if (s.rows() < 1) fail(ErrorKind::shape, "class with no support samples");
        if (s.cols() != d) fail(ErrorKind::shape, "support widths differ across classes");
    }
    if (queries.rows() > 0 && queries.cols() != d) fail(ErrorKind::shape, "query width differs from support width");
    if (class_ids.empty()) {
        for (std::size_t c = 0; c < n_classes; ++c) class_ids.push_back(std::to_string(c));
    }

    PrototypeEstimate out;
    out.classes.resize(n_classes);
    if (r == 0 || queries.rows() == 0) {
        out.prototypes = protonet::support_mean_prototypes(support, std::move(class_ids));
        for (std::size_t c = 0; c < n_classes; ++c) {
            auto& ac = out.classes[c];
            ac.class_index = static_cast<int>(c);
            ac.mapped.resize(0, d);
            ac.prototype = out.prototypes.prototypes.row(static_cast<Eigen::Index>(c)).transpose();
            ac.weights.support = Vector::Constant(support[c].rows(), 1.0 / static_cast<double>(support[c].rows()));
        }
        out.prototypes.validate();
        return out;
    }

    out.prototypes.class_ids = std::move(class_ids);
    out.prototypes.prototypes.resize(static_cast<Eigen::Index>(n_classes), d);
    for (std::size_t c = 0; c < n_classes; ++c) {
        const Matrix& s = support[c];
        auto& ac = out.classes[c];
        ac.class_index = static_cast<int>(c);
        const Matrix cost = cost_matrix(queries, s);
        const double mean_cost = cost.mean();
        // All-zero cost: every coupling is optimal, any epsilon gives the uniform plan.
        const double eps = mean_cost > 0.0 ? settings.epsilon_scale * mean_cost : settings.epsilon_scale;
        ac.plan = sinkhorn(cost, eps, settings.tol, settings.max_iter);
        ac.retrieved = retrieve_top_r(ac.plan, cost, r);

        const auto k = static_cast<double>(s.rows());
        const auto united = static_cast<double>(ac.retrieved.size());
        const double inv_total = 1.0 / (k + united);
        if (settings.projection == Projection::support_barycentric) {
            MappedPoints mp = barycentric_map(ac.plan, ac.retrieved, s);
            ac.mapped = std::move(mp.points);
            ac.weights.support = (Vector::Ones(s.rows()) + mp.weights.colwise().sum().transpose()) * inv_total;
        } else {
            ac.mapped.resize(static_cast<Eigen::Index>(ac.retrieved.size()), d);
            for (std::size_t i = 0; i < ac.retrieved.size(); ++i) {
                ac.mapped.row(static_cast<Eigen::Index>(i)) = queries.row(ac.retrieved[i]);
                ac.weights.query.emplace_back(ac.retrieved[i], inv_total);
            }
            ac.weights.support = Vector::Constant(s.rows(), inv_total);
        }

        Vector sum = Vector::Zero(d);
        for (Eigen::Index j = 0; j < s.rows(); ++j) sum += s.row(j).transpose();
        for (Eigen::Index i = 0; i < ac.mapped.rows(); ++i) sum += ac.mapped.row(i).transpose();
        ac.prototype = sum / (k + united);
        out.prototypes.prototypes.row(static_cast<Eigen::Index>(c)) = ac.prototype.transpose();
    }
    out.prototypes.validate();
    return out;
}

Matrix prototypes_from_weights(const std::vector<Matrix>& support, const Matrix& queries,
                               const std::vector<PrototypeWeights>& weights) {
    if (weights.size() != support.size()) fail(ErrorKind::shape, "one weight set per class required");
    const Eigen::Index d = support.front().cols();
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(support.size()), d);
    for (std::size_t c = 0; c < support.size(); ++c) {
        const auto& w = weights[c];
        if (w.support.size() != support[c].rows()) fail(ErrorKind::shape, "support weight count mismatch");
        out.row(static_cast<Eigen::Index>(c)) = w.support.transpose() * support[c];
        for (const auto& [q, wq] : w.query) out.row(static_cast<Eigen::Index>(c)) += wq * queries.row(q);
    }
    return out;
}

}  // namespace fewshot::qda
