#include "catuda/eval.hpp"

#include "catuda/errors.hpp"
#include "catuda/format.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <random>

namespace catuda {

const std::vector<int>& hidden_target_labels(const DomainDataset& ds) { return ds.target_y_hidden_; }

std::vector<int> argmax_rows(const Matrix& probabilities) {
    std::vector<int> out(static_cast<std::size_t>(probabilities.rows()));
    for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
        int best = 0;
        for (Eigen::Index k = 1; k < probabilities.cols(); ++k) {
            if (probabilities(i, k) > probabilities(i, best)) best = static_cast<int>(k);
        }
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

double accuracy(const Matrix& probabilities, std::span<const int> labels) {
    if (static_cast<Eigen::Index>(labels.size()) != probabilities.rows()) {
        throw ShapeError("accuracy: label count differs from row count");
    }
    if (labels.empty()) return 0.0;
    const auto pred = argmax_rows(probabilities);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const Network& net, const Matrix& x, std::span<const int> labels) {
    return accuracy(forward(net, x, Mode::eval, 0).probabilities, labels);
}

namespace {

double sq_dist(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
    return (a.row(i) - b.row(j)).squaredNorm();
}

// Nearest centroid for every point; ties go to the lowest centroid index.
double assign(const Matrix& points, const Matrix& centroids, std::vector<int>& assignments,
              std::vector<double>& cost) {
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        int best = 0;
        double best_d = sq_dist(points, i, centroids, 0);
        for (Eigen::Index c = 1; c < centroids.rows(); ++c) {
            const double d = sq_dist(points, i, centroids, c);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        assignments[static_cast<std::size_t>(i)] = best;
        cost[static_cast<std::size_t>(i)] = best_d;
        inertia += best_d;
    }
    return inertia;
}

Matrix plus_plus_seeding(const Matrix& points, std::size_t k, std::mt19937_64& rng) {
    const auto n = points.rows();
    Matrix centroids(static_cast<Eigen::Index>(k), points.cols());
    std::vector<bool> chosen(static_cast<std::size_t>(n), false);
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    Eigen::Index pick = first(rng);
    centroids.row(0) = points.row(pick);
    chosen[static_cast<std::size_t>(pick)] = true;

    std::vector<double> d2(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = sq_dist(points, i, centroids, 0);

    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (double v : d2) total += v;
        pick = -1;
        if (total > 0.0) {
            double target = u(rng) * total;
            for (Eigen::Index i = 0; i < n; ++i) {
                target -= d2[static_cast<std::size_t>(i)];
                if (target < 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
                    pick = i;
                    break;
                }
            }
            if (pick < 0) {
                for (Eigen::Index i = n; i-- > 0;) {
                    if (d2[static_cast<std::size_t>(i)] > 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
        } else {
            // Every point coincides with a centroid; take the first unused one.
            for (Eigen::Index i = 0; i < n; ++i) {
                if (!chosen[static_cast<std::size_t>(i)]) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.row(static_cast<Eigen::Index>(c)) = points.row(pick);
        chosen[static_cast<std::size_t>(pick)] = true;
        for (Eigen::Index i = 0; i < n; ++i) {
            d2[static_cast<std::size_t>(i)] =
                std::min(d2[static_cast<std::size_t>(i)],
                         sq_dist(points, i, centroids, static_cast<Eigen::Index>(c)));
        }
    }
    return centroids;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iters) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (k < 1 || k > n) throw ParameterError("kmeans: k must be in [1, number of points]");
    if (max_iters < 1) throw ParameterError("kmeans: max_iters must be >= 1");

    std::mt19937_64 rng(seed);
    KMeansResult res;
    res.centroids = plus_plus_seeding(points, k, rng);
    res.assignments.assign(n, -1);
    std::vector<int> next(n);
    std::vector<double> cost(n);

    for (std::size_t it = 0; it < max_iters; ++it) {
        res.inertia = assign(points, res.centroids, next, cost);
        res.inertia_history.push_back(res.inertia);
        res.iterations = it + 1;
        const bool stable = next == res.assignments;
        res.assignments = next;
        if (stable) break;

        Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), points.cols());
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums.row(res.assignments[i]) += points.row(static_cast<Eigen::Index>(i));
            ++counts[static_cast<std::size_t>(res.assignments[i])];
        }
        std::vector<bool> taken(n, false);
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                res.centroids.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) /
                                                                  static_cast<double>(counts[c]);
                continue;
            }
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!taken[i] && cost[i] > far_d) {
                    far_d = cost[i];
                    far = i;
                }
            }
            taken[far] = true;
            res.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(far));
        }
    }
    return res;
}

KMeansResult kmeans_restarts(const Matrix& points, std::size_t k, std::uint64_t seed,
                             std::size_t max_iters, std::size_t restarts) {
    if (restarts < 1) throw ParameterError("kmeans: restarts must be >= 1");
    KMeansResult best;
    for (std::size_t r = 0; r < restarts; ++r) {
        auto res = kmeans(points, k, derive_seed(seed, {r}), max_iters);
        if (r == 0 || res.inertia < best.inertia) best = std::move(res);
    }
    return best;
}

double cluster_accuracy(std::span<const int> assignments, std::span<const int> true_labels) {
    if (assignments.size() != true_labels.size()) {
        throw ShapeError("cluster_accuracy: length mismatch");
    }
    if (assignments.empty()) return 0.0;
    // std::map keeps labels ordered, so the first maximum is the smallest label.
    std::map<int, std::map<int, std::size_t>> tally;
    for (std::size_t i = 0; i < assignments.size(); ++i) ++tally[assignments[i]][true_labels[i]];
    std::size_t hits = 0;
    for (const auto& [cluster, counts] : tally) {
        std::size_t best = 0;
        for (const auto& [label, count] : counts) best = std::max(best, count);
        hits += best;
    }
    return static_cast<double>(hits) / static_cast<double>(assignments.size());
}

double jsd_proxy(double l_d) { return 0.5 * l_d + std::numbers::ln2; }

double selection_rate(std::span<const double> confidences, double p) {
    if (confidences.empty()) return 0.0;
    std::size_t n = 0;
    for (double c : confidences) n += c > p ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(confidences.size());
}

double target_accuracy(const Network& net, const DomainDataset& ds) {
    return accuracy(net, ds.target_x(), hidden_target_labels(ds));
}

void write_dataset_csv(std::ostream& os, const DomainDataset& ds) {
    os << "domain,class";
    for (std::size_t d = 0; d < ds.dim(); ++d) os << ",x" << d;
    os << '\n';
    auto rows = [&os](const char* domain, const Matrix& x, const std::vector<int>& y) {
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            os << domain << ',' << y[static_cast<std::size_t>(i)];
            for (Eigen::Index d = 0; d < x.cols(); ++d) os << ',' << format_double(x(i, d));
            os << '\n';
        }
    };
    rows("source", ds.source_x(), ds.source_y());
    rows("target", ds.target_x(), hidden_target_labels(ds));
}

}  // namespace catuda
