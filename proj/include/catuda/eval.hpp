#pragma once

#include "catuda/datasets.hpp"
#include "catuda/diffnet.hpp"
#include "catuda/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace catuda {

struct RunMetrics {
    std::size_t iteration = 0;
    double target_accuracy = 0.0;
    double source_accuracy = 0.0;
    double clustering_accuracy = 0.0;         // source + target features combined
    double clustering_accuracy_source = 0.0;
    double clustering_accuracy_target = 0.0;
    double jsd_proxy = 0.0;                   // every target sample counted
    double jsd_proxy_selected = 0.0;          // targets filtered by teacher confidence
    double selection_rate = 0.0;
    double l_y = 0.0;
    double l_c = 0.0;
    double l_a = 0.0;
    double l_d = 0.0;
};

/// Argmax per row, ties toward the smallest class id.
std::vector<int> argmax_rows(const Matrix& probabilities);

/// Fraction of eval-mode predictions matching `labels`.
double accuracy(const Network& net, const Matrix& x, std::span<const int> labels);
double accuracy(const Matrix& probabilities, std::span<const int> labels);

struct KMeansResult {
    std::vector<int> assignments;
    Matrix centroids;
    double inertia = 0.0;
    std::vector<double> inertia_history;  // after every assignment step
    std::size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Stops when assignments stop
/// changing or after max_iters; empty clusters are re-seeded with the point
/// farthest from its centroid.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters = 100);

/// Best (lowest inertia) of `restarts` runs with derived seeds.
KMeansResult kmeans_restarts(const Matrix& points, std::size_t k, std::uint64_t seed,
                             std::size_t max_iters = 100, std::size_t restarts = 5);

/// Each cluster takes its majority true label (ties toward the smallest);
/// returns the fraction of points whose cluster label equals their own.
double cluster_accuracy(std::span<const int> assignments, std::span<const int> true_labels);

/// 0.5 * L_d + ln 2.
double jsd_proxy(double l_d);

/// Fraction of confidences strictly above p.
double selection_rate(std::span<const double> confidences, double p);

/// Target-domain accuracy of a network on the dataset's hidden labels.
double target_accuracy(const Network& net, const DomainDataset& ds);

/// CSV with header `domain,class,x0,x1,...`.
void write_dataset_csv(std::ostream& os, const DomainDataset& ds);

}  // namespace catuda
