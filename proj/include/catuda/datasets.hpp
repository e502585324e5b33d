#pragma once

#include "catuda/matrix.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace catuda {

class DomainDataset;

/// Ground-truth target labels. Defined by the eval module; training code has
/// no other way to reach them.
const std::vector<int>& hidden_target_labels(const DomainDataset& ds);

/// Labeled source samples plus unlabeled target samples.
class DomainDataset {
  public:
    DomainDataset(Matrix source_x, std::vector<int> source_y, Matrix target_x,
                  std::vector<int> target_y_hidden, int num_classes);

    const Matrix& source_x() const { return source_x_; }
    const std::vector<int>& source_y() const { return source_y_; }
    const Matrix& target_x() const { return target_x_; }
    int num_classes() const { return num_classes_; }
    std::size_t source_size() const { return source_y_.size(); }
    std::size_t target_size() const { return static_cast<std::size_t>(target_x_.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(source_x_.cols()); }

  private:
    friend const std::vector<int>& hidden_target_labels(const DomainDataset& ds);

    Matrix source_x_;
    std::vector<int> source_y_;
    Matrix target_x_;
    std::vector<int> target_y_hidden_;
    int num_classes_;
};

using Point2 = std::array<double, 2>;

struct ImbalancedGaussianParams {
    std::size_t n_major = 1000;
    std::size_t n_minor = 100;
    std::array<Point2, 2> source_means{{{-2.0, 0.0}, {2.0, 0.0}}};
    std::array<Point2, 2> target_means{{{-2.0, 2.0}, {2.0, 2.0}}};
    double sigma = 0.35;
};

/// Two classes. Source holds n_major of class 0 and n_minor of class 1;
/// the target reverses the ratio.
DomainDataset make_imbalanced_gaussians(const ImbalancedGaussianParams& params, std::uint64_t seed);

struct MultimodeParams {
    std::size_t modes_per_class = 2;
    double radius = 3.0;
    double rotation_deg = 30.0;
    std::size_t n_per_mode = 100;
    double sigma = 0.35;
    bool extra_mode = true;
    double extra_radius = 4.0;  // distance of the displaced extra mode from the origin
    // Points in the extra mode of class 0 and class 1. Unequal sizes shift the
    // target class proportions away from the balanced source.
    std::array<std::size_t, 2> extra_points{1600, 100};
};

/// Two classes whose modes alternate around a circle. The target rotates the
/// source modes and, with `extra_mode`, adds one displaced mode per class.
DomainDataset make_multimode_domains(const MultimodeParams& params, std::uint64_t seed);

struct BatchPair {
    Matrix source_x;
    std::vector<int> source_y;
    Matrix target_x;
    std::vector<std::size_t> target_indices;
};

/// One epoch of mini-batches. Both domains are shuffled with seeds derived
/// from (seed, epoch); the shorter stream wraps around with a fresh
/// permutation. Partial trailing batches are dropped.
std::vector<BatchPair> iterate_batches(const DomainDataset& ds, std::size_t batch_source,
                                       std::size_t batch_target, std::uint64_t seed,
                                       std::size_t epoch);

/// Infinite batch stream over successive epochs.
class BatchStream {
  public:
    BatchStream(const DomainDataset& ds, std::size_t batch_source, std::size_t batch_target,
                std::uint64_t seed);
    const BatchPair& next();

  private:
    const DomainDataset* ds_;
    std::size_t batch_source_;
    std::size_t batch_target_;
    std::uint64_t seed_;
    std::size_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<BatchPair> current_;
};

struct IdxSamples {
    Matrix x;  // one flattened image per row, values in [0, 1]
    std::vector<int> labels;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parses the raw bytes of IDX image and label files.
IdxSamples parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

/// Loads an IDX image/label pair and draws `subsample` rows without
/// replacement (0 or >= size keeps all rows, shuffled).
IdxSamples load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                    std::size_t subsample, std::uint64_t seed);

}  // namespace catuda
