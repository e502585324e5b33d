#include "catuda/datasets.hpp"

#include "catuda/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <string>

namespace catuda {

namespace {

void append_gaussian(std::vector<double>& coords, std::vector<int>& labels, Point2 mean,
                     double sigma, std::size_t count, int label, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (std::size_t i = 0; i < count; ++i) {
        coords.push_back(mean[0] + noise(rng));
        coords.push_back(mean[1] + noise(rng));
        labels.push_back(label);
    }
}

Matrix to_matrix(const std::vector<double>& coords, std::size_t cols) {
    Matrix m(static_cast<Eigen::Index>(coords.size() / cols), static_cast<Eigen::Index>(cols));
    std::copy(coords.begin(), coords.end(), m.data());
    return m;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

// Index stream over one domain that wraps around with a new permutation.
class CyclingIndices {
  public:
    CyclingIndices(std::size_t n, std::uint64_t seed, std::size_t epoch, std::uint64_t domain_tag)
        : n_(n), seed_(seed), epoch_(epoch), tag_(domain_tag) {
        reshuffle();
    }

    std::vector<std::size_t> take(std::size_t count) {
        if (pos_ + count > order_.size()) {
            ++cycle_;
            reshuffle();
        }
        std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     order_.begin() + static_cast<std::ptrdiff_t>(pos_ + count));
        pos_ += count;
        return out;
    }

  private:
    void reshuffle() {
        order_ = permutation(n_, derive_seed(seed_, {epoch_, tag_, cycle_}));
        pos_ = 0;
    }

    std::size_t n_;
    std::uint64_t seed_;
    std::size_t epoch_;
    std::uint64_t tag_;
    std::size_t cycle_ = 0;
    std::size_t pos_ = 0;
    std::vector<std::size_t> order_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
    if (offset + 4 > bytes.size()) throw FormatError(std::string("truncated ") + what, offset);
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

DomainDataset::DomainDataset(Matrix source_x, std::vector<int> source_y, Matrix target_x,
                             std::vector<int> target_y_hidden, int num_classes)
    : source_x_(std::move(source_x)),
      source_y_(std::move(source_y)),
      target_x_(std::move(target_x)),
      target_y_hidden_(std::move(target_y_hidden)),
      num_classes_(num_classes) {
    if (num_classes_ < 2) throw ParameterError("dataset needs at least 2 classes");
    if (static_cast<std::size_t>(source_x_.rows()) != source_y_.size()) {
        throw ShapeError("source_x rows and source_y length differ");
    }
    if (static_cast<std::size_t>(target_x_.rows()) != target_y_hidden_.size()) {
        throw ShapeError("target_x rows and target label length differ");
    }
    if (source_x_.cols() != target_x_.cols()) throw ShapeError("source and target dims differ");
    if (source_y_.empty() || target_y_hidden_.empty()) throw ParameterError("empty domain");
    if (!source_x_.allFinite() || !target_x_.allFinite()) {
        throw DomainError("dataset contains non-finite coordinates");
    }
    auto check_labels = [this](const std::vector<int>& ys) {
        for (int y : ys) {
            if (y < 0 || y >= num_classes_) throw ParameterError("class id out of range");
        }
    };
    check_labels(source_y_);
    check_labels(target_y_hidden_);
    if (std::set<int>(source_y_.begin(), source_y_.end()).size() < 2) {
        throw ParameterError("source labels must cover at least 2 classes");
    }
}

DomainDataset make_imbalanced_gaussians(const ImbalancedGaussianParams& params, std::uint64_t seed) {
    if (params.n_major < 1 || params.n_minor < 1) throw ParameterError("class counts must be >= 1");
    if (!(params.sigma > 0.0)) throw ParameterError("sigma must be > 0");

    std::mt19937_64 rng(derive_seed(seed, {0x1b}));
    std::vector<double> sx, tx;
    std::vector<int> sy, ty;
    append_gaussian(sx, sy, params.source_means[0], params.sigma, params.n_major, 0, rng);
    append_gaussian(sx, sy, params.source_means[1], params.sigma, params.n_minor, 1, rng);
    append_gaussian(tx, ty, params.target_means[0], params.sigma, params.n_minor, 0, rng);
    append_gaussian(tx, ty, params.target_means[1], params.sigma, params.n_major, 1, rng);
    return DomainDataset(to_matrix(sx, 2), std::move(sy), to_matrix(tx, 2), std::move(ty), 2);
}

DomainDataset make_multimode_domains(const MultimodeParams& params, std::uint64_t seed) {
    if (params.modes_per_class < 2) throw ParameterError("modes_per_class must be >= 2");
    if (params.n_per_mode < 1) throw ParameterError("n_per_mode must be >= 1");
    if (!(params.sigma > 0.0)) throw ParameterError("sigma must be > 0");
    if (!(params.radius > 0.0)) throw ParameterError("radius must be > 0");

    constexpr double deg = std::numbers::pi / 180.0;
    const std::size_t n_modes = 2 * params.modes_per_class;
    const double spacing = 360.0 / static_cast<double>(n_modes);
    auto at = [](double radius, double angle_deg) {
        return Point2{radius * std::cos(angle_deg * deg), radius * std::sin(angle_deg * deg)};
    };

    std::mt19937_64 rng(derive_seed(seed, {0x2c}));
    std::vector<double> sx, tx;
    std::vector<int> sy, ty;
    for (std::size_t j = 0; j < n_modes; ++j) {
        const int label = static_cast<int>(j % 2);
        const double angle = spacing * static_cast<double>(j);
        append_gaussian(sx, sy, at(params.radius, angle), params.sigma, params.n_per_mode, label, rng);
    }
    for (std::size_t j = 0; j < n_modes; ++j) {
        const int label = static_cast<int>(j % 2);
        const double angle = spacing * static_cast<double>(j) + params.rotation_deg;
        append_gaussian(tx, ty, at(params.radius, angle), params.sigma, params.n_per_mode, label, rng);
    }
    if (params.extra_mode) {
        for (int label = 0; label < 2; ++label) {
            const double angle = spacing * label + params.rotation_deg;
            append_gaussian(tx, ty, at(params.extra_radius, angle), params.sigma,
                            params.extra_points[static_cast<std::size_t>(label)], label, rng);
        }
    }
    return DomainDataset(to_matrix(sx, 2), std::move(sy), to_matrix(tx, 2), std::move(ty), 2);
}

std::vector<BatchPair> iterate_batches(const DomainDataset& ds, std::size_t batch_source,
                                       std::size_t batch_target, std::uint64_t seed,
                                       std::size_t epoch) {
    if (batch_source < 1 || batch_target < 1) throw ParameterError("batch sizes must be >= 1");
    if (batch_source > ds.source_size() || batch_target > ds.target_size()) {
        throw ParameterError("batch size exceeds dataset size");
    }
    const std::size_t n_batches =
        std::max(ds.source_size() / batch_source, ds.target_size() / batch_target);
    CyclingIndices src(ds.source_size(), seed, epoch, 0x5);
    CyclingIndices tgt(ds.target_size(), seed, epoch, 0x7);

    std::vector<BatchPair> batches;
    batches.reserve(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b) {
        BatchPair pair;
        const auto s = src.take(batch_source);
        pair.source_x = gather_rows(ds.source_x(), s);
        pair.source_y.reserve(s.size());
        for (auto i : s) pair.source_y.push_back(ds.source_y()[i]);
        pair.target_indices = tgt.take(batch_target);
        pair.target_x = gather_rows(ds.target_x(), pair.target_indices);
        batches.push_back(std::move(pair));
    }
    return batches;
}

BatchStream::BatchStream(const DomainDataset& ds, std::size_t batch_source,
                         std::size_t batch_target, std::uint64_t seed)
    : ds_(&ds), batch_source_(batch_source), batch_target_(batch_target), seed_(seed) {
    current_ = iterate_batches(*ds_, batch_source_, batch_target_, seed_, epoch_);
}

const BatchPair& BatchStream::next() {
    if (cursor_ == current_.size()) {
        ++epoch_;
        cursor_ = 0;
        current_ = iterate_batches(*ds_, batch_source_, batch_target_, seed_, epoch_);
    }
    return current_[cursor_++];
}

IdxSamples parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
    const auto image_magic = read_be32(images, 0, "image header");
    if (image_magic != kIdxImageMagic) throw FormatError("bad IDX image magic", 0);
    const auto label_magic = read_be32(labels, 0, "label header");
    if (label_magic != kIdxLabelMagic) throw FormatError("bad IDX label magic", 0);

    const std::size_t count = read_be32(images, 4, "image header");
    const std::size_t rows = read_be32(images, 8, "image header");
    const std::size_t cols = read_be32(images, 12, "image header");
    const std::size_t label_count = read_be32(labels, 4, "label header");
    if (label_count != count) throw FormatError("label count differs from image count", 4);

    const std::size_t pixels = rows * cols;
    constexpr std::size_t image_data = 16;
    constexpr std::size_t label_data = 8;
    if (images.size() < image_data + count * pixels) {
        throw FormatError("truncated IDX image data", images.size());
    }
    if (labels.size() < label_data + count) throw FormatError("truncated IDX label data", labels.size());

    IdxSamples out;
    out.rows = rows;
    out.cols = cols;
    out.x.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(pixels));
    for (std::size_t i = 0; i < count * pixels; ++i) {
        out.x.data()[i] = static_cast<double>(images[image_data + i]) / 255.0;
    }
    out.labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.labels.push_back(labels[label_data + i]);
    return out;
}

IdxSamples load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                    std::size_t subsample, std::uint64_t seed) {
    const auto image_bytes = read_file(images_path);
    const auto label_bytes = read_file(labels_path);
    IdxSamples all = parse_idx(image_bytes, label_bytes);

    const std::size_t n = all.labels.size();
    const std::size_t keep = (subsample == 0 || subsample > n) ? n : subsample;
    auto order = permutation(n, derive_seed(seed, {0x1d}));
    order.resize(keep);

    IdxSamples out;
    out.rows = all.rows;
    out.cols = all.cols;
    out.x = gather_rows(all.x, order);
    out.labels.reserve(keep);
    for (auto i : order) out.labels.push_back(all.labels[i]);
    return out;
}

}  // namespace catuda
