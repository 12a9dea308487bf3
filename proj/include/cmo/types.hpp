#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmo {

using Index = Eigen::Index;
using VectorXd = Eigen::VectorXd;
using ArrayXd = Eigen::ArrayXd;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXd = RowMatrix<double>;

/// Malformed file contents (bad magic, truncation, version mismatch).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment or training configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure during training (non-finite loss or gradient).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImageShape {
  int width = 0;
  int height = 0;
  int channels = 0;

  Index size() const { return Index{width} * height * channels; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// Pixel array of shape width x height x channels with values in [0, 1].
///
/// Storage is row-major with interleaved channels: the value at column x,
/// row y, channel c lives at (y * width + x) * channels + c.
struct Image {
  ImageShape shape;
  ArrayXd pixels;

  Image() = default;
  explicit Image(ImageShape s) : shape(s), pixels(ArrayXd::Zero(s.size())) {}
  Image(ImageShape s, ArrayXd p);

  Index offset(int x, int y, int c) const { return (Index{y} * shape.width + x) * shape.channels + c; }
  double& at(int x, int y, int c) { return pixels[offset(x, y, c)]; }
  double at(int x, int y, int c) const { return pixels[offset(x, y, c)]; }

  friend bool operator==(const Image& a, const Image& b) {
    return a.shape == b.shape && (a.pixels == b.pixels).all();
  }
};

struct LabeledImage {
  Image image;
  int label = 0;
};

/// Per-class sample counts n_k. Every count is at least one and there are at
/// least two classes.
class ClassHistogram {
 public:
  ClassHistogram() = default;
  explicit ClassHistogram(std::vector<long> counts);

  int num_classes() const { return static_cast<int>(counts_.size()); }
  long count(int k) const { return counts_.at(static_cast<std::size_t>(k)); }
  long total() const { return total_; }
  std::span<const long> counts() const { return counts_; }
  long max_count() const;
  long min_count() const;

  friend bool operator==(const ClassHistogram&, const ClassHistogram&) = default;

 private:
  std::vector<long> counts_;
  long total_ = 0;
};

/// Ordered labeled images sharing one shape, together with their class
/// histogram. Immutable once built.
class Dataset {
 public:
  Dataset() = default;
  /// Validates shapes, pixel range and labels; the histogram is derived from
  /// the labels. Classes with zero samples are allowed here; histogram()
  /// rejects them.
  Dataset(std::vector<LabeledImage> images, int num_classes);

  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  int num_classes() const { return num_classes_; }
  ImageShape shape() const { return shape_; }
  const LabeledImage& operator[](std::size_t i) const { return images_[i]; }
  const std::vector<LabeledImage>& images() const { return images_; }
  int label(std::size_t i) const { return images_[i].label; }

  /// Raw per-class counts (may contain zeros).
  const std::vector<long>& class_counts() const { return class_counts_; }
  /// Histogram view; throws if some class has no samples.
  ClassHistogram histogram() const { return ClassHistogram(class_counts_); }
  /// Indices of the samples of class k, in dataset order.
  const std::vector<std::size_t>& class_members(int k) const {
    return members_.at(static_cast<std::size_t>(k));
  }

  /// Stacks the selected images as rows of a batch matrix.
  RowMatrixXd batch(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    if (a.num_classes_ != b.num_classes_ || a.images_.size() != b.images_.size()) return false;
    for (std::size_t i = 0; i < a.images_.size(); ++i) {
      if (a.images_[i].label != b.images_[i].label || !(a.images_[i].image == b.images_[i].image))
        return false;
    }
    return true;
  }

 private:
  std::vector<LabeledImage> images_;
  int num_classes_ = 0;
  ImageShape shape_;
  std::vector<long> class_counts_;
  std::vector<std::vector<std::size_t>> members_;
};

}  // namespace cmo
