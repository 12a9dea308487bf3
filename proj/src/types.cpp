#include "cmo/types.hpp"

#include <algorithm>
#include <numeric>

namespace cmo {

Image::Image(ImageShape s, ArrayXd p) : shape(s), pixels(std::move(p)) {
  if (s.width < 1 || s.height < 1 || s.channels < 1)
    throw std::invalid_argument("image dimensions must be positive");
  if (pixels.size() != s.size()) throw std::invalid_argument("pixel count does not match image shape");
}

ClassHistogram::ClassHistogram(std::vector<long> counts) : counts_(std::move(counts)) {
  if (counts_.size() < 2) throw std::invalid_argument("histogram needs at least two classes");
  for (long n : counts_) {
    if (n < 1) throw std::invalid_argument("every class needs at least one sample");
  }
  total_ = std::accumulate(counts_.begin(), counts_.end(), 0L);
}

long ClassHistogram::max_count() const { return *std::max_element(counts_.begin(), counts_.end()); }
long ClassHistogram::min_count() const { return *std::min_element(counts_.begin(), counts_.end()); }

Dataset::Dataset(std::vector<LabeledImage> images, int num_classes)
    : images_(std::move(images)), num_classes_(num_classes) {
  if (num_classes_ < 2) throw std::invalid_argument("dataset needs at least two classes");
  class_counts_.assign(static_cast<std::size_t>(num_classes_), 0);
  members_.assign(static_cast<std::size_t>(num_classes_), {});
  for (std::size_t i = 0; i < images_.size(); ++i) {
    const auto& item = images_[i];
    if (i == 0) {
      shape_ = item.image.shape;
    } else if (!(item.image.shape == shape_)) {
      throw std::invalid_argument("all images in a dataset must share one shape");
    }
    if (item.image.pixels.size() != shape_.size())
      throw std::invalid_argument("pixel count does not match image shape");
    if (item.label < 0 || item.label >= num_classes_)
      throw std::invalid_argument("label out of range: " + std::to_string(item.label));
    if (item.image.pixels.size() > 0 &&
        (item.image.pixels.minCoeff() < 0.0 || item.image.pixels.maxCoeff() > 1.0))
      throw std::invalid_argument("pixel values must lie in [0, 1]");
    ++class_counts_[static_cast<std::size_t>(item.label)];
    members_[static_cast<std::size_t>(item.label)].push_back(i);
  }
}

RowMatrixXd Dataset::batch(std::span<const std::size_t> indices) const {
  RowMatrixXd out(static_cast<Index>(indices.size()), shape_.size());
  for (std::size_t r = 0; r < indices.size(); ++r)
    out.row(static_cast<Index>(r)) = images_.at(indices[r]).image.pixels.matrix().transpose();
  return out;
}

}  // namespace cmo
