#ifndef FASTADV_DATA_DATASET_HPP
#define FASTADV_DATA_DATASET_HPP

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fastadv/core/rng.hpp"
#include "fastadv/core/tensor.hpp"
#include "fastadv/data/idx.hpp"

namespace fastadv {

enum class Split { train, test };

/// Labelled examples; images is [n, ...] with n == labels.size().
template <typename T>
struct Dataset {
  Tensor<T> images;
  std::vector<int> labels;
  std::size_t num_classes = 10;
  Split split = Split::train;

  std::size_t size() const noexcept { return labels.size(); }

  /// Shape of a single example.
  Shape example_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

  void validate(bool unit_range) const {
    if (images.empty() || images.dim(0) != labels.size()) {
      throw std::invalid_argument("dataset: image count does not match label count");
    }
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw std::invalid_argument("dataset: label " + std::to_string(y) + " out of range");
      }
    }
    if (unit_range) {
      for (T v : images.data()) {
        if (!(v >= T{0} && v <= T{1})) throw std::invalid_argument("dataset: pixel outside [0,1]");
      }
    }
  }
};

template <typename T>
struct Batch {
  Tensor<T> images;
  std::vector<int> labels;
  std::size_t index = 0;

  std::size_t size() const noexcept { return labels.size(); }
};

/// Gathers the listed examples into one contiguous batch.
template <typename T>
Batch<T> gather(const Dataset<T>& data, const std::vector<std::size_t>& indices, std::size_t batch_index = 0) {
  if (indices.empty()) throw std::invalid_argument("gather: no indices");
  const std::size_t row = data.images.size() / data.size();
  Shape shape = data.images.shape();
  shape[0] = indices.size();
  std::vector<T> values(indices.size() * row);
  std::vector<int> labels(indices.size());
  auto src = data.images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t k = indices[i];
    if (k >= data.size()) throw std::out_of_range("gather: index out of range");
    std::copy(src.begin() + k * row, src.begin() + (k + 1) * row, values.begin() + i * row);
    labels[i] = data.labels[k];
  }
  return Batch<T>{Tensor<T>(std::move(shape), std::move(values)), std::move(labels), batch_index};
}

/// Partition of one epoch into minibatches. Batches are materialized on
/// demand; the plan must not outlive the dataset it was built from.
template <typename T>
class BatchPlan {
 public:
  BatchPlan(const Dataset<T>& data, std::vector<std::vector<std::size_t>> order)
      : data_(&data), order_(std::move(order)) {}

  std::size_t size() const noexcept { return order_.size(); }
  const std::vector<std::size_t>& indices(std::size_t i) const { return order_.at(i); }
  Batch<T> operator[](std::size_t i) const { return gather(*data_, order_.at(i), i); }

 private:
  const Dataset<T>* data_;
  std::vector<std::vector<std::size_t>> order_;
};

template <typename T>
BatchPlan<T> batches(const Dataset<T>& data, std::size_t batch_size, bool shuffle, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  if (data.size() == 0) throw std::invalid_argument("cannot batch an empty dataset");
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  if (shuffle) std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> order;
  for (std::size_t start = 0; start < perm.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, perm.size());
    order.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                       perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return BatchPlan<T>(data, std::move(order));
}

/// Examples [begin, end).
template <typename T>
Dataset<T> rows(const Dataset<T>& data, std::size_t begin, std::size_t end) {
  if (begin >= end || end > data.size()) throw std::out_of_range("rows: bad range");
  Dataset<T> out;
  out.images = data.images.slice_rows(begin, end);
  out.labels.assign(data.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    data.labels.begin() + static_cast<std::ptrdiff_t>(end));
  out.num_classes = data.num_classes;
  out.split = data.split;
  return out;
}

/// First n examples (all of them when n is 0 or larger than the set).
template <typename T>
Dataset<T> take(const Dataset<T>& data, std::size_t n) {
  if (n == 0 || n >= data.size()) return data;
  return rows(data, 0, n);
}

template <typename T>
Dataset<T> load_mnist(const std::filesystem::path& dir, Split split) {
  const std::string prefix = split == Split::train ? "train" : "t10k";
  const auto images_path = dir / (prefix + "-images-idx3-ubyte");
  const auto labels_path = dir / (prefix + "-labels-idx1-ubyte");
  if (!std::filesystem::exists(images_path) || !std::filesystem::exists(labels_path)) {
    throw std::runtime_error("MNIST files not found under " + dir.string() +
                             " (run tools/fetch_mnist.sh or set FASTADV_DATA_ROOT)");
  }
  const IdxArray img = parse_idx(read_file_bytes(images_path));
  const IdxArray lab = parse_idx(read_file_bytes(labels_path));
  if (img.magic() != idx_images_magic || lab.magic() != idx_labels_magic) {
    throw FormatError("MNIST: image/label files swapped or malformed");
  }
  Dataset<T> d;
  d.images = idx_images<T>(img);
  d.labels = idx_labels(lab);
  d.num_classes = 10;
  d.split = split;
  d.validate(true);
  return d;
}

}  // namespace fastadv

#endif  // FASTADV_DATA_DATASET_HPP
