#ifndef BACON_DATA_HPP
#define BACON_DATA_HPP

// Dataset ingestion: IDX (MNIST / Fashion-MNIST, gzip accepted
// transparently), CIFAR-10 binary batches, and a Gaussian-blob
// generator for fast tests. Images are stored normalized; the stats
// are kept so de-normalization is exact.

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "bacon/rng.hpp"
#include "bacon/tensor.hpp"

namespace bacon {

struct Dataset {
  std::string name;
  std::string split;  // "train" or "test"
  Tensor images;      // n x ch x H x W, normalized
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  std::vector<std::vector<std::size_t>> class_indices;  // per class
  std::vector<real> channel_mean, channel_std;          // normalization stats
  real value_low = 0, value_high = 1;  // normalized pixel bounds

  std::size_t count() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t image_size() const { return channels() * height() * width(); }

  void build_index() {
    class_indices.assign(classes, {});
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= classes)
        throw LabelOutOfRange("label " + std::to_string(labels[i]));
      class_indices[labels[i]].push_back(i);
    }
  }

  std::vector<real> denormalize(const std::vector<real>& px) const {
    const std::size_t hw = height() * width();
    std::vector<real> out(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
      const std::size_t c = (i / hw) % channels();
      out[i] = px[i] * channel_std[c] + channel_mean[c];
    }
    return out;
  }
};

namespace detail {

// Reads a whole file, decompressing gzip transparently (gzread passes
// plain files through unchanged).
inline std::vector<unsigned char> read_file_maybe_gz(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  const bool bad = n < 0;
  gzclose(f);
  if (bad) throw IoError("read error on " + path);
  return out;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b,
                               std::size_t off) {
  if (off + 4 > b.size()) throw TruncatedFile("IDX header truncated");
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

// Per-channel mean/std from raw [0,1] pixels, then normalize in place.
inline void normalize(Dataset& ds, std::vector<real> raw) {
  const std::size_t ch = ds.images.dim(1),
                    hw = ds.images.dim(2) * ds.images.dim(3);
  const std::size_t n = ds.count();
  ds.channel_mean.assign(ch, real(0));
  ds.channel_std.assign(ch, real(0));
  for (std::size_t i = 0; i < raw.size(); ++i)
    ds.channel_mean[(i / hw) % ch] += raw[i];
  for (auto& m : ds.channel_mean) m /= real(n * hw);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const real d = raw[i] - ds.channel_mean[(i / hw) % ch];
    ds.channel_std[(i / hw) % ch] += d * d;
  }
  for (auto& s : ds.channel_std)
    s = std::max(std::sqrt(s / real(n * hw)), real(1e-8));
  real lo = 0, hi = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::size_t c = (i / hw) % ch;
    raw[i] = (raw[i] - ds.channel_mean[c]) / ds.channel_std[c];
    lo = std::min(lo, raw[i]);
    hi = std::max(hi, raw[i]);
  }
  ds.value_low = lo;
  ds.value_high = hi;
  ds.images = Tensor::from(ds.images.shape(), std::move(raw));
}

// Applies stats computed on another split (train stats reused for test).
inline void normalize_with(Dataset& ds, std::vector<real> raw,
                           const Dataset& ref) {
  const std::size_t ch = ds.images.dim(1),
                    hw = ds.images.dim(2) * ds.images.dim(3);
  ds.channel_mean = ref.channel_mean;
  ds.channel_std = ref.channel_std;
  ds.value_low = ref.value_low;
  ds.value_high = ref.value_high;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::size_t c = (i / hw) % ch;
    raw[i] = (raw[i] - ds.channel_mean[c]) / ds.channel_std[c];
  }
  ds.images = Tensor::from(ds.images.shape(), std::move(raw));
}

}  // namespace detail

// IDX pair loader (big-endian, magic 0x803 for images, 0x801 for labels).
// If `stats_from` is given its normalization stats are reused.
inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path,
                        const Dataset* stats_from = nullptr) {
  auto ib = detail::read_file_maybe_gz(images_path);
  auto lb = detail::read_file_maybe_gz(labels_path);
  if (detail::read_be32(ib, 0) != 0x00000803u)
    throw BadMagic("bad IDX image magic in " + images_path);
  if (detail::read_be32(lb, 0) != 0x00000801u)
    throw BadMagic("bad IDX label magic in " + labels_path);
  const std::size_t n = detail::read_be32(ib, 4);
  const std::size_t h = detail::read_be32(ib, 8);
  const std::size_t w = detail::read_be32(ib, 12);
  const std::size_t nl = detail::read_be32(lb, 4);
  if (n != nl)
    throw CountMismatch("image count " + std::to_string(n) + " vs label count " +
                        std::to_string(nl));
  if (ib.size() < 16 + n * h * w) throw TruncatedFile(images_path);
  if (lb.size() < 8 + n) throw TruncatedFile(labels_path);

  Dataset ds;
  ds.name = "idx";
  ds.split = stats_from ? "test" : "train";
  std::vector<real> raw(n * h * w);
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = real(ib[16 + i]) / real(255);
  ds.labels.assign(lb.begin() + 8, lb.begin() + 8 + n);
  ds.classes = 10;
  ds.images = Tensor::zeros({n, 1, h, w});
  if (stats_from)
    detail::normalize_with(ds, std::move(raw), *stats_from);
  else
    detail::normalize(ds, std::move(raw));
  ds.build_index();
  return ds;
}

// CIFAR-10 binary batches: 3073-byte records, 1 label + 3072 RGB-plane bytes.
inline Dataset load_cifar10(const std::vector<std::string>& batch_paths,
                            const Dataset* stats_from = nullptr) {
  constexpr std::size_t kRecord = 3073, kPixels = 3072;
  std::vector<real> raw;
  std::vector<std::size_t> labels;
  for (const auto& path : batch_paths) {
    auto b = detail::read_file_maybe_gz(path);
    if (b.size() % kRecord != 0)
      throw TruncatedFile(path + ": size not a multiple of 3073");
    const std::size_t n = b.size() / kRecord;
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned char lab = b[i * kRecord];
      if (lab >= 10) throw LabelOutOfRange("cifar label " + std::to_string(lab));
      labels.push_back(lab);
      for (std::size_t j = 0; j < kPixels; ++j)
        raw.push_back(real(b[i * kRecord + 1 + j]) / real(255));
    }
  }
  Dataset ds;
  ds.name = "cifar10";
  ds.split = stats_from ? "test" : "train";
  ds.labels = std::move(labels);
  ds.classes = 10;
  ds.images = Tensor::zeros({ds.labels.size(), 3, 32, 32});
  if (stats_from)
    detail::normalize_with(ds, std::move(raw), *stats_from);
  else
    detail::normalize(ds, std::move(raw));
  ds.build_index();
  return ds;
}

// Gaussian blobs: class means on the standard simplex axes scaled by
// `separation`, unit-variance pixels. Fast substrate for property tests.
inline std::pair<Dataset, Dataset> make_blobs(std::size_t classes,
                                              std::size_t per_class,
                                              Shape image_shape,
                                              real separation,
                                              std::uint64_t seed) {
  if (classes < 2) throw BadShape("make_blobs needs at least 2 classes");
  if (separation < 0) throw BadShape("separation must be non-negative");
  if (image_shape.size() != 3 || numel(image_shape) < classes)
    throw BadShape("image shape must be ch x H x W with at least C pixels");
  const std::size_t dim = numel(image_shape);

  auto make_split = [&](std::size_t n_per, std::uint64_t split_seed,
                        const char* split) {
    Dataset ds;
    ds.name = "blobs";
    ds.split = split;
    ds.classes = classes;
    const std::size_t n = classes * n_per;
    std::vector<real> px(n * dim);
    ds.labels.resize(n);
    auto eng = make_engine(split_seed);
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t i = 0; i < n_per; ++i) {
        const std::size_t row = c * n_per + i;
        ds.labels[row] = c;
        for (std::size_t d = 0; d < dim; ++d)
          px[row * dim + d] =
              gaussian(eng) + (d == c ? separation : real(0));
      }
    Shape full = {n};
    full.insert(full.end(), image_shape.begin(), image_shape.end());
    ds.images = Tensor::from(full, std::move(px));
    ds.channel_mean.assign(image_shape[0], real(0));
    ds.channel_std.assign(image_shape[0], real(1));
    // blob pixels are already in model space; keep generous bounds
    ds.value_low = -real(6);
    ds.value_high = separation + real(6);
    ds.build_index();
    return ds;
  };
  Dataset train = make_split(per_class, derive_seed(seed, "blobs-train"), "train");
  Dataset test =
      make_split(std::max<std::size_t>(per_class / 4, 8),
                 derive_seed(seed, "blobs-test"), "test");
  return {std::move(train), std::move(test)};
}

}  // namespace bacon

#endif
