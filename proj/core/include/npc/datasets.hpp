#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "npc/common.hpp"
#include "npc/rng.hpp"

namespace npc {

// Images stay in byte form until batch assembly; pixels scale to [0,1] on
// conversion.
struct Dataset {
  i64 channels = 0;
  i64 height = 0;
  i64 width = 0;
  std::vector<std::uint8_t> pixels;  // count * channels*height*width
  std::vector<int> labels;

  i64 count() const { return static_cast<i64>(labels.size()); }
  i64 sample_len() const { return channels * height * width; }
  std::span<const std::uint8_t> image(i64 i) const {
    return {pixels.data() + i * sample_len(), static_cast<std::size_t>(sample_len())};
  }
};

// Canonical IDX pair (optionally gzip-compressed, detected by magic).
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

// Canonical CIFAR-100 binary: per record one coarse label byte, one fine
// label byte, 3072 pixel bytes. Fine labels are used.
Dataset load_cifar100_bin(const std::string& path);

struct AugmentPolicy {
  i64 pad = 4;             // zero padding per side before the random crop
  bool flip = false;       // horizontal flip with probability 1/2
};

struct Task {
  std::vector<int> classes;
  std::vector<i64> train_indices;
  std::vector<i64> val_indices;
};

struct TaskStream {
  Dataset train;
  Dataset validation;
  std::vector<Task> tasks;
  AugmentPolicy policy;

  i64 task_count() const { return static_cast<i64>(tasks.size()); }
  // N_total of the redefined epoch: one epoch touches this many samples
  // regardless of the current task's subset size.
  i64 total_train_count() const { return train.count(); }
};

// Contiguous class blocks in the given order (ascending when empty); the
// label count must divide evenly by k.
TaskStream split_tasks(Dataset train, Dataset validation, i64 k,
                       std::vector<int> class_order = {});

// Deterministic per-class truncation for reduced-size runs.
Dataset subsample_per_class(const Dataset& d, i64 max_per_class);

struct EpochPlan {
  i64 total_train_count = 0;
  i64 batch = 0;

  i64 steps() const { return (total_train_count + batch - 1) / batch; }

  void validate() const {
    if (batch < 1 || total_train_count < 1)
      throw ConfigError("epoch plan requires positive batch and sample count");
  }
};

// Yields ceil(N_total / batch) batches per epoch, drawing from the task's
// training subset and reshuffling on every pass over it. The final batch
// may be short so one epoch sees exactly N_total samples.
class EpochIterator {
 public:
  EpochIterator(const Task& task, EpochPlan plan, Rng rng);

  // Fills `indices` with the next batch; false once the epoch is complete.
  bool next(std::vector<i64>& indices);

 private:
  const Task* task_;
  EpochPlan plan_;
  Rng rng_;
  std::vector<i64> order_;
  std::size_t pos_ = 0;
  i64 remaining_;
};

inline std::pair<i64, i64> crop_offsets(Rng& rng, i64 pad) {
  const i64 span = 2 * pad + 1;
  const i64 oy = static_cast<i64>(rng.next_below(static_cast<std::uint64_t>(span)));
  const i64 ox = static_cast<i64>(rng.next_below(static_cast<std::uint64_t>(span)));
  return {oy, ox};
}

// Crop of the zero-padded image at explicit offsets, optional horizontal
// flip, pixel scale to [0,1]. Offsets (pad, pad) reproduce the original.
template <typename T>
void crop_into(std::span<const std::uint8_t> src, i64 c, i64 h, i64 w, i64 pad, i64 oy, i64 ox,
               bool flip, T* dst) {
  constexpr T kScale = T(1) / T(255);
  for (i64 ch = 0; ch < c; ++ch) {
    const std::uint8_t* plane = src.data() + ch * h * w;
    T* out = dst + ch * h * w;
    for (i64 y = 0; y < h; ++y) {
      const i64 sy = y + oy - pad;
      for (i64 x = 0; x < w; ++x) {
        const i64 sx = (flip ? (w - 1 - x) : x) + ox - pad;
        const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
        out[y * w + x] = inside ? static_cast<T>(plane[sy * w + sx]) * kScale : T(0);
      }
    }
  }
}

// Random-crop augmentation; validation paths use scale_into instead.
template <typename T>
void augment_into(std::span<const std::uint8_t> src, i64 c, i64 h, i64 w,
                  const AugmentPolicy& policy, Rng& rng, T* dst) {
  const auto [oy, ox] = crop_offsets(rng, policy.pad);
  const bool flip = policy.flip && rng.bernoulli(0.5);
  crop_into(src, c, h, w, policy.pad, oy, ox, flip, dst);
}

template <typename T>
void scale_into(std::span<const std::uint8_t> src, T* dst) {
  constexpr T kScale = T(1) / T(255);
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]) * kScale;
}

}  // namespace npc
