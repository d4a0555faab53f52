#include "npc/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace npc {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
  if (!in.read(reinterpret_cast<char*>(buf.data()), size))
    throw DataError("failed to read " + path);
  return buf;
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in, const std::string& path) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
    throw DataError("zlib initialization failed for " + path);
  std::vector<std::uint8_t> out;
  out.reserve(in.size() * 4);
  std::uint8_t chunk[1 << 16];
  zs.next_in = const_cast<std::uint8_t*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  do {
    zs.next_out = chunk;
    zs.avail_out = sizeof(chunk);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("corrupt gzip stream in " + path);
    }
    out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

std::vector<std::uint8_t> read_maybe_gzip(const std::string& path) {
  auto buf = read_file(path);
  if (buf.size() >= 2 && buf[0] == 0x1f && buf[1] == 0x8b) return gunzip(buf, path);
  return buf;
}

std::uint32_t be32(const std::vector<std::uint8_t>& buf, std::size_t off,
                   const std::string& path) {
  if (off + 4 > buf.size()) throw DataError(path + " is truncated");
  return (static_cast<std::uint32_t>(buf[off]) << 24) |
         (static_cast<std::uint32_t>(buf[off + 1]) << 16) |
         (static_cast<std::uint32_t>(buf[off + 2]) << 8) |
         static_cast<std::uint32_t>(buf[off + 3]);
}

std::string hex32(std::uint32_t v) {
  char out[11];
  std::snprintf(out, sizeof(out), "0x%08x", v);
  return out;
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  auto ibuf = read_maybe_gzip(images_path);
  const std::uint32_t imagic = be32(ibuf, 0, images_path);
  if (imagic != 0x00000803u)
    throw DataError(images_path + ": bad IDX image magic " + hex32(imagic) +
                    ", expected 0x00000803");
  const std::uint32_t count = be32(ibuf, 4, images_path);
  const std::uint32_t rows = be32(ibuf, 8, images_path);
  const std::uint32_t cols = be32(ibuf, 12, images_path);
  const std::size_t expected = 16 + static_cast<std::size_t>(count) * rows * cols;
  if (ibuf.size() != expected)
    throw DataError(images_path + ": expected " + std::to_string(expected) + " bytes, found " +
                    std::to_string(ibuf.size()));

  auto lbuf = read_maybe_gzip(labels_path);
  const std::uint32_t lmagic = be32(lbuf, 0, labels_path);
  if (lmagic != 0x00000801u)
    throw DataError(labels_path + ": bad IDX label magic " + hex32(lmagic) +
                    ", expected 0x00000801");
  const std::uint32_t lcount = be32(lbuf, 4, labels_path);
  if (lbuf.size() != 8 + static_cast<std::size_t>(lcount))
    throw DataError(labels_path + ": expected " + std::to_string(8 + lcount) + " bytes, found " +
                    std::to_string(lbuf.size()));
  if (lcount != count)
    throw DataError("image/label count mismatch: " + std::to_string(count) + " vs " +
                    std::to_string(lcount));

  Dataset d;
  d.channels = 1;
  d.height = rows;
  d.width = cols;
  d.pixels.assign(ibuf.begin() + 16, ibuf.end());
  d.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) d.labels[i] = lbuf[8 + i];
  return d;
}

Dataset load_cifar100_bin(const std::string& path) {
  auto buf = read_maybe_gzip(path);
  constexpr std::size_t kRecord = 2 + 3 * 32 * 32;
  if (buf.empty() || buf.size() % kRecord != 0)
    throw DataError(path + ": length " + std::to_string(buf.size()) +
                    " is not a multiple of the " + std::to_string(kRecord) + "-byte record");
  const std::size_t count = buf.size() / kRecord;
  Dataset d;
  d.channels = 3;
  d.height = 32;
  d.width = 32;
  d.labels.resize(count);
  d.pixels.resize(count * 3 * 32 * 32);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* rec = buf.data() + i * kRecord;
    d.labels[i] = rec[1];  // fine label
    std::copy(rec + 2, rec + kRecord, d.pixels.data() + i * 3 * 32 * 32);
  }
  return d;
}

TaskStream split_tasks(Dataset train, Dataset validation, i64 k, std::vector<int> class_order) {
  if (k < 1) throw ConfigError("task count must be positive");
  if (class_order.empty()) {
    int max_label = 0;
    for (int l : train.labels) max_label = std::max(max_label, l);
    class_order.resize(max_label + 1);
    std::iota(class_order.begin(), class_order.end(), 0);
  }
  const i64 num_classes = static_cast<i64>(class_order.size());
  if (num_classes % k != 0)
    throw ConfigError("class count " + std::to_string(num_classes) +
                      " is not divisible by task count " + std::to_string(k));
  const i64 per_task = num_classes / k;

  TaskStream stream;
  stream.tasks.resize(k);
  std::vector<int> task_of_class(num_classes, -1);
  for (i64 t = 0; t < k; ++t) {
    auto& task = stream.tasks[t];
    for (i64 j = 0; j < per_task; ++j) {
      const int cls = class_order[t * per_task + j];
      task.classes.push_back(cls);
      if (cls < 0 || cls >= num_classes || task_of_class[cls] != -1)
        throw ConfigError("class order must list each class exactly once");
      task_of_class[cls] = static_cast<int>(t);
    }
  }
  auto assign = [&](const Dataset& d, bool is_train) {
    for (i64 i = 0; i < d.count(); ++i) {
      const int label = d.labels[i];
      if (label < 0 || label >= num_classes)
        throw DataError("sample label " + std::to_string(label) + " outside class order");
      auto& task = stream.tasks[task_of_class[label]];
      (is_train ? task.train_indices : task.val_indices).push_back(i);
    }
  };
  assign(train, true);
  assign(validation, false);
  stream.train = std::move(train);
  stream.validation = std::move(validation);
  return stream;
}

Dataset subsample_per_class(const Dataset& d, i64 max_per_class) {
  if (max_per_class < 1) throw ConfigError("per-class subsample must be positive");
  int max_label = 0;
  for (int l : d.labels) max_label = std::max(max_label, l);
  std::vector<i64> taken(max_label + 1, 0);
  Dataset out;
  out.channels = d.channels;
  out.height = d.height;
  out.width = d.width;
  for (i64 i = 0; i < d.count(); ++i) {
    if (taken[d.labels[i]] >= max_per_class) continue;
    ++taken[d.labels[i]];
    auto img = d.image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(d.labels[i]);
  }
  return out;
}

EpochIterator::EpochIterator(const Task& task, EpochPlan plan, Rng rng)
    : task_(&task), plan_(plan), rng_(rng), remaining_(plan.total_train_count) {
  plan_.validate();
  if (task.train_indices.empty()) throw DataError("task has no training samples");
  order_ = task.train_indices;
  rng_.shuffle(order_);
}

bool EpochIterator::next(std::vector<i64>& indices) {
  indices.clear();
  if (remaining_ <= 0) return false;
  const i64 take = std::min<i64>(plan_.batch, remaining_);
  indices.reserve(take);
  for (i64 i = 0; i < take; ++i) {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    indices.push_back(order_[pos_++]);
  }
  remaining_ -= take;
  return true;
}

}  // namespace npc
