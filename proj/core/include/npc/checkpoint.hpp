#pragma once

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>

#include "npc/strategies.hpp"

// Versioned little-endian binary checkpoint:
//   magic "NPC1", format version, spec digest, scalar width, the model
//   spec, parameter tensors in registry order, then the strategy state.

namespace npc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

template <typename T>
struct Checkpoint {
  ModelSpec spec;
  StrategyKind strategy = StrategyKind::finetune;
  std::vector<std::vector<T>> params;
  ImportanceState importance;  // tracked for every strategy (diagnostics)
  CpcState cpc;                // cpc only
  PenaltyState<T> penalty;     // ewc / mas / si
  SiState si;                  // si only

  Model<T> restore_model() const {
    std::vector<Tensor<T>> tensors;
    const auto shapes = build_registry(spec).param_shapes();
    if (shapes.size() != params.size()) throw DataError("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
      tensors.push_back(Tensor<T>::from_data(shapes[i], params[i], true));
    return Model<T>(spec, std::move(tensors));
  }
};

namespace detail {

class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot write " + path);
    path_ = path;
  }
  void bytes(const void* p, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw DataError("write failure on " + path_);
  }
  template <typename V>
  void pod(V v) {
    static_assert(std::is_trivially_copyable_v<V>);
    bytes(&v, sizeof(v));
  }
  template <typename V>
  void array(const std::vector<V>& v) {
    pod<std::uint64_t>(v.size());
    if (!v.empty()) bytes(v.data(), v.size() * sizeof(V));
  }
  template <typename V>
  void nested(const std::vector<std::vector<V>>& v) {
    pod<std::uint64_t>(v.size());
    for (const auto& inner : v) array(inner);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw DataError("cannot open " + path);
  }
  void bytes(void* p, std::size_t n) {
    in_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw DataError(path_ + " is truncated");
  }
  template <typename V>
  V pod() {
    static_assert(std::is_trivially_copyable_v<V>);
    V v;
    bytes(&v, sizeof(v));
    return v;
  }
  template <typename V>
  std::vector<V> array() {
    const auto n = pod<std::uint64_t>();
    std::vector<V> v(n);
    if (n) bytes(v.data(), n * sizeof(V));
    return v;
  }
  template <typename V>
  std::vector<std::vector<V>> nested() {
    const auto n = pod<std::uint64_t>();
    std::vector<std::vector<V>> v(n);
    for (auto& inner : v) inner = array<V>();
    return v;
  }

 private:
  std::ifstream in_;
  std::string path_;
};

inline void write_spec(BinWriter& w, const ModelSpec& s) {
  w.pod<i64>(s.in_channels);
  w.pod<i64>(s.in_height);
  w.pod<i64>(s.in_width);
  w.array(s.conv_channels);
  w.array(s.dense_hidden);
  w.pod<i64>(s.num_classes);
  w.pod<double>(s.dropout);
  w.pod<i64>(s.kernel_size);
}

inline ModelSpec read_spec(BinReader& r) {
  ModelSpec s;
  s.in_channels = r.pod<i64>();
  s.in_height = r.pod<i64>();
  s.in_width = r.pod<i64>();
  s.conv_channels = r.array<i64>();
  s.dense_hidden = r.array<i64>();
  s.num_classes = r.pod<i64>();
  s.dropout = r.pod<double>();
  s.kernel_size = r.pod<i64>();
  return s;
}

constexpr char kMagic[4] = {'N', 'P', 'C', '1'};
constexpr std::uint32_t kVersion = 1;

}  // namespace detail

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path) {
  detail::BinWriter w(path);
  w.bytes(detail::kMagic, 4);
  w.pod<std::uint32_t>(detail::kVersion);
  w.pod<std::uint64_t>(ckpt.spec.digest());
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(sizeof(T)));
  detail::write_spec(w, ckpt.spec);
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(ckpt.strategy));
  w.nested(ckpt.params);

  w.pod<double>(ckpt.importance.delta);
  w.pod<std::uint8_t>(ckpt.importance.swap_delta ? 1 : 0);
  w.pod<i64>(ckpt.importance.step);
  w.array(ckpt.importance.C);
  w.array(ckpt.importance.last_raw);
  w.array(ckpt.importance.last_normalized);

  w.pod<double>(ckpt.cpc.delta);
  w.pod<std::uint8_t>(ckpt.cpc.swap_delta ? 1 : 0);
  w.pod<i64>(ckpt.cpc.step);
  w.nested(ckpt.cpc.C);
  w.nested(ckpt.cpc.last_raw);
  w.nested(ckpt.cpc.last_normalized);

  w.pod<double>(ckpt.penalty.lambda);
  w.pod<std::uint64_t>(ckpt.penalty.tasks.size());
  for (const auto& task : ckpt.penalty.tasks) {
    w.nested(task.params);
    w.nested(task.weights);
  }

  w.pod<double>(ckpt.si.xi);
  w.nested(ckpt.si.omega);
  w.nested(ckpt.si.start);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  detail::BinReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, detail::kMagic, 4) != 0)
    throw DataError(path + " is not a checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != detail::kVersion)
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  const auto digest = r.pod<std::uint64_t>();
  const auto width = r.pod<std::uint8_t>();
  if (width != sizeof(T))
    throw ConfigError(path + " stores " + std::to_string(width * 8) +
                      "-bit scalars; reload with the matching precision");
  Checkpoint<T> ckpt;
  ckpt.spec = detail::read_spec(r);
  if (ckpt.spec.digest() != digest) throw DataError(path + ": spec digest mismatch");
  ckpt.strategy = static_cast<StrategyKind>(r.pod<std::uint8_t>());
  ckpt.params = r.nested<T>();

  ckpt.importance.delta = r.pod<double>();
  ckpt.importance.swap_delta = r.pod<std::uint8_t>() != 0;
  ckpt.importance.step = r.pod<i64>();
  ckpt.importance.C = r.array<double>();
  ckpt.importance.last_raw = r.array<double>();
  ckpt.importance.last_normalized = r.array<double>();

  ckpt.cpc.delta = r.pod<double>();
  ckpt.cpc.swap_delta = r.pod<std::uint8_t>() != 0;
  ckpt.cpc.step = r.pod<i64>();
  ckpt.cpc.C = r.nested<double>();
  ckpt.cpc.last_raw = r.nested<double>();
  ckpt.cpc.last_normalized = r.nested<double>();

  ckpt.penalty.lambda = r.pod<double>();
  const auto tasks = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < tasks; ++i) {
    typename PenaltyState<T>::TaskAnchor anchor;
    anchor.params = r.nested<T>();
    anchor.weights = r.nested<double>();
    ckpt.penalty.tasks.push_back(std::move(anchor));
  }

  ckpt.si.xi = r.pod<double>();
  ckpt.si.omega = r.nested<double>();
  ckpt.si.start = r.nested<double>();
  return ckpt;
}

}  // namespace npc
