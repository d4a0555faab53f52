#include <zlib.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "doctest.h"
#include "npc/datasets.hpp"

namespace fs = std::filesystem;
using npc::Dataset;
using npc::i64;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "npc_dataset_tests";
  fs::create_directories(dir);
  return dir;
}

void write_be32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  buf.push_back((v >> 24) & 0xff);
  buf.push_back((v >> 16) & 0xff);
  buf.push_back((v >> 8) & 0xff);
  buf.push_back(v & 0xff);
}

// Minimal IDX pair with the given images (all 4x3) and labels.
std::pair<fs::path, fs::path> write_idx_fixture(const std::string& tag,
                                                const std::vector<std::vector<std::uint8_t>>& imgs,
                                                const std::vector<std::uint8_t>& labels,
                                                std::uint32_t image_magic = 0x00000803u) {
  std::vector<std::uint8_t> ibuf;
  write_be32(ibuf, image_magic);
  write_be32(ibuf, static_cast<std::uint32_t>(imgs.size()));
  write_be32(ibuf, 4);
  write_be32(ibuf, 3);
  for (const auto& img : imgs) ibuf.insert(ibuf.end(), img.begin(), img.end());
  std::vector<std::uint8_t> lbuf;
  write_be32(lbuf, 0x00000801u);
  write_be32(lbuf, static_cast<std::uint32_t>(labels.size()));
  lbuf.insert(lbuf.end(), labels.begin(), labels.end());

  auto ipath = temp_dir() / (tag + "-images-idx3-ubyte");
  auto lpath = temp_dir() / (tag + "-labels-idx1-ubyte");
  std::ofstream(ipath, std::ios::binary)
      .write(reinterpret_cast<const char*>(ibuf.data()), ibuf.size());
  std::ofstream(lpath, std::ios::binary)
      .write(reinterpret_cast<const char*>(lbuf.data()), lbuf.size());
  return {ipath, lpath};
}

std::string mnist_dir() {
  if (const char* env = std::getenv("NPC_DATA_DIR")) return std::string(env) + "/mnist";
  return "/root/data/mnist";
}

bool have_real_mnist() {
  return fs::exists(fs::path(mnist_dir()) / "train-images-idx3-ubyte");
}

Dataset synthetic_labeled(i64 per_class, int classes) {
  Dataset d;
  d.channels = 1;
  d.height = 2;
  d.width = 2;
  for (int c = 0; c < classes; ++c)
    for (i64 i = 0; i < per_class; ++i) {
      d.labels.push_back(c);
      for (int p = 0; p < 4; ++p) d.pixels.push_back(static_cast<std::uint8_t>(c));
    }
  return d;
}

}  // namespace

TEST_CASE("idx fixture round-trips pixels and labels") {
  std::vector<std::uint8_t> img(12);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<std::uint8_t>(i * 7 + 3);
  auto [ipath, lpath] = write_idx_fixture("roundtrip", {img}, {9});
  Dataset d = npc::load_mnist_idx(ipath.string(), lpath.string());
  REQUIRE(d.count() == 1);
  CHECK(d.height == 4);
  CHECK(d.width == 3);
  CHECK(d.labels[0] == 9);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(d.pixels[i] == img[i]);
}

TEST_CASE("idx loader rejects a corrupted magic, naming the observed value") {
  auto [ipath, lpath] = write_idx_fixture("badmagic", {std::vector<std::uint8_t>(12, 0)}, {1},
                                          0x12345678u);
  CHECK_THROWS_WITH_AS(npc::load_mnist_idx(ipath.string(), lpath.string()),
                       doctest::Contains("0x12345678"), npc::DataError);
}

TEST_CASE("idx loader rejects truncated files") {
  auto [ipath, lpath] = write_idx_fixture("trunc", {std::vector<std::uint8_t>(12, 1)}, {1});
  auto raw = std::vector<char>(20);
  {
    std::ifstream in(ipath, std::ios::binary);
    in.read(raw.data(), raw.size());
  }
  auto cut = temp_dir() / "trunc-cut-images-idx3-ubyte";
  std::ofstream(cut, std::ios::binary).write(raw.data(), raw.size());
  CHECK_THROWS_AS(npc::load_mnist_idx(cut.string(), lpath.string()), npc::DataError);
}

TEST_CASE("idx loader accepts gzip-compressed files") {
  std::vector<std::uint8_t> img(12);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<std::uint8_t>(200 - i);
  auto [ipath, lpath] = write_idx_fixture("gz", {img}, {4});
  for (const auto& p : {ipath, lpath}) {
    std::ifstream in(p, std::ios::binary);
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    gzFile gz = gzopen((p.string() + ".gz").c_str(), "wb");
    REQUIRE(gz != nullptr);
    gzwrite(gz, raw.data(), static_cast<unsigned>(raw.size()));
    gzclose(gz);
  }
  Dataset d = npc::load_mnist_idx(ipath.string() + ".gz", lpath.string() + ".gz");
  REQUIRE(d.count() == 1);
  CHECK(d.labels[0] == 4);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(d.pixels[i] == img[i]);
}

TEST_CASE("canonical mnist loads 60000 training samples of 28x28") {
  if (!have_real_mnist()) {
    MESSAGE("canonical MNIST not present; set NPC_DATA_DIR");
    return;
  }
  Dataset train = npc::load_mnist_idx(mnist_dir() + "/train-images-idx3-ubyte",
                                      mnist_dir() + "/train-labels-idx1-ubyte");
  CHECK(train.count() == 60000);
  CHECK(train.height == 28);
  CHECK(train.width == 28);
  Dataset test = npc::load_mnist_idx(mnist_dir() + "/t10k-images-idx3-ubyte",
                                     mnist_dir() + "/t10k-labels-idx1-ubyte");
  CHECK(test.count() == 10000);
}

TEST_CASE("cifar100 fixture of two records preserves fine labels") {
  std::vector<std::uint8_t> buf;
  for (int rec = 0; rec < 2; ++rec) {
    buf.push_back(static_cast<std::uint8_t>(rec));          // coarse
    buf.push_back(static_cast<std::uint8_t>(10 + rec));     // fine
    for (int i = 0; i < 3072; ++i) buf.push_back(static_cast<std::uint8_t>(rec * 3 + 1));
  }
  auto path = temp_dir() / "cifar_fixture.bin";
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(buf.data()), buf.size());
  Dataset d = npc::load_cifar100_bin(path.string());
  REQUIRE(d.count() == 2);
  CHECK(d.labels[0] == 10);
  CHECK(d.labels[1] == 11);
  CHECK(d.channels == 3);
  CHECK(d.pixels[0] == 1);
  CHECK(d.pixels[3072] == 4);
}

TEST_CASE("cifar100 loader rejects lengths that break the record size") {
  std::vector<std::uint8_t> buf(3074 + 17, 0);
  auto path = temp_dir() / "cifar_badlen.bin";
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(buf.data()), buf.size());
  CHECK_THROWS_AS(npc::load_cifar100_bin(path.string()), npc::DataError);
}

TEST_CASE("split_tasks produces contiguous class blocks") {
  auto stream = npc::split_tasks(synthetic_labeled(6, 10), synthetic_labeled(2, 10), 5);
  REQUIRE(stream.task_count() == 5);
  CHECK(stream.tasks[0].classes == std::vector<int>{0, 1});
  CHECK(stream.tasks[2].classes == std::vector<int>{4, 5});
  CHECK(stream.tasks[4].classes == std::vector<int>{8, 9});
  i64 train_total = 0, val_total = 0;
  for (const auto& t : stream.tasks) {
    train_total += static_cast<i64>(t.train_indices.size());
    val_total += static_cast<i64>(t.val_indices.size());
    for (i64 idx : t.train_indices) {
      const int label = stream.train.labels[idx];
      CHECK(std::find(t.classes.begin(), t.classes.end(), label) != t.classes.end());
    }
  }
  CHECK(train_total == stream.train.count());
  CHECK(val_total == stream.validation.count());
}

TEST_CASE("split_tasks with K=1 is the whole dataset") {
  auto stream = npc::split_tasks(synthetic_labeled(3, 4), synthetic_labeled(1, 4), 1);
  REQUIRE(stream.task_count() == 1);
  CHECK(stream.tasks[0].classes.size() == 4);
  CHECK(stream.tasks[0].train_indices.size() == 12);
}

TEST_CASE("split_tasks rejects non-divisible class counts") {
  CHECK_THROWS_AS(npc::split_tasks(synthetic_labeled(2, 10), synthetic_labeled(1, 10), 3),
                  npc::ConfigError);
}

TEST_CASE("split_tasks honors an explicit class order") {
  std::vector<int> order{9, 8, 7, 6, 5, 4, 3, 2, 1, 0};
  auto stream =
      npc::split_tasks(synthetic_labeled(2, 10), synthetic_labeled(1, 10), 5, order);
  CHECK(stream.tasks[0].classes == std::vector<int>{9, 8});
  CHECK(stream.tasks[4].classes == std::vector<int>{1, 0});
}

TEST_CASE("subsample_per_class truncates deterministically") {
  auto d = npc::subsample_per_class(synthetic_labeled(7, 3), 4);
  CHECK(d.count() == 12);
  std::map<int, int> counts;
  for (int l : d.labels) counts[l]++;
  for (auto [cls, n] : counts) CHECK(n == 4);
}

TEST_CASE("center crop offsets reproduce the original image") {
  std::vector<std::uint8_t> img(28 * 28);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<std::uint8_t>(i % 251);
  std::vector<double> out(img.size());
  npc::crop_into<double>(img, 1, 28, 28, 4, 4, 4, false, out.data());
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(out[i] == doctest::Approx(img[i] / 255.0));
}

TEST_CASE("flipping twice is the identity") {
  std::vector<std::uint8_t> img(16);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<std::uint8_t>(13 * i);
  std::vector<double> once(16), twice(16);
  npc::crop_into<double>(img, 1, 4, 4, 0, 0, 0, true, once.data());
  std::vector<std::uint8_t> once_bytes(16);
  for (std::size_t i = 0; i < 16; ++i)
    once_bytes[i] = static_cast<std::uint8_t>(once[i] * 255.0 + 0.5);
  npc::crop_into<double>(once_bytes, 1, 4, 4, 0, 0, 0, true, twice.data());
  for (std::size_t i = 0; i < 16; ++i) CHECK(twice[i] == doctest::Approx(img[i] / 255.0));
}

TEST_CASE("crop offsets are uniform over the 9x9 grid") {
  npc::Rng rng(4242);
  const int draws = 10000;
  std::vector<int> counts(81, 0);
  for (int i = 0; i < draws; ++i) {
    auto [oy, ox] = npc::crop_offsets(rng, 4);
    counts[oy * 9 + ox]++;
  }
  const double expected = draws / 81.0;
  double chi2 = 0.0;
  for (int c : counts) {
    const double d = c - expected;
    chi2 += d * d / expected;
  }
  // 99.9% quantile of chi^2 with 80 degrees of freedom
  CHECK(chi2 < 124.84);
}

TEST_CASE("epoch iterator accounting") {
  Dataset train = synthetic_labeled(60, 10);  // 600 samples, task {0,1} has 120
  auto stream = npc::split_tasks(std::move(train), synthetic_labeled(1, 10), 5);
  npc::EpochPlan plan{stream.total_train_count(), 50};
  CHECK(plan.steps() == 12);

  npc::EpochIterator it(stream.tasks[0], plan, npc::Rng(3));
  std::map<i64, int> visits;
  std::vector<i64> batch;
  int batches = 0;
  i64 samples = 0;
  while (it.next(batch)) {
    ++batches;
    samples += static_cast<i64>(batch.size());
    for (i64 idx : batch) {
      visits[idx]++;
      const int label = stream.train.labels[idx];
      CHECK((label == 0 || label == 1));  // no cross-task leakage
    }
  }
  CHECK(batches == 12);
  CHECK(samples == 600);
  // 600 draws over a 120-sample subset with whole-pass reshuffles: exactly 5 each.
  CHECK(visits.size() == 120);
  for (auto [idx, n] : visits) CHECK(n == 5);
}

TEST_CASE("epoch iterator emits a short final batch") {
  auto stream = npc::split_tasks(synthetic_labeled(10, 2), synthetic_labeled(1, 2), 1);
  npc::EpochPlan plan{stream.total_train_count(), 7};  // 20 samples
  npc::EpochIterator it(stream.tasks[0], plan, npc::Rng(5));
  std::vector<i64> batch;
  std::vector<std::size_t> sizes;
  while (it.next(batch)) sizes.push_back(batch.size());
  CHECK(sizes == std::vector<std::size_t>{7, 7, 6});
}

TEST_CASE("epoch iterator is deterministic for a fixed seed") {
  auto stream = npc::split_tasks(synthetic_labeled(30, 2), synthetic_labeled(1, 2), 1);
  npc::EpochPlan plan{stream.total_train_count(), 8};
  auto collect = [&](std::uint64_t seed) {
    npc::EpochIterator it(stream.tasks[0], plan, npc::Rng(seed));
    std::vector<i64> all, batch;
    while (it.next(batch)) all.insert(all.end(), batch.begin(), batch.end());
    return all;
  };
  CHECK(collect(11) == collect(11));
  CHECK(collect(11) != collect(12));
}
