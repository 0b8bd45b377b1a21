/*
 * Copyright 2026 The gpmil Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "gpmil/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gpmil/error.hpp"
#include "gpmil/rng.hpp"

namespace gpmil {

using Eigen::Index;
using Eigen::MatrixXd;
using nlohmann::json;

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(n_classes, 0)), 0);
  for (const auto& bag : bags) {
    if (bag.label >= 0 && bag.label < n_classes) ++counts[bag.label];
  }
  return counts;
}

std::size_t Dataset::total_instances() const {
  std::size_t n = 0;
  for (const auto& bag : bags) n += static_cast<std::size_t>(bag.size());
  return n;
}

int mil_bag_label(const std::vector<int>& instance_labels) {
  int label = 0;
  for (const int y : instance_labels) label = std::max(label, y);
  return label;
}

std::vector<std::string> find_mil_violations(const Dataset& dataset) {
  std::vector<std::string> bad;
  for (const auto& bag : dataset.bags) {
    bool ok = bag.size() >= 1 && bag.dim() == dataset.dim &&
              bag.features.allFinite() && bag.label >= 0 &&
              bag.label < dataset.n_classes;
    if (ok && bag.instance_labels) {
      const auto& y = *bag.instance_labels;
      ok = static_cast<Index>(y.size()) == bag.size() &&
           std::all_of(y.begin(), y.end(),
                       [&](int v) { return v >= 0 && v < dataset.n_classes; }) &&
           mil_bag_label(y) == bag.label;
    }
    if (!ok) bad.push_back(bag.id);
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Synthetic generation

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& m) { throw InvalidArgument("SyntheticSpec: " + m); };
  if (n_classes < 2) fail("n_classes must be at least 2");
  if (dim < 1) fail("dim must be positive");
  if (k_min < 1 || k_max < k_min) fail("need 1 <= k_min <= k_max");
  if (!(cluster_std > 0.0)) fail("cluster_std must be positive");
  if (!(positive_fraction_lo >= 0.0 && positive_fraction_hi > 0.0 &&
        positive_fraction_lo <= positive_fraction_hi &&
        positive_fraction_hi <= 1.0)) {
    fail("positive fraction range must lie in (0, 1]");
  }
  if (cluster_means.rows() != n_classes || cluster_means.cols() != dim) {
    fail("cluster_means must be n_classes x dim");
  }
  if (!cluster_means.allFinite()) fail("cluster_means must be finite");
  for (Index a = 0; a < cluster_means.rows(); ++a) {
    for (Index b = a + 1; b < cluster_means.rows(); ++b) {
      if (cluster_means.row(a) == cluster_means.row(b)) {
        fail("cluster means " + std::to_string(a) + " and " +
             std::to_string(b) + " coincide");
      }
    }
  }
}

MatrixXd default_cluster_means(int n_classes, Index dim, double separation,
                               std::uint64_t seed) {
  if (n_classes < 2 || dim < 1 || !(separation > 0.0)) {
    throw InvalidArgument("default_cluster_means: invalid arguments");
  }
  Rng rng(seed);
  MatrixXd means = MatrixXd::Zero(n_classes, dim);
  for (int c = 1; c < n_classes; ++c) {
    Eigen::RowVectorXd direction = rng.normal_matrix(1, dim);
    direction.normalize();
    means.row(c) = separation * direction;
  }
  return means;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  std::vector<int> labels(spec.n_bags);
  for (std::size_t i = 0; i < spec.n_bags; ++i) {
    labels[i] = static_cast<int>(i % static_cast<std::size_t>(spec.n_classes));
  }
  rng.shuffle(std::span<int>(labels));

  Dataset out;
  out.dim = spec.dim;
  out.n_classes = spec.n_classes;
  out.bags.reserve(spec.n_bags);
  for (std::size_t i = 0; i < spec.n_bags; ++i) {
    InstanceBag bag;
    char id[32];
    std::snprintf(id, sizeof id, "bag_%05zu", i);
    bag.id = id;
    bag.label = labels[i];
    const Index k = rng.uniform_int(spec.k_min, spec.k_max);

    std::vector<int> inst(static_cast<std::size_t>(k), 0);
    if (bag.label > 0) {
      // Fraction drawn from (lo, hi].
      const double u = rng.uniform_open0();
      const double frac = spec.positive_fraction_lo +
                          (spec.positive_fraction_hi - spec.positive_fraction_lo) * u;
      const auto n_pos = std::clamp<Index>(
          static_cast<Index>(std::llround(frac * static_cast<double>(k))), 1, k);
      std::vector<Index> order(static_cast<std::size_t>(k));
      std::iota(order.begin(), order.end(), Index{0});
      rng.shuffle(std::span<Index>(order));
      for (Index j = 0; j < n_pos; ++j) inst[order[j]] = bag.label;
    }

    bag.features.resize(k, spec.dim);
    for (Index r = 0; r < k; ++r) {
      for (Index c = 0; c < spec.dim; ++c) {
        bag.features(r, c) = spec.cluster_means(inst[r], c) +
                             spec.cluster_std * rng.normal();
      }
    }
    bag.instance_labels = std::move(inst);
    out.bags.push_back(std::move(bag));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary format
//
//   magic "GPMILDS\0" | u32 version | u32 dim | u32 n_classes | u64 n_bags
//   per bag: u32 id_len | id bytes | u32 K | u32 label | u8 has_inst |
//            [K x u32 instance label] | K*dim x f64 (row-major)
// All integers and doubles little-endian.

namespace {

constexpr char kMagic[8] = {'G', 'P', 'M', 'I', 'L', 'D', 'S', '\0'};
constexpr std::uint32_t kBinaryVersion = 1;

template <typename U>
void put_le(std::ostream& out, U value) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(buf, sizeof(U));
}

void put_f64(std::ostream& out, double v) {
  put_le(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void set_context(std::string context) { context_ = std::move(context); }

  template <typename U>
  U get_le() {
    unsigned char buf[sizeof(U)];
    in_.read(reinterpret_cast<char*>(buf), sizeof(U));
    if (in_.gcount() != static_cast<std::streamsize>(sizeof(U))) fail("truncated input");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }

  double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

  std::string get_bytes(std::size_t n) {
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) fail("truncated input");
    return s;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("dataset " + context_ + ": " + what);
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::string context_ = "header";
};

}  // namespace

void write_dataset_binary(const Dataset& dataset, std::ostream& out) {
  out.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kBinaryVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.dim));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.n_classes));
  put_le<std::uint64_t>(out, dataset.bags.size());
  for (const auto& bag : dataset.bags) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bag.id.size()));
    out.write(bag.id.data(), static_cast<std::streamsize>(bag.id.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bag.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bag.label));
    out.put(bag.instance_labels ? 1 : 0);
    if (bag.instance_labels) {
      for (const int y : *bag.instance_labels) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(y));
      }
    }
    for (Index r = 0; r < bag.size(); ++r) {
      for (Index c = 0; c < bag.dim(); ++c) put_f64(out, bag.features(r, c));
    }
  }
}

Dataset read_dataset_binary(std::istream& in) {
  Reader rd(in);
  if (rd.get_bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    rd.fail("bad magic (not a gpmil dataset file)");
  }
  const auto version = rd.get_le<std::uint32_t>();
  if (version != kBinaryVersion) {
    rd.fail("unsupported version " + std::to_string(version));
  }
  Dataset ds;
  ds.dim = rd.get_le<std::uint32_t>();
  ds.n_classes = static_cast<int>(rd.get_le<std::uint32_t>());
  const auto n_bags = rd.get_le<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_bags; ++i) {
    rd.set_context("record " + std::to_string(i));
    InstanceBag bag;
    const auto id_len = rd.get_le<std::uint32_t>();
    if (id_len > (1u << 20)) rd.fail("implausible id length");
    bag.id = rd.get_bytes(id_len);
    rd.set_context("record " + std::to_string(i) + " ('" + bag.id + "')");
    const auto k = rd.get_le<std::uint32_t>();
    if (k == 0) rd.fail("bag has no instances");
    bag.label = static_cast<int>(rd.get_le<std::uint32_t>());
    if (bag.label >= ds.n_classes) rd.fail("label out of range");
    const auto flag = rd.get_le<std::uint8_t>();
    if (flag > 1) rd.fail("bad instance-label flag");
    if (flag == 1) {
      std::vector<int> y(k);
      for (auto& v : y) {
        v = static_cast<int>(rd.get_le<std::uint32_t>());
        if (v >= ds.n_classes) rd.fail("instance label out of range");
      }
      bag.instance_labels = std::move(y);
    }
    bag.features.resize(k, ds.dim);
    for (Index r = 0; r < static_cast<Index>(k); ++r) {
      for (Index c = 0; c < ds.dim; ++c) bag.features(r, c) = rd.get_f64();
    }
    ds.bags.push_back(std::move(bag));
  }
  rd.set_context("trailer");
  if (!rd.at_end()) rd.fail("trailing bytes after last record");
  return ds;
}

// ---------------------------------------------------------------------------
// JSON lines: one header object, then one object per bag.

void write_dataset_jsonl(const Dataset& dataset, std::ostream& out) {
  json header = {{"format", "gpmil-dataset"},
                 {"version", kBinaryVersion},
                 {"dim", dataset.dim},
                 {"n_classes", dataset.n_classes},
                 {"n_bags", dataset.bags.size()}};
  out << header.dump() << '\n';
  for (const auto& bag : dataset.bags) {
    json rows = json::array();
    for (Index r = 0; r < bag.size(); ++r) {
      json row = json::array();
      for (Index c = 0; c < bag.dim(); ++c) row.push_back(bag.features(r, c));
      rows.push_back(std::move(row));
    }
    json rec = {{"id", bag.id}, {"label", bag.label}, {"features", rows}};
    rec["instance_labels"] =
        bag.instance_labels ? json(*bag.instance_labels) : json(nullptr);
    out << rec.dump() << '\n';
  }
}

Dataset read_dataset_jsonl(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> void {
    throw ParseError("dataset line " + std::to_string(line_no) + ": " + what);
  };
  Dataset ds;
  std::size_t expected = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(e.what());
    }
    try {
      if (!have_header) {
        if (rec.value("format", "") != "gpmil-dataset") fail("missing header");
        ds.dim = rec.at("dim").get<Index>();
        ds.n_classes = rec.at("n_classes").get<int>();
        expected = rec.at("n_bags").get<std::size_t>();
        have_header = true;
        continue;
      }
      InstanceBag bag;
      bag.id = rec.at("id").get<std::string>();
      bag.label = rec.at("label").get<int>();
      if (bag.label < 0 || bag.label >= ds.n_classes) fail("label out of range");
      const auto& rows = rec.at("features");
      if (rows.empty()) fail("bag has no instances");
      bag.features.resize(static_cast<Index>(rows.size()), ds.dim);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != static_cast<std::size_t>(ds.dim)) fail("row width");
        for (Index c = 0; c < ds.dim; ++c) {
          bag.features(static_cast<Index>(r), c) = rows[r][c].get<double>();
        }
      }
      const auto& inst = rec.at("instance_labels");
      if (!inst.is_null()) {
        bag.instance_labels = inst.get<std::vector<int>>();
        if (bag.instance_labels->size() != rows.size()) {
          fail("instance label count");
        }
      }
      ds.bags.push_back(std::move(bag));
    } catch (const json::exception& e) {
      fail(e.what());
    }
  }
  if (!have_header) fail("missing header");
  if (ds.bags.size() != expected) {
    fail("header announces " + std::to_string(expected) + " bags, found " +
         std::to_string(ds.bags.size()));
  }
  return ds;
}

namespace {

bool is_jsonl(const std::filesystem::path& path) {
  return path.extension() == ".jsonl";
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  if (is_jsonl(path)) {
    write_dataset_jsonl(dataset, out);
  } else {
    write_dataset_binary(dataset, out);
  }
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return is_jsonl(path) ? read_dataset_jsonl(in) : read_dataset_binary(in);
}

// ---------------------------------------------------------------------------
// Splits

DatasetSplit split_dataset(const Dataset& dataset,
                           const std::array<double, 3>& fractions,
                           std::uint64_t seed) {
  double total = 0.0;
  for (const double f : fractions) {
    if (!(f >= 0.0)) throw InvalidArgument("split_dataset: negative fraction");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InvalidArgument("split_dataset: fractions must sum to 1");
  }
  std::vector<std::size_t> active;
  for (std::size_t p = 0; p < 3; ++p) {
    if (fractions[p] > 0.0) active.push_back(p);
  }

  Rng rng(seed);
  std::array<std::vector<std::size_t>, 3> members;
  for (int c = 0; c < dataset.n_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dataset.bags.size(); ++i) {
      if (dataset.bags[i].label == c) idx.push_back(i);
    }
    if (idx.empty()) continue;
    if (idx.size() < active.size()) {
      throw StratificationError(
          "split_dataset: class " + std::to_string(c) + " has " +
          std::to_string(idx.size()) + " bags for " +
          std::to_string(active.size()) + " split parts");
    }
    rng.shuffle(std::span<std::size_t>(idx));

    // Largest remainder, then make sure every active part is non-empty.
    const auto n = static_cast<double>(idx.size());
    std::array<std::size_t, 3> count{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      const double exact = fractions[p] * n;
      count[p] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      rem[p] = exact - static_cast<double>(count[p]);
      assigned += count[p];
    }
    while (assigned < idx.size()) {
      std::size_t best = active.front();
      for (const std::size_t p : active) {
        if (rem[p] > rem[best]) best = p;
      }
      ++count[best];
      rem[best] = -1.0;
      ++assigned;
    }
    for (const std::size_t p : active) {
      if (count[p] == 0) {
        auto donor = std::max_element(count.begin(), count.end());
        --*donor;
        count[p] = 1;
      }
    }

    std::size_t pos = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      for (std::size_t j = 0; j < count[p]; ++j) members[p].push_back(idx[pos++]);
    }
  }

  DatasetSplit split;
  std::array<Dataset*, 3> parts{&split.train, &split.val, &split.test};
  for (std::size_t p = 0; p < 3; ++p) {
    std::sort(members[p].begin(), members[p].end());
    parts[p]->dim = dataset.dim;
    parts[p]->n_classes = dataset.n_classes;
    for (const std::size_t i : members[p]) parts[p]->bags.push_back(dataset.bags[i]);
  }
  return split;
}

}  // namespace gpmil
