// SPDX-License-Identifier: Apache-2.0
#include "taskmix/task_data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "taskmix/error.hpp"

namespace taskmix {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<char, 4> kMagic{'T', 'M', 'X', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream &out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream &in, const fs::path &path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char *>(b), 4))
    throw DataError(path.string() + ": truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint32_t float_bits(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  return u;
}

float bits_float(std::uint32_t u) {
  float f;
  std::memcpy(&f, &u, sizeof f);
  return f;
}

json splits_to_json(const Splits &s) {
  return json{{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

Splits splits_from_json(const json &j) {
  Splits s;
  try {
    s.train = j.at("train").get<std::vector<std::uint32_t>>();
    s.validation = j.value("validation", std::vector<std::uint32_t>{});
    s.test = j.value("test", std::vector<std::uint32_t>{});
  } catch (const json::exception &e) {
    throw DataError(std::string("manifest: malformed splits: ") + e.what());
  }
  return s;
}

json read_json(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write " + path.string());
  out << text;
}

} // namespace

std::string_view to_string(Role role) { return role == Role::meta_train ? "meta_train" : "meta_test"; }

Role parse_role(std::string_view text) {
  if (text == "meta_train")
    return Role::meta_train;
  if (text == "meta_test")
    return Role::meta_test;
  throw DataError("unknown task role '" + std::string(text) + "'");
}

std::string_view to_string(Split split) {
  switch (split) {
  case Split::train: return "train";
  case Split::validation: return "validation";
  case Split::test: return "test";
  }
  return "?";
}

const std::vector<std::uint32_t> &Splits::get(Split s) const {
  switch (s) {
  case Split::train: return train;
  case Split::validation: return validation;
  case Split::test: return test;
  }
  return train;
}

std::vector<std::size_t> Dataset::indices(Role role) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].role == role)
      out.push_back(i);
  return out;
}

std::vector<double> compute_class_weights(std::span<const std::uint32_t> labels,
                                          std::size_t n_classes, std::size_t max_classes) {
  if (n_classes == 0 || n_classes > max_classes)
    throw DataError("class count " + std::to_string(n_classes) + " outside [1, " +
                    std::to_string(max_classes) + "]");
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::uint32_t l : labels) {
    if (l >= n_classes)
      throw DataError("label " + std::to_string(l) + " out of range for " +
                      std::to_string(n_classes) + " classes");
    ++counts[l];
  }
  std::vector<double> w(max_classes, 0.0);
  const double n = static_cast<double>(labels.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] == 0)
      throw DataError("class " + std::to_string(c) + " has no examples");
    w[c] = n / (static_cast<double>(n_classes) * static_cast<double>(counts[c]));
  }
  return w;
}

Splits auto_split(std::span<const std::uint32_t> labels, std::size_t n_classes,
                  const SplitFractions &f, RngStream &rng) {
  if (f.train < 0 || f.validation < 0 || f.test < 0 ||
      std::abs(f.train + f.validation + f.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must be non-negative and sum to 1");
  const std::size_t needed = (f.train > 0) + (f.validation > 0) + (f.test > 0);

  std::vector<std::vector<std::uint32_t>> by_class(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes)
      throw DataError("label " + std::to_string(labels[i]) + " out of range");
    by_class[labels[i]].push_back(static_cast<std::uint32_t>(i));
  }

  Splits s;
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto &idx = by_class[c];
    const std::size_t n = idx.size();
    if (n < needed)
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(n) +
                      " examples, fewer than the " + std::to_string(needed) + " splits");
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    auto share = [n](double frac) -> std::size_t {
      if (frac <= 0)
        return 0;
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))));
    };
    std::size_t n_val = share(f.validation);
    std::size_t n_test = share(f.test);
    const std::size_t keep_train = f.train > 0 ? 1 : 0;
    while (n_val + n_test + keep_train > n) {
      if (n_val >= n_test && n_val > (f.validation > 0 ? 1u : 0u))
        --n_val;
      else
        --n_test;
    }
    if (f.train <= 0) // no train share: the remainder goes to test
      n_test = n - n_val;
    s.validation.insert(s.validation.end(), idx.begin(), idx.begin() + n_val);
    s.test.insert(s.test.end(), idx.begin() + n_val, idx.begin() + n_val + n_test);
    s.train.insert(s.train.end(), idx.begin() + n_val + n_test, idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

void finalize_task(Task &task, std::size_t max_classes) {
  const std::string where = "task '" + task.id + "': ";
  if (task.features.rows != task.labels.size())
    throw DataError(where + "feature rows and labels differ in count");
  if (task.n_classes == 0 || task.n_classes > max_classes)
    throw DataError(where + "class count outside [1, C_max]");
  for (std::uint32_t l : task.labels)
    if (l >= task.n_classes)
      throw DataError(where + "label " + std::to_string(l) + " out of range for " +
                      std::to_string(task.n_classes) + " classes");

  std::vector<unsigned char> seen(task.size(), 0);
  for (Split sp : {Split::train, Split::validation, Split::test})
    for (std::uint32_t i : task.splits.get(sp)) {
      if (i >= task.size())
        throw DataError(where + "split index " + std::to_string(i) + " out of range");
      if (seen[i]++)
        throw DataError(where + "overlapping splits at index " + std::to_string(i));
    }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw DataError(where + "splits do not cover every example");

  std::vector<std::uint32_t> train_labels;
  train_labels.reserve(task.splits.train.size());
  for (std::uint32_t i : task.splits.train)
    train_labels.push_back(task.labels[i]);
  std::vector<double> w;
  try {
    w = compute_class_weights(train_labels, task.n_classes, max_classes);
  } catch (const DataError &e) {
    throw DataError(where + "train split: " + e.what());
  }
  task.class_weights.assign(w.begin(), w.end());
}

void finalize_dataset(Dataset &dataset) {
  if (dataset.tasks.empty())
    throw DataError("dataset has no tasks");
  std::size_t c_max = 0;
  for (const Task &t : dataset.tasks) {
    if (t.features.cols != dataset.dim)
      throw DataError("task '" + t.id + "': dimension mismatch (" + std::to_string(t.features.cols) +
                      " vs " + std::to_string(dataset.dim) + ")");
    c_max = std::max(c_max, t.n_classes);
  }
  if (dataset.num_meta_train() == 0)
    throw DataError("dataset has no meta_train task");
  dataset.max_classes = c_max;
  for (Task &t : dataset.tasks)
    finalize_task(t, c_max);
}

void write_feature_file(const fs::path &path, const Matrix<float> &features,
                        std::span<const std::uint32_t> labels, std::size_t n_classes) {
  if (features.rows != labels.size())
    throw DataError("feature rows and labels differ in count");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write " + path.string());
  out.write(kMagic.data(), 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(features.rows));
  put_u32(out, static_cast<std::uint32_t>(features.cols));
  put_u32(out, static_cast<std::uint32_t>(n_classes));
  for (std::size_t r = 0; r < features.rows; ++r) {
    put_u32(out, labels[r]);
    for (float v : features.row(r))
      put_u32(out, float_bits(v));
  }
  if (!out)
    throw DataError("write failed: " + path.string());
}

FeatureFile read_feature_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kMagic)
    throw DataError(path.string() + ": bad magic");
  const std::uint32_t version = get_u32(in, path);
  if (version != kVersion)
    throw DataError(path.string() + ": unsupported version " + std::to_string(version));
  const std::uint32_t n = get_u32(in, path);
  const std::uint32_t d = get_u32(in, path);
  FeatureFile f;
  f.n_classes = get_u32(in, path);
  f.features = Matrix<float>(n, d);
  f.labels.resize(n);
  for (std::uint32_t r = 0; r < n; ++r) {
    f.labels[r] = get_u32(in, path);
    if (f.labels[r] >= f.n_classes)
      throw DataError(path.string() + ": label " + std::to_string(f.labels[r]) +
                      " out of range at record " + std::to_string(r));
    for (std::uint32_t c = 0; c < d; ++c)
      f.features(r, c) = bits_float(get_u32(in, path));
  }
  return f;
}

Dataset load_dataset(const fs::path &manifest_path, const LoadOptions &options) {
  const json manifest = read_json(manifest_path);
  const fs::path base = manifest_path.parent_path();
  Dataset ds;
  try {
    ds.dim = manifest.at("dim").get<std::size_t>();
    for (const json &entry : manifest.at("tasks")) {
      Task t;
      t.id = entry.at("id").get<std::string>();
      t.role = parse_role(entry.at("role").get<std::string>());
      t.language = entry.value("language", std::string{});
      t.domain = entry.value("domain", std::string{});
      FeatureFile f = read_feature_file(base / entry.at("file").get<std::string>());
      if (f.features.cols != ds.dim)
        throw DataError("task '" + t.id + "': dimension mismatch (" +
                        std::to_string(f.features.cols) + " vs manifest " + std::to_string(ds.dim) + ")");
      t.n_classes = f.n_classes;
      t.features = std::move(f.features);
      t.labels = std::move(f.labels);
      if (entry.contains("splits")) {
        t.splits = splits_from_json(entry.at("splits"));
      } else {
        RngStream rng(options.split_seed, "split", ds.tasks.size());
        t.splits = auto_split(t.labels, t.n_classes, options.fractions, rng);
      }
      ds.tasks.push_back(std::move(t));
    }
  } catch (const json::exception &e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  finalize_dataset(ds);
  return ds;
}

void write_dataset(const Dataset &dataset, const fs::path &dir) {
  fs::create_directories(dir);
  json tasks = json::array();
  for (const Task &t : dataset.tasks) {
    const std::string file = t.id + ".tmxf";
    write_feature_file(dir / file, t.features, t.labels, t.n_classes);
    json entry{{"id", t.id}, {"role", to_string(t.role)}, {"file", file}, {"splits", splits_to_json(t.splits)}};
    if (!t.language.empty())
      entry["language"] = t.language;
    if (!t.domain.empty())
      entry["domain"] = t.domain;
    tasks.push_back(std::move(entry));
  }
  write_text(dir / "manifest.json", json{{"dim", dataset.dim}, {"tasks", tasks}}.dump(2) + "\n");
}

namespace {

Batch<float> gather(const Task &task, std::span<const std::uint32_t> rows) {
  const std::size_t c_max = task.class_weights.size();
  Batch<float> b{Matrix<float>(rows.size(), task.features.cols), Matrix<float>(rows.size(), c_max),
                 task.class_weights};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = task.features.row(rows[r]);
    std::copy(src.begin(), src.end(), b.x.row(r).begin());
    b.y(r, task.labels[rows[r]]) = 1.0f;
  }
  return b;
}

} // namespace

Batch<float> sample_batch(const Task &task, Split split, std::size_t batch_size, RngStream &rng) {
  const auto &pool = task.splits.get(split);
  if (pool.empty())
    throw UsageError("sample_batch: " + std::string(to_string(split)) + " split of task '" +
                     task.id + "' is empty");
  std::vector<std::uint32_t> rows(batch_size);
  for (auto &r : rows)
    r = pool[rng.index(pool.size())];
  return gather(task, rows);
}

Batch<float> split_batch(const Task &task, Split split) { return gather(task, task.splits.get(split)); }

void convert_csv(const fs::path &csv_path, const std::string &id, Role role, const fs::path &out_dir) {
  std::ifstream in(csv_path);
  if (!in)
    throw DataError("cannot open " + csv_path.string());
  const std::string where = csv_path.string() + ":";

  auto split_cells = [](const std::string &line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      cells.push_back(cell);
    if (!line.empty() && line.back() == ',')
      cells.emplace_back();
    for (auto &c : cells) {
      while (!c.empty() && (c.back() == '\r' || c.back() == ' '))
        c.pop_back();
      while (!c.empty() && c.front() == ' ')
        c.erase(c.begin());
    }
    return cells;
  };

  std::string line;
  if (!std::getline(in, line))
    throw DataError(where + "1: missing header");
  const auto header = split_cells(line);
  if (header.size() < 2 || header[0] != "label")
    throw DataError(where + "1: header must be label,f0,...,f{D-1}");
  const std::size_t dim = header.size() - 1;
  for (std::size_t i = 0; i < dim; ++i)
    if (header[i + 1] != "f" + std::to_string(i))
      throw DataError(where + "1: expected column 'f" + std::to_string(i) + "', found '" +
                      header[i + 1] + "'");

  std::vector<float> values;
  std::vector<std::uint32_t> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r")
      continue;
    const auto cells = split_cells(line);
    if (cells.size() != dim + 1)
      throw DataError(where + std::to_string(line_no) + ": expected " + std::to_string(dim + 1) +
                      " cells, found " + std::to_string(cells.size()));
    std::uint32_t label = 0;
    {
      const auto &c = cells[0];
      auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), label);
      if (ec != std::errc{} || p != c.data() + c.size())
        throw DataError(where + std::to_string(line_no) + ": label '" + c + "' is not a non-negative integer");
    }
    labels.push_back(label);
    for (std::size_t i = 1; i <= dim; ++i) {
      const auto &c = cells[i];
      float v = 0;
      auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc{} || p != c.data() + c.size() || !std::isfinite(v))
        throw DataError(where + std::to_string(line_no) + ": cell " + std::to_string(i + 1) + " '" + c +
                        "' is not a finite number");
      values.push_back(v);
    }
  }
  if (labels.empty())
    throw DataError(where + " no data rows");

  const fs::path manifest_path = out_dir / "manifest.json";
  json manifest{{"dim", dim}, {"tasks", json::array()}};
  if (fs::exists(manifest_path)) {
    manifest = read_json(manifest_path);
    const auto existing = manifest.value("dim", std::size_t{0});
    if (existing != dim)
      throw DataError(where + "1: CSV has " + std::to_string(dim) + " features but manifest dim is " +
                      std::to_string(existing));
  }

  Matrix<float> features(labels.size(), dim);
  features.data = std::move(values);
  const std::size_t n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  fs::create_directories(out_dir);
  const std::string file = id + ".tmxf";
  write_feature_file(out_dir / file, features, labels, n_classes);

  json &tasks = manifest["tasks"];
  json entry{{"id", id}, {"role", to_string(role)}, {"file", file}};
  auto it = std::find_if(tasks.begin(), tasks.end(), [&](const json &t) { return t.value("id", "") == id; });
  if (it != tasks.end())
    *it = entry;
  else
    tasks.push_back(entry);
  write_text(manifest_path, manifest.dump(2) + "\n");
}

} // namespace taskmix
