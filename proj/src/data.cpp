#include "infosculpt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "infosculpt/errors.hpp"

namespace infosculpt {

std::size_t GcdDataset::num_labeled() const {
  return static_cast<std::size_t>(std::count(is_labeled.begin(), is_labeled.end(), std::uint8_t{1}));
}

std::vector<std::size_t> GcdDataset::unlabeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (!is_labeled[i]) out.push_back(i);
  return out;
}

void GcdDataset::validate() const {
  if (k_old == 0) throw FormatError("dataset: k_old must be >= 1");
  if (features.rows() != labels.size() || is_labeled.size() != labels.size() || ids.size() != labels.size()) {
    throw FormatError("dataset: column lengths disagree");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes()) {
      throw FormatError("label " + std::to_string(labels[i]) + " outside [0, K)", i + 1);
    }
    if (is_labeled[i] > 1) throw FormatError("is_labeled must be 0 or 1", i + 1);
    if (is_labeled[i] && static_cast<std::size_t>(labels[i]) >= k_old) {
      throw FormatError("labeled sample has label " + std::to_string(labels[i]) + " >= k_old", i + 1);
    }
  }
  if (!features.all_finite()) throw FormatError("dataset: non-finite feature");
}

TrainingView training_view(const GcdDataset& dataset) {
  TrainingView v;
  v.features = &dataset.features;
  v.is_labeled = dataset.is_labeled;
  v.k_old = dataset.k_old;
  v.k_new = dataset.k_new;
  v.visible_labels.resize(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) v.visible_labels[i] = dataset.is_labeled[i] ? dataset.labels[i] : -1;
  return v;
}

void AugmentConfig::validate() const {
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
  if (!(mask_prob >= 0.0 && mask_prob < 1.0)) throw ConfigError("mask_prob must lie in [0, 1)");
}

std::vector<std::size_t> Batch::labeled_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (is_labeled[i]) out.push_back(i);
  return out;
}

std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xFFFFFFFFu); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(a), hi(a), lo(b), hi(b)};
  return std::mt19937_64(seq);
}

GcdDataset generate_gaussian_gcd(std::size_t k_old, std::size_t k_new, std::size_t per_class, std::size_t d_in,
                                 double sep, std::uint64_t seed) {
  if (k_old < 1) throw ConfigError("generate_gaussian_gcd: k_old must be >= 1");
  if (per_class < 4) throw ConfigError("generate_gaussian_gcd: per_class must be >= 4");
  if (d_in < 1) throw ConfigError("generate_gaussian_gcd: d_in must be >= 1");
  if (!(sep >= 0.0) || !std::isfinite(sep)) throw ConfigError("generate_gaussian_gcd: sep must be >= 0");

  const std::size_t k = k_old + k_new;
  std::mt19937_64 rng = seeded_rng(seed, 0x6763645f67656eULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double radius = sep * std::sqrt(static_cast<double>(d_in));

  Matrix means(k, d_in);
  for (std::size_t c = 0; c < k; ++c) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : means.row(c)) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm == 0.0);
    for (double& v : means.row(c)) v *= radius / norm;
  }

  GcdDataset ds;
  ds.k_old = k_old;
  ds.k_new = k_new;
  ds.seed = seed;
  ds.generator = "gaussian";
  ds.features = Matrix(k * per_class, d_in);
  const std::size_t labeled_per_class = (per_class + 1) / 2;
  std::size_t row = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t s = 0; s < per_class; ++s, ++row) {
      for (std::size_t j = 0; j < d_in; ++j) ds.features(row, j) = means(c, j) + normal(rng);
      ds.labels.push_back(static_cast<int>(c));
      ds.is_labeled.push_back(c < k_old && s < labeled_per_class ? 1 : 0);
      ds.ids.push_back(static_cast<std::int64_t>(row));
    }
  }
  return ds;
}

std::pair<Matrix, Matrix> augment_two_views(const Matrix& x, const AugmentConfig& config, std::mt19937_64& rng) {
  config.validate();
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution drop(config.mask_prob);
  auto make_view = [&]() {
    Matrix v = x;
    for (double& e : v.data()) {
      if (config.noise_sigma > 0.0) e += config.noise_sigma * noise(rng);
      if (config.mask_prob > 0.0 && drop(rng)) e = 0.0;
    }
    return v;
  };
  Matrix a = make_view();
  Matrix b = make_view();
  return {std::move(a), std::move(b)};
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch) {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng = seeded_rng(seed, 0x73687566666c65ULL, epoch);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<Batch> make_batches(const TrainingView& view, std::size_t batch_size, const AugmentConfig& augment,
                                std::uint64_t seed, std::uint64_t epoch) {
  if (view.features == nullptr) throw ContractError("make_batches: empty training view");
  const Matrix& x = *view.features;
  std::mt19937_64 rng = seeded_rng(seed ^ augment.seed, 0x6175676d656e74ULL, epoch);
  std::vector<Batch> out;
  for (auto& ids : epoch_batches(view.size(), batch_size, seed, epoch)) {
    Batch b;
    Matrix rows(ids.size(), x.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::copy(x.row(ids[i]).begin(), x.row(ids[i]).end(), rows.row(i).begin());
      b.labels.push_back(view.visible_labels[ids[i]]);
      b.is_labeled.push_back(view.is_labeled[ids[i]]);
    }
    auto [v1, v2] = augment_two_views(rows, augment, rng);
    b.view1 = std::move(v1);
    b.view2 = std::move(v2);
    b.sample_ids = std::move(ids);
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------- file I/O

std::filesystem::path manifest_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  return p.replace_extension(".json");
}

void save_dataset(const GcdDataset& dataset, const std::filesystem::path& csv_path) {
  dataset.validate();
  std::ofstream os(csv_path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + csv_path.string() + " for writing");
  os << "id,label,is_labeled";
  for (std::size_t j = 0; j < dataset.input_dim(); ++j) os << ",f" << j;
  os << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    os << dataset.ids[i] << ',' << dataset.labels[i] << ',' << int{dataset.is_labeled[i]};
    for (double v : dataset.features.row(i)) os << ',' << v;
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + csv_path.string());

  nlohmann::json manifest = {{"k_old", dataset.k_old},
                             {"k_new", dataset.k_new},
                             {"d_in", dataset.input_dim()},
                             {"seed", dataset.seed},
                             {"generator", dataset.generator}};
  std::ofstream ms(manifest_path(csv_path), std::ios::trunc);
  if (!ms) throw std::runtime_error("cannot write manifest for " + csv_path.string());
  ms << manifest.dump(2) << '\n';
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

template <typename T>
T parse_cell(std::string_view cell, std::size_t line, std::string_view column) {
  T value{};
  const auto* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (ec != std::errc() || ptr != end || cell.empty()) {
    throw FormatError("non-numeric cell '" + std::string(cell) + "' in column " + std::string(column), line);
  }
  return value;
}

}  // namespace

GcdDataset load_dataset(const std::filesystem::path& csv_path) {
  std::ifstream ms(manifest_path(csv_path));
  if (!ms) throw FormatError("missing manifest " + manifest_path(csv_path).string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }

  GcdDataset ds;
  std::size_t d_in = 0;
  try {
    ds.k_old = manifest.at("k_old").get<std::size_t>();
    ds.k_new = manifest.at("k_new").get<std::size_t>();
    d_in = manifest.at("d_in").get<std::size_t>();
    ds.seed = manifest.value("seed", std::uint64_t{0});
    ds.generator = manifest.value("generator", std::string("unknown"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }

  std::ifstream is(csv_path);
  if (!is) throw std::runtime_error("cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    const auto header = split_commas(line);
    if (header.size() != 3 + d_in || header[0] != "id" || header[1] != "label" || header[2] != "is_labeled") {
      throw FormatError("malformed header");
    }
    for (std::size_t j = 0; j < d_in; ++j) {
      if (header[3 + j] != "f" + std::to_string(j)) throw FormatError("malformed header column");
    }
  }

  std::vector<double> feats;
  // Errors carry the 1-based data row (the header is not counted).
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != 3 + d_in) {
      throw FormatError("expected " + std::to_string(3 + d_in) + " cells, got " + std::to_string(cells.size()),
                        line_no);
    }
    ds.ids.push_back(parse_cell<std::int64_t>(cells[0], line_no, "id"));
    const int label = parse_cell<int>(cells[1], line_no, "label");
    const int flag = parse_cell<int>(cells[2], line_no, "is_labeled");
    if (flag != 0 && flag != 1) throw FormatError("is_labeled must be 0 or 1", line_no);
    if (label < 0 || static_cast<std::size_t>(label) >= ds.k_old + ds.k_new) {
      throw FormatError("label " + std::to_string(label) + " outside [0, K)", line_no);
    }
    if (flag == 1 && static_cast<std::size_t>(label) >= ds.k_old) {
      throw FormatError("labeled sample has label " + std::to_string(label) + " >= k_old", line_no);
    }
    ds.labels.push_back(label);
    ds.is_labeled.push_back(static_cast<std::uint8_t>(flag));
    for (std::size_t j = 0; j < d_in; ++j) {
      feats.push_back(parse_cell<double>(cells[3 + j], line_no, "f" + std::to_string(j)));
    }
  }
  ds.features = Matrix(ds.labels.size(), d_in, std::move(feats));
  ds.validate();
  return ds;
}

}  // namespace infosculpt
