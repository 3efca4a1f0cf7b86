#include "infosculpt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "infosculpt/errors.hpp"

namespace infosculpt {

EvalReport clustering_accuracy(std::span<const int> preds, std::span<const int> truth, std::size_t num_classes,
                               const std::vector<bool>& is_old_class) {
  if (preds.size() != truth.size()) throw DimensionError("clustering_accuracy: length mismatch");
  if (preds.empty()) throw ContractError("clustering_accuracy: no samples");
  if (is_old_class.size() != num_classes) throw DimensionError("clustering_accuracy: old-class mask size != K");
  const std::size_t k = num_classes;
  auto check = [k](int v, const char* what) {
    if (v < 0 || static_cast<std::size_t>(v) >= k) {
      throw std::out_of_range(std::string("clustering_accuracy: ") + what + " id " + std::to_string(v) +
                              " outside [0, " + std::to_string(k) + ")");
    }
  };

  EvalReport r;
  r.num_samples = preds.size();
  r.contingency.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check(preds[i], "cluster");
    check(truth[i], "class");
    ++r.contingency[static_cast<std::size_t>(preds[i])][static_cast<std::size_t>(truth[i])];
  }
  // Maximize matched counts == minimize negated counts. Empty clusters are
  // all-zero rows of the square table.
  Matrix cost(k, k);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t y = 0; y < k; ++y) cost(c, y) = -static_cast<double>(r.contingency[c][y]);
  r.mapping = hungarian(cost);

  std::size_t correct = 0, correct_old = 0, correct_new = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto y = static_cast<std::size_t>(truth[i]);
    const bool hit = r.mapping[static_cast<std::size_t>(preds[i])] == y;
    correct += hit;
    if (is_old_class[y]) {
      ++r.num_old;
      correct_old += hit;
    } else {
      ++r.num_new;
      correct_new += hit;
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  r.acc_all = ratio(correct, r.num_samples);
  r.acc_old = ratio(correct_old, r.num_old);
  r.acc_new = ratio(correct_new, r.num_new);
  return r;
}

EvalReport evaluate_unlabeled(const ModelParams& params, const GcdDataset& dataset) {
  const auto rows = dataset.unlabeled_indices();
  if (rows.empty()) throw ContractError("evaluate_unlabeled: dataset has no unlabeled samples");
  Matrix x(rows.size(), dataset.input_dim());
  std::vector<int> truth;
  truth.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(dataset.features.row(rows[i]).begin(), dataset.features.row(rows[i]).end(), x.row(i).begin());
    truth.push_back(dataset.labels[rows[i]]);
  }
  const std::size_t k = dataset.num_classes();
  if (params.config().num_classes != k) throw DimensionError("evaluate_unlabeled: model K != dataset K");
  std::vector<bool> old(k, false);
  for (std::size_t y = 0; y < dataset.k_old; ++y) old[y] = true;
  return clustering_accuracy(predict_clusters(params, x), truth, k, old);
}

CmiOracleResult oracle_cmi_routes(const Matrix& preds, std::span<const int> labels) {
  const std::size_t n = preds.rows();
  const std::size_t k = preds.cols();
  if (n == 0 || labels.size() != n) throw DimensionError("oracle_cmi: preds/labels length mismatch");
  int max_label = -1;
  for (int y : labels) {
    if (y < 0) throw std::out_of_range("oracle_cmi: negative label");
    max_label = std::max(max_label, y);
  }
  const auto c = static_cast<std::size_t>(max_label) + 1;
  std::vector<std::size_t> count(c, 0);
  for (int y : labels) ++count[static_cast<std::size_t>(y)];
  for (std::size_t y = 0; y < c; ++y) {
    if (count[y] == 0) throw ContractError("oracle_cmi: class " + std::to_string(y) + " has no samples");
  }

  // Route 1: class means, then the mean KL to the own-class mean.
  Matrix q(c, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) q(static_cast<std::size_t>(labels[i]), j) += preds(i, j);
  for (std::size_t y = 0; y < c; ++y)
    for (double& v : q.row(y)) v /= static_cast<double>(count[y]);
  CmiOracleResult out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    double kl = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = preds(i, j);
      if (p > 0.0) kl += p * std::log(p / q(y, j));
    }
    out.estimator += kl;
  }
  out.estimator /= static_cast<double>(n);

  // Route 2: the empirical joint P(x_i, y, yhat) = 1/n [y = y_i] p_i(yhat),
  // with every conditional obtained by marginalizing the joint.
  std::vector<double> joint(n * c * k, 0.0);
  auto at = [&](std::size_t i, std::size_t y, std::size_t j) -> double& { return joint[(i * c + y) * k + j]; };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) at(i, static_cast<std::size_t>(labels[i]), j) = preds(i, j) / static_cast<double>(n);

  std::vector<double> p_xy(n * c, 0.0);
  Matrix p_y_yhat(c, k);
  std::vector<double> p_y(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < c; ++y)
      for (std::size_t j = 0; j < k; ++j) {
        const double v = at(i, y, j);
        p_xy[i * c + y] += v;
        p_y_yhat(y, j) += v;
        p_y[y] += v;
      }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < c; ++y)
      for (std::size_t j = 0; j < k; ++j) {
        const double v = at(i, y, j);
        if (v <= 0.0) continue;
        const double cond_xy = v / p_xy[i * c + y];
        const double cond_y = p_y_yhat(y, j) / p_y[y];
        total += v * std::log(cond_xy / cond_y);
      }
  out.joint_expansion = total;

  if (std::abs(out.estimator - out.joint_expansion) > 1e-10) {
    std::ostringstream os;
    os << std::setprecision(17) << "oracle_cmi: routes disagree (" << out.estimator << " vs " << out.joint_expansion
       << ")";
    throw std::logic_error(os.str());
  }
  return out;
}

double oracle_cmi(const Matrix& preds, std::span<const int> labels) {
  return oracle_cmi_routes(preds, labels).estimator;
}

void export_embeddings(const ModelParams& params, const GcdDataset& dataset, const std::filesystem::path& path) {
  const Matrix z = embed(params, dataset.features);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "id,label,is_labeled";
  for (std::size_t j = 0; j < z.cols(); ++j) os << ",z" << j;
  os << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    os << dataset.ids[i] << ',' << dataset.labels[i] << ',' << int{dataset.is_labeled[i]};
    for (double v : z.row(i)) os << ',' << v;
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Matrix load_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty embeddings file", 1);
  const auto cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (cols < 4) throw FormatError("embeddings header has no z columns", 1);
  const std::size_t d = cols - 3;
  std::vector<double> data;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!std::getline(ls, cell, ',')) throw FormatError("short row", line_no);
      if (c < 3) continue;
      try {
        std::size_t used = 0;
        data.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError("non-numeric cell '" + cell + "'", line_no);
      }
    }
    ++rows;
  }
  return Matrix(rows, d, std::move(data));
}

}  // namespace infosculpt
