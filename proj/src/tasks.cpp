#include "smeta/tasks.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "smeta/csvio.hpp"

namespace smeta {

LinearTask sample_linear_task(Rng& rng, int d) {
  if (d < 1) throw std::invalid_argument("sample_linear_task: d must be >= 1");
  LinearTask t;
  t.theta = rng.gaussian_vec(static_cast<size_t>(d));
  return t;
}

RegressionSample task_sample(const LinearTask& task, Rng& rng, int n, double noise_std) {
  const int d = static_cast<int>(task.theta.size());
  if (n < 1) throw std::invalid_argument("task_sample: n must be >= 1");
  RegressionSample s;
  s.x = Matrix(n, d);
  for (double& v : s.x.a) v = rng.gaussian();
  s.y.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += s.x(i, j) * task.theta[static_cast<size_t>(j)];
    s.y[static_cast<size_t>(i)] = acc + (noise_std != 0.0 ? noise_std * rng.gaussian() : 0.0);
  }
  return s;
}

Matrix whiten_rows(const Matrix& x) {
  if (x.rows < x.cols) throw std::invalid_argument("whiten_rows: needs rows >= cols");
  SvdResult s = svd(x);
  if (s.sigma.back() <= 0.0) throw std::invalid_argument("whiten_rows: rank-deficient input");
  const double root_n = std::sqrt(static_cast<double>(x.rows));
  Matrix w = matmul(s.u, transpose(s.v));
  for (double& v : w.a) v *= root_n;
  return w;
}

GaussianFamily make_gaussian_family(int ambient_dim, double class_mean_radius, double noise_std,
                                    int class_pool_size, uint64_t family_seed) {
  if (ambient_dim < 1 || class_pool_size < 1) {
    throw std::invalid_argument("make_gaussian_family: bad dimensions");
  }
  if (class_mean_radius <= 0.0 || noise_std < 0.0) {
    throw std::invalid_argument("make_gaussian_family: bad radius or noise");
  }
  GaussianFamily f;
  f.ambient_dim = ambient_dim;
  f.class_mean_radius = class_mean_radius;
  f.noise_std = noise_std;
  f.class_pool_size = class_pool_size;
  f.class_means = Matrix(class_pool_size, ambient_dim);
  Rng rng(family_seed);
  for (int c = 0; c < class_pool_size; ++c) {
    VecD g = rng.gaussian_vec(static_cast<size_t>(ambient_dim));
    double norm = 0.0;
    for (double v : g) norm += v * v;
    norm = std::sqrt(norm);
    // A zero draw has probability zero; resample defensively if it happens.
    while (norm == 0.0) {
      g = rng.gaussian_vec(static_cast<size_t>(ambient_dim));
      norm = 0.0;
      for (double v : g) norm += v * v;
      norm = std::sqrt(norm);
    }
    for (int j = 0; j < ambient_dim; ++j) {
      f.class_means(c, j) = class_mean_radius * g[static_cast<size_t>(j)] / norm;
    }
  }
  return f;
}

namespace {

void check_episode_shape(int pool, int n_way, int k_shot, int n_query) {
  if (n_way < 2) throw std::invalid_argument("sample_episode: n_way must be >= 2");
  if (k_shot < 1 || n_query < 0) throw std::invalid_argument("sample_episode: bad shot/query");
  if (n_way > pool) {
    throw std::invalid_argument("sample_episode: n_way exceeds the class pool");
  }
}

}  // namespace

Episode sample_episode(const GaussianFamily& family, int n_way, int k_shot, int n_query, Rng& rng) {
  check_episode_shape(family.class_pool_size, n_way, k_shot, n_query);
  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.n_query = n_query;
  ep.support_x = Matrix(n_way * k_shot, family.ambient_dim);
  ep.query_x = Matrix(n_way * n_query, family.ambient_dim);

  std::vector<int> classes = rng.choose(family.class_pool_size, n_way);
  for (int c = 0; c < n_way; ++c) {
    const int mean_row = classes[static_cast<size_t>(c)];
    for (int s = 0; s < k_shot + n_query; ++s) {
      const bool is_support = s < k_shot;
      const int r = is_support ? c * k_shot + s : c * n_query + (s - k_shot);
      Matrix& dst = is_support ? ep.support_x : ep.query_x;
      for (int j = 0; j < family.ambient_dim; ++j) {
        dst(r, j) = family.class_means(mean_row, j) + family.noise_std * rng.gaussian();
      }
    }
    for (int s = 0; s < k_shot; ++s) ep.support_y.push_back(c);
    for (int q = 0; q < n_query; ++q) ep.query_y.push_back(c);
  }
  return ep;
}

Prop3Construction build_prop3(double epsilon, int ambient_dim, double k_val, bool corrected) {
  if (epsilon <= 0.0) throw std::invalid_argument("build_prop3: epsilon must be > 0");
  if (ambient_dim < 3) throw std::invalid_argument("build_prop3: ambient_dim must be >= 3");

  Prop3Construction p;
  p.epsilon = epsilon;
  p.ambient_dim = ambient_dim;
  p.k_val = k_val;
  p.corrected = corrected;

  p.phi_star = Matrix(ambient_dim, 2);
  p.phi_star(0, 0) = 1.0;
  p.phi_star(1, 1) = 1.0;
  p.phi_hat = Matrix(ambient_dim, 2);
  p.phi_hat(1, 0) = 1.0;
  p.phi_hat(2, 1) = 1.0;

  p.w_star = Matrix(2, 2, {1.0, epsilon, 1.0, -epsilon});
  p.w_hat = Matrix(2, 2, {0.0, 1.0, 1.0, -epsilon});

  const double ke = k_val * epsilon;
  p.task1_x = Matrix(2, ambient_dim);
  p.task1_x(0, 0) = 1.0 - ke;
  p.task1_x(0, 1) = k_val;
  p.task1_x(0, 2) = 1.0;
  p.task1_x(1, 0) = corrected ? -1.0 - ke : 1.0 + ke;
  p.task1_x(1, 1) = k_val;
  p.task1_x(1, 2) = -1.0;
  p.task1_y = {1.0, -1.0};

  p.task2_x = Matrix(2, ambient_dim);
  p.task2_x(0, 0) = 1.0 + ke;
  p.task2_x(0, 1) = k_val;
  p.task2_x(0, 2) = (k_val - 1.0) / epsilon;
  p.task2_x(1, 0) = -1.0 + ke;
  p.task2_x(1, 1) = k_val;
  p.task2_x(1, 2) = (1.0 + k_val) / epsilon;
  p.task2_y = {1.0, -1.0};

  // Residuals of the generating factorization, coordinate-order dot products.
  auto star_pred = [&](const Matrix& pts, int row, int task) {
    double acc = 0.0;
    for (int j = 0; j < 2; ++j) {
      double proj = 0.0;  // (phi_star^T x)_j
      for (int i = 0; i < ambient_dim; ++i) proj += p.phi_star(i, j) * pts(row, i);
      acc += p.w_star(task, j) * proj;
    }
    return acc;
  };
  p.star_residuals = {star_pred(p.task1_x, 0, 0) - p.task1_y[0],
                      star_pred(p.task1_x, 1, 0) - p.task1_y[1],
                      star_pred(p.task2_x, 0, 1) - p.task2_y[0],
                      star_pred(p.task2_x, 1, 1) - p.task2_y[1]};
  return p;
}

DatasetPool dataset_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("dataset: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "label") {
    throw std::runtime_error("dataset: header must be label,f1,...,fd");
  }
  const size_t width = header.size();

  DatasetPool pool;
  std::unordered_map<std::string, int> label_index;
  std::vector<VecD> rows;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != width) {
      throw std::runtime_error("dataset: expected " + std::to_string(width) + " fields at line " +
                               std::to_string(line_no) + ", got " + std::to_string(fields.size()));
    }
    std::string joined;
    for (size_t i = 1; i < fields.size(); ++i) {
      joined += fields[i];
      if (i + 1 < fields.size()) joined += ',';
    }
    VecD feat = parse_csv_doubles(joined, line_no);
    auto [it, inserted] = label_index.try_emplace(fields[0], pool.num_classes());
    if (inserted) pool.label_names.push_back(fields[0]);
    pool.labels.push_back(it->second);
    rows.push_back(std::move(feat));
  }
  if (rows.empty()) throw std::runtime_error("dataset: no data rows");

  pool.features = Matrix(static_cast<int>(rows.size()), static_cast<int>(width) - 1);
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j + 1 < width; ++j) pool.features(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
  }
  pool.by_class.resize(static_cast<size_t>(pool.num_classes()));
  for (size_t i = 0; i < pool.labels.size(); ++i) {
    pool.by_class[static_cast<size_t>(pool.labels[i])].push_back(static_cast<int>(i));
  }
  return pool;
}

DatasetPool load_dataset(const std::string& path) { return dataset_from_csv(read_text_file(path)); }

std::string dataset_to_csv(const Matrix& features, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != features.rows) {
    throw std::invalid_argument("dataset_to_csv: label count mismatch");
  }
  std::ostringstream os;
  os << "label";
  for (int j = 0; j < features.cols; ++j) os << ",f" << (j + 1);
  os << "\n";
  for (int i = 0; i < features.rows; ++i) {
    os << labels[static_cast<size_t>(i)];
    for (int j = 0; j < features.cols; ++j) os << "," << format_g17(features(i, j));
    os << "\n";
  }
  return os.str();
}

Episode sample_episode_from_pool(const DatasetPool& pool, int n_way, int k_shot, int n_query,
                                 Rng& rng) {
  check_episode_shape(pool.num_classes(), n_way, k_shot, n_query);
  const size_t need = static_cast<size_t>(k_shot + n_query);
  for (int c = 0; c < pool.num_classes(); ++c) {
    if (pool.by_class[static_cast<size_t>(c)].size() < need) {
      throw std::runtime_error("dataset: class '" + pool.label_names[static_cast<size_t>(c)] +
                               "' has fewer than k_shot + n_query items");
    }
  }

  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.n_query = n_query;
  ep.support_x = Matrix(n_way * k_shot, pool.features.cols);
  ep.query_x = Matrix(n_way * n_query, pool.features.cols);

  std::vector<int> classes = rng.choose(pool.num_classes(), n_way);
  for (int c = 0; c < n_way; ++c) {
    const auto& members = pool.by_class[static_cast<size_t>(classes[static_cast<size_t>(c)])];
    std::vector<int> picks = rng.choose(static_cast<int>(members.size()), static_cast<int>(need));
    for (size_t s = 0; s < need; ++s) {
      const int src = members[static_cast<size_t>(picks[s])];
      const bool is_support = s < static_cast<size_t>(k_shot);
      const int r = is_support ? c * k_shot + static_cast<int>(s)
                               : c * n_query + static_cast<int>(s) - k_shot;
      Matrix& dst = is_support ? ep.support_x : ep.query_x;
      for (int j = 0; j < pool.features.cols; ++j) dst(r, j) = pool.features(src, j);
    }
    for (int s = 0; s < k_shot; ++s) ep.support_y.push_back(c);
    for (int q = 0; q < n_query; ++q) ep.query_y.push_back(c);
  }
  return ep;
}

}  // namespace smeta
