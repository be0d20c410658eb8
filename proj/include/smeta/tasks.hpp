#pragma once

#include <string>
#include <vector>

#include "smeta/linalg.hpp"
#include "smeta/rng.hpp"

namespace smeta {

// One few-shot classification task. Row i of support_x (query_x) pairs with
// support_y[i] (query_y[i]); labels are 0..n_way-1, support holds exactly
// k_shot rows per class, queries n_query per class, grouped by class.
struct Episode {
  Matrix support_x;
  std::vector<int> support_y;
  Matrix query_x;
  std::vector<int> query_y;
  int n_way = 0;
  int k_shot = 0;
  int n_query = 0;
};

// Regression task y = <theta, x> + noise with theta ~ N(0, I_d).
struct LinearTask {
  VecD theta;
};

LinearTask sample_linear_task(Rng& rng, int d);

// X rows i.i.d. N(0, I_d); y = X theta + noise_std * N(0, 1). noise_std = 0
// is the exact-labels test hook.
struct RegressionSample {
  Matrix x;  // n x d
  VecD y;    // n
};

RegressionSample task_sample(const LinearTask& task, Rng& rng, int n, double noise_std = 1.0);

// Replaces X by sqrt(n) * U V^T from its thin SVD, so the sample second
// moment X^T X / n is the identity to rounding. Requires n >= d and full
// column rank.
Matrix whiten_rows(const Matrix& x);

// A pool of Gaussian class clusters: means drawn once (per family seed)
// uniformly on the radius-r sphere, samples = mean + noise_std * N(0, I).
struct GaussianFamily {
  int ambient_dim = 16;
  double class_mean_radius = 4.0;
  double noise_std = 1.0;
  int class_pool_size = 64;
  Matrix class_means;  // class_pool_size x ambient_dim
};

GaussianFamily make_gaussian_family(int ambient_dim, double class_mean_radius, double noise_std,
                                    int class_pool_size, uint64_t family_seed);

Episode sample_episode(const GaussianFamily& family, int n_way, int k_shot, int n_query, Rng& rng);

// The two-task, four-point construction showing that a shared representation
// picked to fit the data can have arbitrarily worse conditioning than the
// generating one. phi_star reads ambient coordinates (0, 1) and pairs with
// w_star = [[1, e], [1, -e]] (condition number 1/e); phi_hat reads
// coordinates (1, 2) and pairs with w_hat = [[0, 1], [1, -e]] whose
// condition number tends to 1 as e -> 0. The verbatim first-task second
// point does not satisfy the w_star factorization (residual 2 + 2*k_val*e,
// recorded below); `corrected` substitutes first coordinate -1 - k_val*e,
// which makes both factorizations exact.
struct Prop3Construction {
  double epsilon = 0.02;
  int ambient_dim = 3;
  double k_val = 2.0;
  bool corrected = false;
  Matrix phi_star;  // ambient_dim x 2, selects coordinates (0, 1)
  Matrix w_star;    // 2 x 2, rows are the two task predictors
  Matrix phi_hat;   // ambient_dim x 2, selects coordinates (1, 2)
  Matrix w_hat;     // 2 x 2
  Matrix task1_x;   // 2 x ambient_dim
  VecD task1_y;     // +1, -1
  Matrix task2_x;   // 2 x ambient_dim
  VecD task2_y;     // +1, -1
  // <w_star_row, phi_star^T x> - y per point, tasks stacked (4 entries).
  VecD star_residuals;
};

Prop3Construction build_prop3(double epsilon, int ambient_dim, double k_val = 2.0,
                              bool corrected = false);

// Labeled feature pool loaded from CSV (`label,f1,...,fd`). Labels may be
// arbitrary tokens; they are mapped to indices in first-appearance order.
struct DatasetPool {
  Matrix features;              // n x d
  std::vector<int> labels;      // n, 0-based class index
  std::vector<std::string> label_names;
  std::vector<std::vector<int>> by_class;  // row indices per class

  int num_classes() const { return static_cast<int>(label_names.size()); }
};

DatasetPool load_dataset(const std::string& path);
DatasetPool dataset_from_csv(const std::string& text);
std::string dataset_to_csv(const Matrix& features, const std::vector<int>& labels);

// Samples support/query rows without replacement inside each chosen class;
// support and query index sets are disjoint by construction. Every class in
// the pool must hold at least k_shot + n_query rows.
Episode sample_episode_from_pool(const DatasetPool& pool, int n_way, int k_shot, int n_query,
                                 Rng& rng);

}  // namespace smeta
