#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "smeta/encoder.hpp"
#include "smeta/linalg.hpp"
#include "smeta/maml.hpp"
#include "smeta/protonet.hpp"
#include "smeta/tasks.hpp"

namespace smeta {

// One measurement row: conditioning and scale of the step's predictor matrix
// next to the training signal at that step. Records are raw observations --
// nothing here assumes or enforces a trend.
struct TraceRecord {
  int step = 0;
  double kappa_wn = 1.0;
  double frob_wn = 0.0;
  double accuracy = 0.0;
  double loss = 0.0;
  bool degenerate = false;  // predictor matrix numerically rank-deficient
};

struct TraceExtras {
  double accuracy = 0.0;
  double loss = 0.0;
  // Set when every row of the tracked matrix is unit-normalized by
  // construction (normalized prototypes). The Frobenius norm is then
  // recorded as sqrt(rows) -- the exact value the construction guarantees --
  // instead of re-accumulating rounding noise row by row.
  bool unit_rows = false;
};

// Append-only per-step measurement log. Single writer.
class Trace {
 public:
  const TraceRecord& track(int step, const Matrix& wn, const TraceExtras& extras = {});
  const std::vector<TraceRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }
  std::size_t size() const { return records_.size(); }

 private:
  std::vector<TraceRecord> records_;
};

// CSV schema: header `step,kappa_wn,frob_wn,accuracy,loss`, doubles with 17
// significant digits so parsing the file back reproduces them exactly.
std::string trace_to_csv(const std::vector<TraceRecord>& records);
std::vector<TraceRecord> trace_from_csv(const std::string& text);
void export_csv(const Trace& trace, const std::string& path);
std::vector<TraceRecord> load_trace(const std::string& path);

// Seed-level record of one training episode: enough to redraw it bitwise,
// plus a fingerprint of the drawn tensors so replay can prove it did.
struct ArchivedEpisode {
  uint64_t seed = 0;
  int n_way = 0;
  int k_shot = 0;
  int n_query = 0;
  uint64_t fingerprint = 0;
};

// Append store of episode seeds (never raw tensors) together with the
// generator descriptor needed to rebuild the task family exactly.
struct EpisodeArchive {
  int ambient_dim = 0;
  double class_mean_radius = 0.0;
  double noise_std = 0.0;
  int class_pool_size = 0;
  uint64_t family_seed = 0;
  std::vector<ArchivedEpisode> entries;

  std::size_t size() const { return entries.size(); }
};

EpisodeArchive make_archive(int ambient_dim, double class_mean_radius, double noise_std,
                            int class_pool_size, uint64_t family_seed);

// Order-sensitive hash of every tensor and label in the episode.
uint64_t episode_fingerprint(const Episode& ep);

// Records an episode the caller just drew from Rng(seed) on the archive's
// family. Stores seed, shape, and fingerprint only.
void archive_record(EpisodeArchive& archive, uint64_t seed, const Episode& ep);

// Rebuilds the generator the archive describes.
GaussianFamily archive_family(const EpisodeArchive& archive);

// Redraws entry `index` from its stored seed and verifies the fingerprint;
// a mismatch (tampered entry, wrong family) raises std::runtime_error. The
// two-argument overload rebuilds the family itself; pass a prebuilt one when
// replaying many entries.
Episode archive_replay(const EpisodeArchive& archive, const GaussianFamily& family,
                       std::size_t index);
Episode archive_replay(const EpisodeArchive& archive, std::size_t index);

// Archive file schema: two header/value sections --
//   ambient_dim,class_mean_radius,noise_std,class_pool_size,family_seed
//   <values>
//   seed,n_way,k_shot,n_query,fingerprint
//   <one row per episode>
// Reals use 17 significant digits; seeds and fingerprints are decimal u64.
std::string archive_to_csv(const EpisodeArchive& archive);
EpisodeArchive archive_from_csv(const std::string& text);

// Frozen-model conditioning over the archive: replays the most recent
// `sample_count` episodes (all when sample_count >= archive size),
// recomputes each episode's linear predictors with the frozen parameters,
// stacks the predictor rows, and reports the stack's condition number.
struct GlobalKappa {
  double kappa = 1.0;
  bool degenerate = false;
  int episodes_used = 0;
};

// Stacked predictor rows, in archive order (fixed-order stacking).
// Protonet route: the episode prototypes of the frozen encoder, optionally
// row-normalized exactly as scoring would. Adapted-head route: the head
// weight rows after `inner_steps` adaptation steps on the episode support.
Matrix stack_protonet_predictors(const EncoderParams& enc, bool normalize,
                                 const EpisodeArchive& archive, int sample_count);
Matrix stack_maml_predictors(const ModelParams& model, int inner_steps, double alpha,
                             const EpisodeArchive& archive, int sample_count);

// Condition number of a tall stack through its small Gram matrix:
// sigma_i(W) = sqrt(sigma_i(W^T W)), so the SVD runs on a cols x cols
// matrix instead of the full stack.
GlobalKappa kappa_via_gram(const Matrix& stacked);

GlobalKappa global_kappa_protonet(const EncoderParams& enc, bool normalize,
                                  const EpisodeArchive& archive, int sample_count = 500);
GlobalKappa global_kappa_maml(const ModelParams& model, int inner_steps, double alpha,
                              const EpisodeArchive& archive, int sample_count = 500);

}  // namespace smeta
