#include "smeta/diagnostics.hpp"

#include <cerrno>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace smeta {

namespace {

constexpr char kTraceHeader[] = "step,kappa_wn,frob_wn,accuracy,loss";

void fnv_mix(uint64_t& h, uint64_t word) {
  for (int byte = 0; byte < 8; ++byte) {
    h ^= (word >> (8 * byte)) & 0xffu;
    h *= 0x100000001b3ull;
  }
}

void fnv_mix_double(uint64_t& h, double v) {
  uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  fnv_mix(h, bits);
}

void fnv_mix_matrix(uint64_t& h, const Matrix& m) {
  fnv_mix(h, static_cast<uint64_t>(m.rows));
  fnv_mix(h, static_cast<uint64_t>(m.cols));
  for (double v : m.a) fnv_mix_double(h, v);
}

double parse_double_field(const std::string& field) {
  char* end = nullptr;
  double v = std::strtod(field.c_str(), &end);
  if (end == field.c_str() || *end != '\0') {
    throw std::runtime_error("trace csv: bad numeric field '" + field + "'");
  }
  return v;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

int clamp_sample_count(const EpisodeArchive& archive, int sample_count) {
  if (archive.entries.empty()) {
    throw std::invalid_argument("archive is empty");
  }
  if (sample_count <= 0) {
    throw std::invalid_argument("sample_count must be positive");
  }
  const int n = static_cast<int>(archive.entries.size());
  return sample_count < n ? sample_count : n;
}

GlobalKappa finish_kappa(const Matrix& stacked, int episodes_used) {
  GlobalKappa out = kappa_via_gram(stacked);
  out.episodes_used = episodes_used;
  return out;
}

}  // namespace

const TraceRecord& Trace::track(int step, const Matrix& wn, const TraceExtras& extras) {
  if (wn.rows == 0 || wn.cols == 0) {
    throw std::invalid_argument("track: predictor matrix is empty");
  }
  TraceRecord rec;
  rec.step = step;
  CondNumber cn = condition_number(wn);
  rec.kappa_wn = cn.value;
  rec.degenerate = cn.degenerate;
  rec.frob_wn = extras.unit_rows ? std::sqrt(static_cast<double>(wn.rows)) : frobenius_norm(wn);
  rec.accuracy = extras.accuracy;
  rec.loss = extras.loss;
  records_.push_back(rec);
  return records_.back();
}

std::string trace_to_csv(const std::vector<TraceRecord>& records) {
  std::string out(kTraceHeader);
  out.push_back('\n');
  char buf[256];
  for (const TraceRecord& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.step, r.kappa_wn, r.frob_wn,
                  r.accuracy, r.loss);
    out += buf;
  }
  return out;
}

std::vector<TraceRecord> trace_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("trace csv: empty input");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceHeader) {
    throw std::runtime_error("trace csv: unexpected header '" + line + "'");
  }
  std::vector<TraceRecord> out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = split_fields(line);
    if (fields.size() != 5) {
      throw std::runtime_error("trace csv: expected 5 fields, got line '" + line + "'");
    }
    TraceRecord r;
    double step = parse_double_field(fields[0]);
    if (step < -2147483648.0 || step > 2147483647.0) {
      throw std::runtime_error("trace csv: step out of range '" + fields[0] + "'");
    }
    r.step = static_cast<int>(step);
    if (static_cast<double>(r.step) != step) {
      throw std::runtime_error("trace csv: non-integer step '" + fields[0] + "'");
    }
    r.kappa_wn = parse_double_field(fields[1]);
    r.frob_wn = parse_double_field(fields[2]);
    r.accuracy = parse_double_field(fields[3]);
    r.loss = parse_double_field(fields[4]);
    out.push_back(r);
  }
  return out;
}

void export_csv(const Trace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path);
  }
  out << trace_to_csv(trace.records());
  out.flush();
  if (!out) {
    throw std::runtime_error("write failed: " + path);
  }
}

std::vector<TraceRecord> load_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open: " + path);
  }
  std::ostringstream text;
  text << in.rdbuf();
  return trace_from_csv(text.str());
}

EpisodeArchive make_archive(int ambient_dim, double class_mean_radius, double noise_std,
                            int class_pool_size, uint64_t family_seed) {
  if (ambient_dim <= 0 || class_pool_size <= 0) {
    throw std::invalid_argument("make_archive: bad family shape");
  }
  EpisodeArchive a;
  a.ambient_dim = ambient_dim;
  a.class_mean_radius = class_mean_radius;
  a.noise_std = noise_std;
  a.class_pool_size = class_pool_size;
  a.family_seed = family_seed;
  return a;
}

uint64_t episode_fingerprint(const Episode& ep) {
  uint64_t h = 0xcbf29ce484222325ull;
  fnv_mix(h, static_cast<uint64_t>(ep.n_way));
  fnv_mix(h, static_cast<uint64_t>(ep.k_shot));
  fnv_mix(h, static_cast<uint64_t>(ep.n_query));
  fnv_mix_matrix(h, ep.support_x);
  for (int y : ep.support_y) fnv_mix(h, static_cast<uint64_t>(y));
  fnv_mix_matrix(h, ep.query_x);
  for (int y : ep.query_y) fnv_mix(h, static_cast<uint64_t>(y));
  return h;
}

void archive_record(EpisodeArchive& archive, uint64_t seed, const Episode& ep) {
  ArchivedEpisode e;
  e.seed = seed;
  e.n_way = ep.n_way;
  e.k_shot = ep.k_shot;
  e.n_query = ep.n_query;
  e.fingerprint = episode_fingerprint(ep);
  archive.entries.push_back(e);
}

GaussianFamily archive_family(const EpisodeArchive& archive) {
  return make_gaussian_family(archive.ambient_dim, archive.class_mean_radius, archive.noise_std,
                              archive.class_pool_size, archive.family_seed);
}

Episode archive_replay(const EpisodeArchive& archive, const GaussianFamily& family,
                       std::size_t index) {
  if (index >= archive.entries.size()) {
    throw std::invalid_argument("archive_replay: index out of range");
  }
  const ArchivedEpisode& e = archive.entries[index];
  Rng rng(e.seed);
  Episode ep = sample_episode(family, e.n_way, e.k_shot, e.n_query, rng);
  if (episode_fingerprint(ep) != e.fingerprint) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "archive replay mismatch at entry %zu (seed %" PRIu64 ")",
                  index, e.seed);
    throw std::runtime_error(buf);
  }
  return ep;
}

Episode archive_replay(const EpisodeArchive& archive, std::size_t index) {
  GaussianFamily family = archive_family(archive);
  return archive_replay(archive, family, index);
}

namespace {

constexpr const char* kArchiveFamilyHeader =
    "ambient_dim,class_mean_radius,noise_std,class_pool_size,family_seed";
constexpr const char* kArchiveEntryHeader = "seed,n_way,k_shot,n_query,fingerprint";

uint64_t parse_u64_field(const std::string& field) {
  if (field.empty() || field[0] == '-' || field[0] == '+') {
    throw std::runtime_error("archive csv: bad unsigned field '" + field + "'");
  }
  char* end = nullptr;
  errno = 0;
  const uint64_t v = std::strtoull(field.c_str(), &end, 10);
  if (end == field.c_str() || *end != '\0' || errno == ERANGE) {
    throw std::runtime_error("archive csv: bad unsigned field '" + field + "'");
  }
  return v;
}

int parse_int_field(const std::string& field) {
  const double v = parse_double_field(field);
  if (v < -2147483648.0 || v > 2147483647.0 || static_cast<double>(static_cast<int>(v)) != v) {
    throw std::runtime_error("archive csv: bad integer field '" + field + "'");
  }
  return static_cast<int>(v);
}

}  // namespace

std::string archive_to_csv(const EpisodeArchive& archive) {
  std::string out(kArchiveFamilyHeader);
  out.push_back('\n');
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%d,%" PRIu64 "\n", archive.ambient_dim,
                archive.class_mean_radius, archive.noise_std, archive.class_pool_size,
                archive.family_seed);
  out += buf;
  out += kArchiveEntryHeader;
  out.push_back('\n');
  for (const ArchivedEpisode& e : archive.entries) {
    std::snprintf(buf, sizeof buf, "%" PRIu64 ",%d,%d,%d,%" PRIu64 "\n", e.seed, e.n_way, e.k_shot,
                  e.n_query, e.fingerprint);
    out += buf;
  }
  return out;
}

EpisodeArchive archive_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kArchiveFamilyHeader) {
    throw std::runtime_error("archive csv: missing family header");
  }
  if (!std::getline(in, line)) {
    throw std::runtime_error("archive csv: missing family descriptor");
  }
  std::vector<std::string> fields = split_fields(line);
  if (fields.size() != 5) {
    throw std::runtime_error("archive csv: family descriptor needs 5 fields");
  }
  EpisodeArchive archive;
  archive.ambient_dim = parse_int_field(fields[0]);
  archive.class_mean_radius = parse_double_field(fields[1]);
  archive.noise_std = parse_double_field(fields[2]);
  archive.class_pool_size = parse_int_field(fields[3]);
  archive.family_seed = parse_u64_field(fields[4]);
  if (archive.ambient_dim < 1 || archive.class_pool_size < 1 ||
      !(archive.class_mean_radius > 0.0) || archive.noise_std < 0.0) {
    throw std::runtime_error("archive csv: family descriptor out of range");
  }
  if (!std::getline(in, line) || line != kArchiveEntryHeader) {
    throw std::runtime_error("archive csv: missing entry header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    fields = split_fields(line);
    if (fields.size() != 5) {
      throw std::runtime_error("archive csv: entry rows need 5 fields");
    }
    ArchivedEpisode e;
    e.seed = parse_u64_field(fields[0]);
    e.n_way = parse_int_field(fields[1]);
    e.k_shot = parse_int_field(fields[2]);
    e.n_query = parse_int_field(fields[3]);
    e.fingerprint = parse_u64_field(fields[4]);
    if (e.n_way < 1 || e.k_shot < 1 || e.n_query < 0) {
      throw std::runtime_error("archive csv: entry shape out of range");
    }
    archive.entries.push_back(e);
  }
  return archive;
}

Matrix stack_protonet_predictors(const EncoderParams& enc, bool normalize,
                                 const EpisodeArchive& archive, int sample_count) {
  const int use = clamp_sample_count(archive, sample_count);
  const std::size_t first = archive.entries.size() - static_cast<std::size_t>(use);
  GaussianFamily family = archive_family(archive);
  Matrix stacked;
  int next_row = 0;
  for (int i = 0; i < use; ++i) {
    Episode ep = archive_replay(archive, family, first + static_cast<std::size_t>(i));
    PrototypeSet protos = compute_prototypes(ep, enc);
    if (normalize) protos = normalize_rows(protos);
    if (stacked.rows == 0) {
      stacked = Matrix(use * protos.prototypes.rows, protos.prototypes.cols);
    }
    for (int r = 0; r < protos.prototypes.rows; ++r, ++next_row) {
      for (int c = 0; c < protos.prototypes.cols; ++c) {
        stacked(next_row, c) = protos.prototypes(r, c);
      }
    }
  }
  return stacked;
}

Matrix stack_maml_predictors(const ModelParams& model, int inner_steps, double alpha,
                             const EpisodeArchive& archive, int sample_count) {
  const int use = clamp_sample_count(archive, sample_count);
  const std::size_t first = archive.entries.size() - static_cast<std::size_t>(use);
  GaussianFamily family = archive_family(archive);
  Matrix stacked;
  int next_row = 0;
  for (int i = 0; i < use; ++i) {
    Episode ep = archive_replay(archive, family, first + static_cast<std::size_t>(i));
    ModelParams adapted = inner_adapt(model, ep, inner_steps, alpha);
    if (stacked.rows == 0) {
      stacked = Matrix(use * adapted.head_w.rows, adapted.head_w.cols);
    }
    for (int r = 0; r < adapted.head_w.rows; ++r, ++next_row) {
      for (int c = 0; c < adapted.head_w.cols; ++c) {
        stacked(next_row, c) = adapted.head_w(r, c);
      }
    }
  }
  return stacked;
}

GlobalKappa kappa_via_gram(const Matrix& stacked) {
  if (stacked.rows == 0 || stacked.cols == 0) {
    throw std::invalid_argument("kappa_via_gram: empty matrix");
  }
  // The Gram matrix is built on the smaller side; its singular values are the
  // squared singular values of the stack.
  Matrix gram = stacked.cols <= stacked.rows
                    ? matmul(transpose(stacked), stacked)
                    : matmul(stacked, transpose(stacked));
  SvdResult gs = svd(gram);
  SvdResult s;
  s.sigma.resize(gs.sigma.size());
  for (std::size_t i = 0; i < gs.sigma.size(); ++i) {
    s.sigma[i] = std::sqrt(gs.sigma[i] > 0.0 ? gs.sigma[i] : 0.0);
  }
  CondNumber cn = condition_number(s);
  GlobalKappa out;
  out.kappa = cn.value;
  out.degenerate = cn.degenerate;
  return out;
}

GlobalKappa global_kappa_protonet(const EncoderParams& enc, bool normalize,
                                  const EpisodeArchive& archive, int sample_count) {
  const int use = clamp_sample_count(archive, sample_count);
  return finish_kappa(stack_protonet_predictors(enc, normalize, archive, sample_count), use);
}

GlobalKappa global_kappa_maml(const ModelParams& model, int inner_steps, double alpha,
                              const EpisodeArchive& archive, int sample_count) {
  const int use = clamp_sample_count(archive, sample_count);
  return finish_kappa(stack_maml_predictors(model, inner_steps, alpha, archive, sample_count), use);
}

}  // namespace smeta
