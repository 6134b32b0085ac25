#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "poleimg/checkpoint.hpp"
#include "poleimg/dataset.hpp"
#include "poleimg/pole_image.hpp"

namespace poleimg {

struct EntryLabel {
  std::int64_t pole_id = 0;
  std::uint32_t session_id = 0;
};

// Descriptors are stored as float columns (dim x count).
struct DescriptorDB {
  int dim = 0;
  std::vector<EntryLabel> labels;
  Eigen::MatrixXf values;

  std::size_t size() const { return labels.size(); }
};

void validate_db(const DescriptorDB& db);

// Descriptors for a batch of observations in input order (double precision).
Matrix<double> embed_descriptors(const ParameterSet<double>& params, const EncoderShape& shape,
                                 const ObservationSet& obs);

DescriptorDB embed_all(const Checkpoint& checkpoint, const ObservationSet& obs);

// Indices of `db` sorted by ascending L2 distance to `query`; ties keep
// ascending index order.
std::vector<std::size_t> rank(const Eigen::VectorXf& query, const DescriptorDB& db);

struct QueryRank {
  std::int64_t pole_id = 0;
  std::size_t rank = 0;  // 1-based rank of the first correct match
};

struct EvalReport {
  std::map<int, double> recall_at;  // k -> fraction, k in {1, 5, 10}
  double mrr = 0.0;
  std::vector<QueryRank> per_query_rank;
};

inline const std::vector<int> kRecallKs{1, 5, 10};

// distance(q, d) between query q and db entry d.
using DistanceFn = std::function<double(std::size_t, std::size_t)>;

// Cross-session evaluation: for every query, db entries from the query's own
// session are skipped, the rest are ordered by (distance, index), and the
// 1-based position of the first entry with the query's pole id is recorded.
EvalReport evaluate_ranking(const std::vector<EntryLabel>& queries, const std::vector<EntryLabel>& db,
                            const DistanceFn& distance);

EvalReport evaluate(const DescriptorDB& queries, const DescriptorDB& db);

// Rotation-searching Hamming matcher on raw occupancy images.
double iris_baseline_distance(const BinaryGrid& a, const BinaryGrid& b);
inline double iris_baseline_distance(const PoleImage& a, const PoleImage& b) {
  return iris_baseline_distance(a.grid, b.grid);
}

EvalReport evaluate_baseline(const ObservationSet& queries, const ObservationSet& db);

std::string eval_report_json(const EvalReport& report);

// "PIDB" u32 version=1 u32 dim u32 count, then count x (u64 pole_id,
// u32 session_id, dim x f32), all little-endian.
void write_db(const DescriptorDB& db, const std::filesystem::path& path);
DescriptorDB read_db(const std::filesystem::path& path);

}  // namespace poleimg
