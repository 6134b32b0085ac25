#include "poleimg/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"

#include "binary_io.hpp"
#include "poleimg/errors.hpp"

namespace poleimg {

namespace {

constexpr std::size_t kEmbedChunk = 32;

// Columns of a binary grid packed into 64-bit words.
struct PackedColumns {
  int rows = 0;
  int cols = 0;
  int words = 0;
  std::vector<std::uint64_t> bits;  // cols x words
  int ones = 0;

  explicit PackedColumns(const BinaryGrid& g)
      : rows(static_cast<int>(g.rows())), cols(static_cast<int>(g.cols())), words((rows + 63) / 64) {
    bits.assign(static_cast<std::size_t>(cols) * words, 0);
    for (int c = 0; c < cols; ++c) {
      for (int r = 0; r < rows; ++r) {
        if (g(r, c)) {
          bits[static_cast<std::size_t>(c) * words + r / 64] |= std::uint64_t{1} << (r % 64);
          ++ones;
        }
      }
    }
  }
};

double packed_distance(const PackedColumns& a, const PackedColumns& b) {
  // Hamming(A, shift(B, s)) = |A| + |B| - 2 overlap(s); maximize the overlap.
  int best_overlap = 0;
  const int cols = a.cols, words = a.words;
  for (int s = 0; s < cols; ++s) {
    int overlap = 0;
    for (int c = 0; c < cols; ++c) {
      int src = c - s;
      if (src < 0) src += cols;
      const std::uint64_t* pa = &a.bits[static_cast<std::size_t>(c) * words];
      const std::uint64_t* pb = &b.bits[static_cast<std::size_t>(src) * words];
      for (int w = 0; w < words; ++w) overlap += std::popcount(pa[w] & pb[w]);
    }
    best_overlap = std::max(best_overlap, overlap);
  }
  const int hamming = a.ones + b.ones - 2 * best_overlap;
  return static_cast<double>(hamming) / (static_cast<double>(a.rows) * a.cols);
}

std::vector<EntryLabel> labels_of(const ObservationSet& obs) {
  std::vector<EntryLabel> labels;
  labels.reserve(obs.size());
  for (const auto& o : obs) labels.push_back({o.pole_id, o.session_id});
  return labels;
}

}  // namespace

void validate_db(const DescriptorDB& db) {
  if (db.values.rows() != db.dim || db.values.cols() != static_cast<Eigen::Index>(db.labels.size())) {
    throw ContractError("descriptor database shape does not match its labels");
  }
  std::set<std::pair<std::int64_t, std::uint32_t>> seen;
  for (const auto& l : db.labels) {
    if (!seen.emplace(l.pole_id, l.session_id).second) {
      throw ContractError("duplicate descriptor for pole " + std::to_string(l.pole_id) +
                          " in session " + std::to_string(l.session_id));
    }
  }
}

Matrix<double> embed_descriptors(const ParameterSet<double>& params, const EncoderShape& shape,
                                 const ObservationSet& obs) {
  Matrix<double> out(shape.emb_dim, static_cast<Eigen::Index>(obs.size()));
  std::vector<ImageMatrix<double>> chunk;
  for (std::size_t start = 0; start < obs.size(); start += kEmbedChunk) {
    const std::size_t end = std::min(obs.size(), start + kEmbedChunk);
    chunk.clear();
    for (std::size_t i = start; i < end; ++i) chunk.push_back(to_matrix(obs[i].image.grid));
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        encoder_forward<double>(params, shape, chunk);
  }
  return out;
}

DescriptorDB embed_all(const Checkpoint& checkpoint, const ObservationSet& obs) {
  require_unique_observations(obs);
  DescriptorDB db;
  db.dim = checkpoint.shape.emb_dim;
  db.labels = labels_of(obs);
  db.values = embed_descriptors(checkpoint.params, checkpoint.shape, obs).cast<float>();
  return db;
}

std::vector<std::size_t> rank(const Eigen::VectorXf& query, const DescriptorDB& db) {
  if (query.size() != db.dim) throw ShapeError("query dimension does not match database");
  std::vector<double> dist(db.size());
  for (std::size_t i = 0; i < db.size(); ++i) {
    dist[i] = (query.cast<double>() - db.values.col(static_cast<Eigen::Index>(i)).cast<double>())
                  .squaredNorm();
  }
  std::vector<std::size_t> order(db.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

EvalReport evaluate_ranking(const std::vector<EntryLabel>& queries, const std::vector<EntryLabel>& db,
                            const DistanceFn& distance) {
  EvalReport report;
  for (int k : kRecallKs) report.recall_at[k] = 0.0;
  if (queries.empty()) return report;

  std::vector<std::size_t> eligible;
  std::vector<double> dist(db.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const EntryLabel& query = queries[q];
    eligible.clear();
    bool has_match = false;
    for (std::size_t d = 0; d < db.size(); ++d) {
      if (db[d].session_id == query.session_id) continue;
      eligible.push_back(d);
      dist[d] = distance(q, d);
      has_match = has_match || db[d].pole_id == query.pole_id;
    }
    if (!has_match) {
      throw ProtocolError("query pole " + std::to_string(query.pole_id) + " (session " +
                          std::to_string(query.session_id) +
                          ") has no database entry from another session");
    }
    std::stable_sort(eligible.begin(), eligible.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    std::size_t r = 0;
    while (db[eligible[r]].pole_id != query.pole_id) ++r;
    report.per_query_rank.push_back({query.pole_id, r + 1});
  }

  const double n = static_cast<double>(queries.size());
  double reciprocal = 0.0;
  for (const auto& qr : report.per_query_rank) {
    reciprocal += 1.0 / static_cast<double>(qr.rank);
    for (int k : kRecallKs) {
      if (qr.rank <= static_cast<std::size_t>(k)) report.recall_at[k] += 1.0;
    }
  }
  for (auto& [k, v] : report.recall_at) v /= n;
  report.mrr = reciprocal / n;
  return report;
}

EvalReport evaluate(const DescriptorDB& queries, const DescriptorDB& db) {
  if (queries.dim != db.dim) {
    throw ShapeError("query descriptors have dim " + std::to_string(queries.dim) +
                     ", database has dim " + std::to_string(db.dim));
  }
  const Eigen::MatrixXd q = queries.values.cast<double>();
  const Eigen::MatrixXd d = db.values.cast<double>();
  return evaluate_ranking(queries.labels, db.labels, [&](std::size_t i, std::size_t j) {
    return (q.col(static_cast<Eigen::Index>(i)) - d.col(static_cast<Eigen::Index>(j))).squaredNorm();
  });
}

double iris_baseline_distance(const BinaryGrid& a, const BinaryGrid& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("baseline distance needs images of identical dimensions");
  }
  if (a.size() == 0) return 0.0;
  return packed_distance(PackedColumns(a), PackedColumns(b));
}

EvalReport evaluate_baseline(const ObservationSet& queries, const ObservationSet& db) {
  std::vector<PackedColumns> packed_q, packed_d;
  for (const auto& o : queries) packed_q.emplace_back(o.image.grid);
  for (const auto& o : db) packed_d.emplace_back(o.image.grid);
  for (const auto& p : packed_d) {
    if (!packed_q.empty() && (p.rows != packed_q[0].rows || p.cols != packed_q[0].cols)) {
      throw std::invalid_argument("baseline evaluation needs images of identical dimensions");
    }
  }
  return evaluate_ranking(labels_of(queries), labels_of(db), [&](std::size_t i, std::size_t j) {
    return packed_distance(packed_q[i], packed_d[j]);
  });
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json recall;
  for (const auto& [k, v] : report.recall_at) recall[std::to_string(k)] = v;
  j["recall_at"] = recall;
  j["mrr"] = report.mrr;
  auto ranks = nlohmann::ordered_json::array();
  for (const auto& qr : report.per_query_rank) {
    ranks.push_back({{"pole_id", qr.pole_id}, {"rank", qr.rank}});
  }
  j["per_query_rank"] = ranks;
  return j.dump(2) + "\n";
}

void write_db(const DescriptorDB& db, const std::filesystem::path& path) {
  validate_db(db);
  std::string out("PIDB");
  detail::put_le<std::uint32_t>(out, 1);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(db.dim));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(db.size()));
  for (std::size_t i = 0; i < db.size(); ++i) {
    detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(db.labels[i].pole_id));
    detail::put_le<std::uint32_t>(out, db.labels[i].session_id);
    for (int k = 0; k < db.dim; ++k) {
      detail::put_le<float>(out, db.values(k, static_cast<Eigen::Index>(i)));
    }
  }
  detail::write_file(path.string(), out);
}

DescriptorDB read_db(const std::filesystem::path& path) {
  const std::string data = detail::read_file(path.string());
  detail::ByteReader in(data, path.string());
  if (data.size() < 4 || in.bytes(4, "magic") != "PIDB") {
    throw FormatError(path.string() + ": wrong magic, expected PIDB");
  }
  const auto version = in.get<std::uint32_t>("version");
  if (version != 1) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  DescriptorDB db;
  db.dim = static_cast<int>(in.get<std::uint32_t>("dim"));
  const auto count = in.get<std::uint32_t>("count");
  const std::size_t record = 8 + 4 + 4 * static_cast<std::size_t>(db.dim);
  const std::size_t expected = 16 + record * count;
  if (data.size() != expected) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " bytes for " +
                      std::to_string(count) + " records of dim " + std::to_string(db.dim) +
                      ", file has " + std::to_string(data.size()));
  }
  db.values.resize(db.dim, count);
  db.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    db.labels[i].pole_id = static_cast<std::int64_t>(in.get<std::uint64_t>("pole_id"));
    db.labels[i].session_id = in.get<std::uint32_t>("session_id");
    for (int k = 0; k < db.dim; ++k) db.values(k, i) = in.get<float>("descriptor");
  }
  validate_db(db);
  return db;
}

}  // namespace poleimg
