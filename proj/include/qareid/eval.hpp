#pragma once

#include <string>
#include <vector>

#include "qareid/dataset.hpp"
#include "qareid/model.hpp"

namespace qareid {

// Gallery filtering per query. General discards same-person/same-camera
// entries; CC additionally discards same-person/same-clothes; SC instead
// additionally discards same-person/different-clothes, keeping only
// same-clothes positives.
enum class Protocol { kGeneral, kSc, kCc };

Protocol protocol_from_name(const std::string& name);
const char* protocol_name(Protocol p);

// True when the gallery entry must be ignored for this query.
bool pair_discarded(Protocol proto, const SampleRecord& q, const SampleRecord& g);

struct EvalResult {
  double top1 = 0.0;  // percent
  double mAP = 0.0;   // percent
  std::vector<double> per_query_ap;
  int num_queries = 0;       // queries that entered the averages
  int excluded_queries = 0;  // no valid gallery entry or no valid positive left
};

// Ranks each query's retained gallery by descending score (ties broken by
// gallery index) and averages CMC Top-1 and AP over the valid queries.
EvalResult evaluate_scores(const Tensor& scores, const std::vector<SampleRecord>& query,
                           const std::vector<SampleRecord>& gallery, Protocol proto);

// Extracts retrieval features in chunks through the model's eval path.
QAReidModel::RetrievalFeatures extract_all(QAReidModel& model,
                                           const std::vector<SampleRecord>& samples);

// Full retrieval pass: features, pairwise scores, protocol-filtered ranking.
// scores_out, when given, receives the (Nq,Ng) score matrix.
EvalResult evaluate_model(QAReidModel& model, const std::vector<SampleRecord>& query,
                          const std::vector<SampleRecord>& gallery, Protocol proto,
                          Tensor* scores_out = nullptr);

// Nearest-neighbor upsampling of a (h,w) grid, used for saliency export.
Tensor upsample_nearest(const Tensor& grid, int out_h, int out_w);

}  // namespace qareid
