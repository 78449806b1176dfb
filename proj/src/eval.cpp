#include "qareid/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>

#include "qareid/errors.hpp"

namespace qareid {

Protocol protocol_from_name(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "general") return Protocol::kGeneral;
  if (s == "sc") return Protocol::kSc;
  if (s == "cc") return Protocol::kCc;
  throw ConfigError("unknown protocol '" + name + "' (expected general, sc or cc)");
}

const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::kGeneral: return "general";
    case Protocol::kSc: return "sc";
    default: return "cc";
  }
}

bool pair_discarded(Protocol proto, const SampleRecord& q, const SampleRecord& g) {
  if (q.person_id != g.person_id) return false;
  if (q.camera_id == g.camera_id) return true;
  if (proto == Protocol::kCc && q.clothes_id == g.clothes_id) return true;
  if (proto == Protocol::kSc && q.clothes_id != g.clothes_id) return true;
  return false;
}

EvalResult evaluate_scores(const Tensor& scores, const std::vector<SampleRecord>& query,
                           const std::vector<SampleRecord>& gallery, Protocol proto) {
  const int nq = static_cast<int>(query.size()), ng = static_cast<int>(gallery.size());
  if (scores.ndim() != 2 || scores.dim(0) != nq || scores.dim(1) != ng)
    throw ValidationError("score matrix is " + scores.shape_str() + ", expected (" +
                          std::to_string(nq) + "," + std::to_string(ng) + ")");

  EvalResult res;
  int top1_hits = 0;
  double ap_sum = 0.0;
  for (int i = 0; i < nq; ++i) {
    std::vector<int> kept;
    kept.reserve(ng);
    int positives = 0;
    for (int j = 0; j < ng; ++j) {
      if (pair_discarded(proto, query[i], gallery[j])) continue;
      kept.push_back(j);
      if (gallery[j].person_id == query[i].person_id) ++positives;
    }
    if (kept.empty() || positives == 0) {
      ++res.excluded_queries;
      continue;
    }
    const double* row = scores.data() + static_cast<int64_t>(i) * ng;
    std::sort(kept.begin(), kept.end(), [row](int a, int b) {
      if (row[a] != row[b]) return row[a] > row[b];
      return a < b;
    });

    if (gallery[kept[0]].person_id == query[i].person_id) ++top1_hits;
    int hits = 0;
    double prec_sum = 0.0;
    for (size_t r = 0; r < kept.size(); ++r) {
      if (gallery[kept[r]].person_id == query[i].person_id) {
        ++hits;
        prec_sum += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    const double ap = prec_sum / positives;
    res.per_query_ap.push_back(ap);
    ap_sum += ap;
    ++res.num_queries;
  }
  if (res.num_queries > 0) {
    res.top1 = 100.0 * top1_hits / res.num_queries;
    res.mAP = 100.0 * ap_sum / res.num_queries;
  }
  return res;
}

QAReidModel::RetrievalFeatures extract_all(QAReidModel& model,
                                           const std::vector<SampleRecord>& samples) {
  if (samples.empty()) throw ValidationError("no samples to extract features from");
  const int n = static_cast<int>(samples.size());
  const int chunk = 64;
  QAReidModel::RetrievalFeatures all;
  for (int start = 0; start < n; start += chunk) {
    const int stop = std::min(n, start + chunk);
    std::vector<const SampleRecord*> ptrs;
    ptrs.reserve(stop - start);
    for (int i = start; i < stop; ++i) ptrs.push_back(&samples[i]);
    Batch batch = make_batch(ptrs, model.config().identity_labels);
    QAReidModel::RetrievalFeatures part = model.extract(batch);
    if (start == 0) {
      std::vector<int64_t> fshape = part.fmap.shape();
      fshape[0] = n;
      all.fmap = Tensor::zeros(fshape);
      all.embed = Tensor::zeros({n, part.embed.dim(1)});
      if (!part.quality.empty()) all.quality = Tensor::zeros({n, part.quality.dim(1)});
    }
    const int64_t frow = part.fmap.numel() / (stop - start);
    std::memcpy(all.fmap.data() + start * frow, part.fmap.data(),
                static_cast<size_t>(part.fmap.numel()) * sizeof(double));
    const int64_t erow = part.embed.dim(1);
    std::memcpy(all.embed.data() + start * erow, part.embed.data(),
                static_cast<size_t>(part.embed.numel()) * sizeof(double));
    if (!part.quality.empty()) {
      const int64_t qrow = part.quality.dim(1);
      std::memcpy(all.quality.data() + start * qrow, part.quality.data(),
                  static_cast<size_t>(part.quality.numel()) * sizeof(double));
    }
  }
  return all;
}

EvalResult evaluate_model(QAReidModel& model, const std::vector<SampleRecord>& query,
                          const std::vector<SampleRecord>& gallery, Protocol proto,
                          Tensor* scores_out) {
  QAReidModel::RetrievalFeatures fq = extract_all(model, query);
  QAReidModel::RetrievalFeatures fg = extract_all(model, gallery);
  Tensor scores = model.score(fq, fg);
  EvalResult res = evaluate_scores(scores, query, gallery, proto);
  if (scores_out) *scores_out = std::move(scores);
  return res;
}

Tensor upsample_nearest(const Tensor& grid, int out_h, int out_w) {
  if (grid.ndim() != 2) throw ValidationError("upsample expects a 2-D grid");
  const int64_t h = grid.dim(0), w = grid.dim(1);
  Tensor out({out_h, out_w});
  for (int64_t r = 0; r < out_h; ++r) {
    const int64_t gr = std::min<int64_t>(h - 1, r * h / out_h);
    for (int64_t c = 0; c < out_w; ++c) {
      const int64_t gc = std::min<int64_t>(w - 1, c * w / out_w);
      out.at(r, c) = grid.at(gr, gc);
    }
  }
  return out;
}

}  // namespace qareid
