#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kgmd/graph_data.hpp"
#include "kgmd/model.hpp"
#include "kgmd/training.hpp"

namespace kgmd {

struct EvalConfig {
  std::vector<std::size_t> ks{100};
  bool zero_shot = false;

  void validate() const;
};

enum class FilterMode { none, train, train_and_eval };

/// Scores users against every item of a domain, using the model responsible for
/// that domain. Item encodings are computed once up front.
class Scorer {
 public:
  /// Throws DataError when a model's vocabulary digest differs from the bundle's
  /// or when some domain has no model.
  Scorer(std::span<const TrainedModel> models, const DatasetBundle& bundle);

  const TrainedModel& model_for(Index domain) const;
  Vec user_embedding(Index user, Index domain) const;
  /// Scores aligned with bundle.train.domain_items(domain).
  std::vector<double> scores(Index user, Index domain) const;

 private:
  const DatasetBundle& bundle_;
  std::vector<const TrainedModel*> by_domain_;
  std::vector<std::vector<Vec>> items_;  // per domain, aligned with domain_items
};

/// Items removed from the candidate set for (user, domain). Sorted.
std::vector<Index> filtered_items(const DatasetBundle& bundle, Index user, Index domain, FilterMode mode);

/// 1 + #candidates scoring above the target + #other candidates tied with it.
/// Candidates are V_d minus the user's train positives and other eval positives.
std::size_t filtered_rank(const Scorer& scorer, const DatasetBundle& bundle, Index user, Index target,
                          Index domain);

/// Top-k (item, score) over the filtered candidates; ties by ascending item.
std::vector<std::pair<Index, double>> rank_topk(const Scorer& scorer, const DatasetBundle& bundle, Index user,
                                                Index domain, std::size_t k, FilterMode mode);

double mrr(std::span<const std::size_t> ranks);
double hits_at_k(std::span<const std::size_t> ranks, std::size_t k);

struct SliceMetrics {
  std::size_t count = 0;
  double mrr = 0.0;
  std::vector<double> hits;  // aligned with EvalConfig::ks

  bool empty() const { return count == 0; }
};

struct SliceReport {
  std::vector<SliceMetrics> domains;
  /// Pooled over all interactions. Absent for single-domain variants.
  std::optional<SliceMetrics> all;
  /// Unweighted mean of the non-empty domain rows; supplementary.
  std::optional<SliceMetrics> all_macro;
};

struct RankedInteraction {
  Index user = 0;
  Index item = 0;
  Index domain = 0;
  std::size_t rank = 0;
  std::size_t candidates = 0;
  bool zero_shot = false;
};

struct EvalReport {
  std::string variant;
  std::vector<std::string> domain_names;
  std::vector<std::size_t> ks;
  SliceReport general;
  std::optional<SliceReport> zero_shot;
  std::string vocab_digest;
  std::string model_digest;
  std::vector<RankedInteraction> details;
};

EvalReport evaluate(const DatasetBundle& bundle, std::span<const TrainedModel> models,
                    const EvalConfig& config = {});

nlohmann::json report_json(const EvalReport& report);
/// `slice<TAB>domain<TAB>metric<TAB>value<TAB>count`; empty slices get a single
/// `empty` row.
std::string report_tsv(const EvalReport& report);

}  // namespace kgmd
