#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "kgmd/graph_data.hpp"
#include "kgmd/model.hpp"

namespace kgmd {

struct GradCheckOptions {
  double epsilon = 1e-4;
  /// Bound on |analytic - numeric| / max(1, |analytic|, |numeric|).
  double tolerance = 1e-4;
  std::size_t dim = 8;
  /// Test hook applied to the analytic gradient before comparison.
  std::function<void(const Parameters&, GradBuffer&)> corrupt;
};

struct GroupResult {
  std::string group;
  std::size_t checked = 0;
  /// Coordinates whose finite difference straddles a ReLU or hinge kink.
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::string variant;
  std::vector<GroupResult> groups;
  double seconds = 0.0;

  bool passed() const;
};

/// 5 users (the last one has no train edges), 10 items in each of 3 domains,
/// 12 entities, 3 relations; every fifth item is left unlinked.
DatasetBundle grad_check_instance(std::uint64_t seed);

/// Compares analytic gradients of L_rec (+ L_KGE when enabled) against central
/// differences on every scalar of every parameter tensor.
GradCheckReport grad_check(const ModelConfig& config, std::uint64_t seed, const GradCheckOptions& options = {});

/// The six model variants plus the Cross&Compress block and the e'-to-KG route.
std::vector<std::pair<std::string, ModelConfig>> standard_variants();

/// Adds 1e-2 to the first gradient entry of the first touched tensor.
void inject_gradient_fault(const Parameters& params, GradBuffer& grads);

std::string format_report(const GradCheckReport& report);

}  // namespace kgmd
