#include "kgmd/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

namespace kgmd {

namespace {

constexpr std::size_t kUsers = 5;
constexpr std::size_t kItemsPerDomain = 10;
constexpr std::size_t kDomains = 3;
constexpr std::size_t kEntities = 12;
constexpr std::size_t kRelations = 3;
constexpr double kMargin = 5.0;

struct Objective {
  std::vector<RecExample> rec;
  std::vector<KgExample> kg;
  std::vector<std::optional<Index>> entity_items;
};

Objective make_objective(const DatasetBundle& data, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  Objective obj;
  for (const auto& e : data.train.edges()) {
    const Index d = data.train.item_domain(e.item);
    std::vector<Index> negatives;
    for (Index v : data.train.domain_items(d)) {
      if (!data.train.has_edge(e.user, v) && negatives.size() < 2) negatives.push_back(v);
    }
    obj.rec.push_back({e.user, d, e.item, negatives});
  }
  // The isolated user exercises the empty-neighborhood path.
  const Index lonely = static_cast<Index>(kUsers - 1);
  for (Index d = 0; d < kDomains; ++d) {
    const auto items = data.train.domain_items(d);
    obj.rec.push_back({lonely, d, items[0], {items[1], items[2]}});
  }
  std::uniform_int_distribution<Index> ent(0, kEntities - 1);
  for (const auto& t : data.kg.triples) {
    Index neg = ent(rng);
    while (neg == t.tail) neg = ent(rng);
    obj.kg.push_back({t, neg});
  }
  obj.entity_items = items_of_entities(data.links, data.kg.num_entities);
  return obj;
}

double evaluate(const Objective& obj, const ModelConfig& config, const Parameters& params,
                const DatasetBundle& data, GradBuffer* grads, KinkTrace* trace) {
  double loss = rec_objective(obj.rec, kMargin, config, params, data, grads, 1.0, trace);
  if (config.kge) {
    loss += kge_objective(obj.kg, kMargin, config, params, data, obj.entity_items, grads, 1.0, trace);
  }
  return loss;
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(groups.begin(), groups.end(), [](const GroupResult& g) { return g.passed; });
}

DatasetBundle grad_check_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DatasetBundle b;
  const char* names[kDomains] = {"music", "video", "books"};
  for (Index d = 0; d < kDomains; ++d) b.domains.push_back({d, names[d]});
  for (std::size_t u = 0; u < kUsers; ++u) b.vocab.users.intern("u" + std::to_string(u));
  std::vector<Index> catalog;
  for (Index d = 0; d < kDomains; ++d) {
    for (std::size_t i = 0; i < kItemsPerDomain; ++i) {
      b.vocab.items.intern(std::string(names[d]) + "_" + std::to_string(i));
      catalog.push_back(d);
    }
  }
  for (std::size_t e = 0; e < kEntities; ++e) b.vocab.entities.intern("e" + std::to_string(e));
  for (std::size_t r = 0; r < kRelations; ++r) b.vocab.relations.intern("r" + std::to_string(r));

  std::vector<Interaction> train;
  for (Index u = 0; u + 1 < kUsers; ++u) {
    for (Index d = 0; d < kDomains; ++d) {
      std::vector<Index> items(kItemsPerDomain);
      for (std::size_t i = 0; i < kItemsPerDomain; ++i) items[i] = static_cast<Index>(d * kItemsPerDomain + i);
      std::shuffle(items.begin(), items.end(), rng);
      const std::size_t n = 1 + rng() % 3;
      for (std::size_t i = 0; i < n; ++i) train.push_back({u, {items[i], d}, 0});
    }
  }
  b.train = build_graph(train, kUsers, catalog, kDomains);

  std::uniform_int_distribution<Index> ent(0, kEntities - 1), rel(0, kRelations - 1);
  std::set<Triple> triples;
  while (triples.size() < 20) {
    const Triple t{ent(rng), rel(rng), ent(rng)};
    if (t.head != t.tail) triples.insert(t);
  }
  b.kg = {kEntities, kRelations, {triples.begin(), triples.end()}};
  b.links.entity_of_item.assign(catalog.size(), std::nullopt);
  for (std::size_t v = 0; v < catalog.size(); ++v) {
    if (v % 5 != 4) b.links.entity_of_item[v] = static_cast<Index>(ent(rng));
  }
  return b;
}

GradCheckReport grad_check(const ModelConfig& base_config, std::uint64_t seed, const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  ModelConfig config = base_config;
  config.dim = options.dim;
  config.validate();
  const DatasetBundle data = grad_check_instance(seed);
  const Objective obj = make_objective(data, seed);
  Parameters params = Parameters::init(config, ModelShape::of(data), seed + 1);

  GradBuffer grads(params);
  KinkTrace reference;
  evaluate(obj, config, params, data, &grads, &reference);
  if (options.corrupt) options.corrupt(params, grads);

  GradCheckReport report;
  report.variant = config.variant_name();
  KinkTrace plus_trace, minus_trace;
  for (Tensor* t : params.tensors()) {
    GroupResult g{t->name};
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double saved = t->values[i];
      t->values[i] = saved + options.epsilon;
      plus_trace.clear();
      const double plus = evaluate(obj, config, params, data, nullptr, &plus_trace);
      t->values[i] = saved - options.epsilon;
      minus_trace.clear();
      const double minus = evaluate(obj, config, params, data, nullptr, &minus_trace);
      t->values[i] = saved;
      if (plus_trace != reference || minus_trace != reference) {
        ++g.skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2 * options.epsilon);
      const double analytic = grads.at(*t, i / t->cols, i % t->cols);
      const double rel =
          std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
      g.max_rel_error = std::max(g.max_rel_error, rel);
      ++g.checked;
    }
    g.passed = g.max_rel_error <= options.tolerance;
    report.groups.push_back(g);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<std::pair<std::string, ModelConfig>> standard_variants() {
  std::vector<std::pair<std::string, ModelConfig>> out;
  for (const char* name : {"base", "kge", "multd", "multd-kge", "multd-gnn", "multd-kge-gnn"}) {
    out.emplace_back(name, variant_config(name));
  }
  for (const char* name : {"kge", "multd-kge-gnn"}) {
    ModelConfig c = variant_config(name);
    c.block = InteractionBlock::cnc;
    out.emplace_back(std::string(name) + "+cnc", c);
  }
  ModelConfig routed = variant_config("multd-kge");
  routed.kge_uses_block_output = true;
  out.emplace_back("multd-kge+eprime", routed);
  routed.block = InteractionBlock::cnc;
  out.emplace_back("multd-kge+cnc+eprime", routed);
  return out;
}

void inject_gradient_fault(const Parameters& params, GradBuffer& grads) {
  for (const Tensor* t : params.tensors()) {
    auto& slot = grads.slots().at(t->id);
    if (!slot.touched) continue;
    if (slot.sparse) {
      slot.rows.begin()->second[0] += 1e-2;
    } else {
      slot.values[0] += 1e-2;
    }
    return;
  }
}

std::string format_report(const GradCheckReport& r) {
  std::string out = "== " + r.variant + (r.passed() ? " PASS" : " FAIL") + "\n";
  char line[256];
  for (const auto& g : r.groups) {
    std::snprintf(line, sizeof(line), "  %-24s checked %5zu  skipped %4zu  max_rel %.3e  %s\n", g.group.c_str(),
                  g.checked, g.skipped, g.max_rel_error, g.passed ? "ok" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace kgmd
