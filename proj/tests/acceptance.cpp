// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
// Runtimes are measured on this machine and checked against the budgets.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "kgmd/bundle_io.hpp"
#include "kgmd/checkpoint.hpp"
#include "kgmd/eval.hpp"
#include "kgmd/gradcheck.hpp"
#include "kgmd/synthgen.hpp"
#include "kgmd/training.hpp"

using namespace kgmd;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<std::pair<std::string, bool>> g_results;

void report(const std::string& id, const std::string& title, const Outcome& o, double secs) {
  std::printf("[%s] %s %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id.c_str(), title.c_str(), o.detail.c_str(),
              secs);
  std::fflush(stdout);
  g_results.emplace_back(id, o.pass);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

const std::vector<std::string> kSix = {"base", "kge", "multd", "multd-kge", "multd-gnn", "multd-kge-gnn"};

// Monte-Carlo MRR when every interaction's rank is uniform over its candidate count.
double simulated_random_mrr(const std::vector<std::size_t>& candidates, std::uint64_t seed, int reps = 2000) {
  if (candidates.empty()) return 0;
  std::mt19937_64 rng(seed);
  double total = 0;
  for (int r = 0; r < reps; ++r) {
    for (std::size_t m : candidates) {
      total += 1.0 / static_cast<double>(std::uniform_int_distribution<std::size_t>(1, m)(rng));
    }
  }
  return total / (static_cast<double>(reps) * static_cast<double>(candidates.size()));
}

double micro_mrr(const EvalReport& r, bool zero_shot_only = false) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& d : r.details) {
    if (zero_shot_only && !d.zero_shot) continue;
    s += 1.0 / static_cast<double>(d.rank);
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  double worst = 0;
  std::string failures;
  for (const auto& [name, config] : standard_variants()) {
    if (std::find(kSix.begin(), kSix.end(), name) == kSix.end()) continue;
    const auto r = grad_check(config, 1);
    for (const auto& g : r.groups) {
      worst = std::max(worst, g.max_rel_error);
      if (g.max_rel_error > 1e-4 || g.checked == 0) failures += " " + name + "/" + g.group;
    }
  }
  return {failures.empty(), fmt("max relative error %.2e over six variants", worst) + failures};
}

// Full-sort oracle scored through the training-path forward pass.
Outcome criterion2() {
  const auto [bundle, truth] = generate(SynthConfig{});
  TrainConfig t;
  t.epochs = 1;
  t.learning_rate = 0.01;
  const auto models = train(bundle, variant_config("multd-kge-gnn"), t);
  const TrainedModel& m = models[0];
  const Scorer scorer(models, bundle);

  std::map<std::pair<Index, Index>, std::vector<Index>> groups;
  for (const auto& e : bundle.eval_interactions) groups[{e.user, e.item.domain}].push_back(e.item.index);

  std::size_t checked = 0, rank_ok = 0, topk_checked = 0, topk_ok = 0;
  for (const auto& [key, targets] : groups) {
    const auto [user, domain] = key;
    const auto items = bundle.train.domain_items(domain);
    std::vector<std::pair<double, Index>> scored;
    for (Index v : items) scored.emplace_back(forward_score(user, v, domain, m.config, m.params, bundle), v);

    for (Index target : targets) {
      std::vector<std::pair<double, int>> order;  // (score, 1 for target)
      for (const auto& [s, v] : scored) {
        const bool is_target = v == target;
        const bool other_eval = std::find(targets.begin(), targets.end(), v) != targets.end();
        if (!is_target && (bundle.train.has_edge(user, v) || other_eval)) continue;
        order.emplace_back(s, is_target);
      }
      std::sort(order.begin(), order.end(),
                [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
      const auto pos = std::find_if(order.begin(), order.end(), [](const auto& x) { return x.second == 1; });
      const auto expected = static_cast<std::size_t>(pos - order.begin()) + 1;
      ++checked;
      rank_ok += filtered_rank(scorer, bundle, user, target, domain) == expected;
    }

    std::vector<std::pair<double, Index>> kept;
    for (const auto& sv : scored) {
      if (!bundle.train.has_edge(user, sv.second)) kept.push_back(sv);
    }
    std::sort(kept.begin(), kept.end(),
              [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    const auto top = rank_topk(scorer, bundle, user, domain, 100, FilterMode::train);
    bool same = top.size() == std::min<std::size_t>(100, kept.size());
    for (std::size_t i = 0; same && i < top.size(); ++i) same = top[i].first == kept[i].second;
    ++topk_checked;
    topk_ok += same;
  }
  return {checked > 0 && rank_ok == checked && topk_ok == topk_checked,
          fmt("filtered_rank %zu/%zu, rank_topk(100) %zu/%zu (user, domain) lists", rank_ok, checked, topk_ok,
              topk_checked)};
}

// Entities sit at random latent positions; a triple (h, r, t) draws t among the
// three entities closest to x_h + r_k.
struct TransEFixture {
  KnowledgeGraph train;
  std::vector<Triple> held_out;
  std::set<Triple> all;
};

TransEFixture transe_fixture(std::uint64_t seed) {
  const std::size_t E = 100, R = 4, N = 600, dim = 4;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0, 1);
  std::vector<std::vector<double>> x(E, std::vector<double>(dim)), rel(R, std::vector<double>(dim));
  for (auto& p : x) {
    for (double& c : p) c = normal(rng);
  }
  for (auto& r : rel) {
    for (double& c : r) c = normal(rng);
  }
  std::vector<std::vector<std::vector<Index>>> nearest(E, std::vector<std::vector<Index>>(R));
  for (Index h = 0; h < E; ++h) {
    for (Index r = 0; r < R; ++r) {
      std::vector<std::pair<double, Index>> d;
      for (Index t = 0; t < E; ++t) {
        if (t == h) continue;
        double s = 0;
        for (std::size_t k = 0; k < dim; ++k) s += std::pow(x[h][k] + rel[r][k] - x[t][k], 2);
        d.emplace_back(s, t);
      }
      std::partial_sort(d.begin(), d.begin() + 3, d.end());
      for (int i = 0; i < 3; ++i) nearest[h][r].push_back(d[i].second);
    }
  }
  TransEFixture f;
  std::vector<Triple> triples;
  while (triples.size() < N) {
    const auto h = static_cast<Index>(rng() % E), r = static_cast<Index>(rng() % R);
    const Triple t{h, r, nearest[h][r][rng() % 3]};
    if (f.all.insert(t).second) triples.push_back(t);
  }
  std::shuffle(triples.begin(), triples.end(), rng);
  const std::size_t held = N / 10;
  f.held_out.assign(triples.begin(), triples.begin() + held);
  f.train = {E, R, {triples.begin() + held, triples.end()}};
  return f;
}

Outcome criterion3() {
  std::string detail;
  int passed = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const TransEFixture f = transe_fixture(seed);
    TrainConfig t;
    t.epochs = 200;
    t.batch_size = 64;
    t.learning_rate = 0.01;
    t.seed = seed;
    const TrainedModel m = train_transe(f.train, 16, t);

    double rr = 0;
    std::vector<std::size_t> candidates;
    for (const Triple& q : f.held_out) {
      const double d_true = transe_distance(q.head, q.relation, q.tail, m.params);
      std::size_t ahead = 0, m_count = 0;
      for (Index e = 0; e < f.train.num_entities; ++e) {
        if (e != q.tail && f.all.count({q.head, q.relation, e})) continue;
        ++m_count;
        if (e != q.tail && transe_distance(q.head, q.relation, e, m.params) <= d_true) ++ahead;
      }
      rr += 1.0 / static_cast<double>(ahead + 1);
      candidates.push_back(m_count);
    }
    const double mrr_value = rr / static_cast<double>(f.held_out.size());
    const double baseline = simulated_random_mrr(candidates, 100 + seed);
    passed += mrr_value >= 5 * baseline;
    detail += fmt("%sseed %llu MRR %.4f vs 5x%.4f", seed > 1 ? ", " : "", static_cast<unsigned long long>(seed),
                  mrr_value, baseline);
  }
  return {passed == 3, detail};
}

struct SeedMetrics {
  std::map<std::string, double> overall, zero_shot_domain_mean;
  std::vector<std::vector<std::size_t>> base_zs_candidates;  // per domain
  std::vector<double> base_zs_mrr;                           // per domain
};

TrainConfig desk_train_config(std::uint64_t seed) {
  TrainConfig t;
  t.epochs = 20;
  t.learning_rate = 0.01;
  t.seed = seed;
  return t;
}

std::vector<SeedMetrics> run_desk_sweep(const DatasetBundle& bundle) {
  std::vector<SeedMetrics> out;
  const std::vector<std::string> variants = {"base", "kge", "multd", "multd-gnn", "multd-kge-gnn"};
  EvalConfig ec;
  ec.zero_shot = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SeedMetrics s;
    for (const auto& v : variants) {
      const auto models = train(bundle, variant_config(v), desk_train_config(seed));
      const EvalReport r = evaluate(bundle, models, ec);
      s.overall[v] = micro_mrr(r);
      double zs = 0;
      for (const auto& d : r.zero_shot->domains) zs += d.mrr;
      s.zero_shot_domain_mean[v] = zs / static_cast<double>(r.zero_shot->domains.size());
      if (v == "base") {
        s.base_zs_candidates.assign(bundle.domains.size(), {});
        for (const auto& d : r.details) {
          if (d.zero_shot) s.base_zs_candidates[d.domain].push_back(d.candidates);
        }
        for (const auto& d : r.zero_shot->domains) s.base_zs_mrr.push_back(d.mrr);
      }
    }
    std::printf("    seed %llu overall:", static_cast<unsigned long long>(seed));
    for (const auto& v : variants) std::printf(" %s %.4f", v.c_str(), s.overall[v]);
    std::printf(" | zero-shot domain mean: base %.4f kge %.4f\n", s.zero_shot_domain_mean["base"],
                s.zero_shot_domain_mean["kge"]);
    std::fflush(stdout);
    out.push_back(std::move(s));
  }
  return out;
}

Outcome paired(const std::vector<SeedMetrics>& seeds, const std::string& better, const std::string& worse,
               bool zero_shot, bool strict) {
  double diff = 0;
  for (const auto& s : seeds) {
    const auto& table = zero_shot ? s.zero_shot_domain_mean : s.overall;
    diff += table.at(better) - table.at(worse);
  }
  diff /= static_cast<double>(seeds.size());
  return {strict ? diff > 0 : diff >= 0, fmt("mean paired difference %+.5f", diff)};
}

Outcome criterion5(const DatasetBundle& bundle, const std::vector<SeedMetrics>& seeds) {
  bool ok = true;
  std::string detail;
  for (Index d = 0; d < bundle.domains.size(); ++d) {
    double observed = 0;
    std::vector<std::size_t> candidates;
    for (const auto& s : seeds) {
      observed += s.base_zs_mrr[d];
      candidates.insert(candidates.end(), s.base_zs_candidates[d].begin(), s.base_zs_candidates[d].end());
    }
    observed /= static_cast<double>(seeds.size());
    const double baseline = simulated_random_mrr(candidates, 500 + d);
    const double ratio = observed / baseline;
    ok = ok && ratio <= 2.0 && ratio >= 0.5;
    detail += fmt("%s%s %.4f vs random %.4f (x%.2f)", d ? ", " : "", bundle.domains[d].name.c_str(), observed,
                  baseline, ratio);
  }
  return {ok, detail};
}

Outcome criterion6(const DatasetBundle& bundle) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("kgmd_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  bool ok = true;
  double worst = 0;
  for (const char* v : {"base", "multd-kge-gnn"}) {
    TrainConfig t = desk_train_config(3);
    t.epochs = 2;
    const auto a = train(bundle, variant_config(v), t);
    const auto b = train(bundle, variant_config(v), t);
    EvalConfig ec{{10, 100}, true};
    for (std::size_t i = 0; i < a.size(); ++i) ok = ok && serialize_checkpoint(a[i]) == serialize_checkpoint(b[i]);
    const EvalReport ra = evaluate(bundle, a, ec), rb = evaluate(bundle, b, ec);
    ok = ok && report_json(ra).dump() == report_json(rb).dump() && report_tsv(ra) == report_tsv(rb);

    std::vector<TrainedModel> loaded;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const fs::path p = dir / (std::string(v) + std::to_string(i) + ".ckpt");
      save_checkpoint(a[i], p);
      loaded.push_back(load_checkpoint(p, vocab_digest(bundle)));
      ok = ok && serialize_checkpoint(loaded.back()) == serialize_checkpoint(a[i]);
    }
    const EvalReport rl = evaluate(bundle, loaded, ec);
    auto compare = [&](const SliceReport& x, const SliceReport& y) {
      for (std::size_t d = 0; d < x.domains.size(); ++d) {
        worst = std::max(worst, std::abs(x.domains[d].mrr - y.domains[d].mrr));
        for (std::size_t k = 0; k < x.domains[d].hits.size(); ++k) {
          worst = std::max(worst, std::abs(x.domains[d].hits[k] - y.domains[d].hits[k]));
        }
      }
    };
    compare(ra.general, rl.general);
    compare(*ra.zero_shot, *rl.zero_shot);
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  ok = ok && worst <= 1e-12;
  return {ok, fmt("byte-identical reruns %s, max round-trip metric change %.1e", ok ? "yes" : "no", worst)};
}

Outcome criterion7() {
  struct Row {
    double users, items, edges;
    const char* published;
    int decimals;
  };
  const Row rows[] = {{2.8e6, 120e3, 25e6, "99.9926", 4}, {2.8e6, 150e3, 11e6, "99.9974", 4},
                      {67e3, 7e3, 91e3, "99.981", 3}};
  bool ok = true;
  std::string detail;
  for (const Row& r : rows) {
    const std::string got = fmt("%.*f", r.decimals, 100 * sparsity(r.users, r.items, r.edges));
    ok = ok && got == r.published;
    detail += (detail.empty() ? "" : ", ") + got + "%";
  }
  return {ok, detail};
}

template <typename F>
void timed(const std::string& id, const std::string& title, double budget, F&& f) {
  const auto t0 = Clock::now();
  Outcome o = f();
  const double secs = seconds_since(t0);
  if (secs > budget) {
    o.pass = false;
    o.detail += fmt(" [over the %.0f s budget]", budget);
  }
  report(id, title, o, secs);
}

}  // namespace

int main() {
  timed("C1", "gradient suite", 30, criterion1);
  timed("C2", "oracle equivalence", 120, criterion2);
  timed("C3", "TransE sanity", 60, criterion3);

  const auto [bundle, truth] = generate(SynthConfig{});
  const auto t0 = Clock::now();
  std::printf("    desk sweep: 5 seeds x 5 variants, %zu epochs, lr %.3g\n", desk_train_config(1).epochs,
              desk_train_config(1).learning_rate);
  const auto seeds = run_desk_sweep(bundle);
  const double sweep = seconds_since(t0);
  const bool in_budget = sweep <= 15 * 60;
  auto directional = [&](const std::string& id, const std::string& title, Outcome o) {
    if (!in_budget) {
      o.pass = false;
      o.detail += " [sweep over the 15 min budget]";
    }
    report(id, title, o, sweep);
  };
  directional("C4a", "zero-shot MRR KGE > Base (per-domain mean)", paired(seeds, "kge", "base", true, true));
  directional("C4b", "overall MRR MultD > Base", paired(seeds, "multd", "base", false, true));
  directional("C4c", "overall MRR MultD-GNN > MultD", paired(seeds, "multd-gnn", "multd", false, true));
  directional("C4d", "overall MRR MultD-KGE+GNN >= MultD-GNN", paired(seeds, "multd-kge-gnn", "multd-gnn", false, false));
  {
    const auto t = Clock::now();
    report("C5", "base zero-shot within 2x of random", criterion5(bundle, seeds), seconds_since(t));
  }
  constexpr double kNoBudget = std::numeric_limits<double>::infinity();
  timed("C6", "determinism and persistence", kNoBudget, [&] { return criterion6(bundle); });
  timed("C7", "published sparsity arithmetic", kNoBudget, criterion7);

  std::size_t failed = 0;
  for (const auto& [id, pass] : g_results) failed += !pass;
  std::printf("%zu/%zu criteria passed\n", g_results.size() - failed, g_results.size());
  return failed == 0 ? 0 : 1;
}
