// kgmd: generate synthetic bundles, train the six recommender variants,
// evaluate, query top-k and run gradient checks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kgmd/bundle_io.hpp"
#include "kgmd/checkpoint.hpp"
#include "kgmd/errors.hpp"
#include "kgmd/eval.hpp"
#include "kgmd/gradcheck.hpp"
#include "kgmd/run_config.hpp"
#include "kgmd/synthgen.hpp"
#include "kgmd/training.hpp"

namespace fs = std::filesystem;
using namespace kgmd;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kCheck = 4 };

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_file, "flat key = value config file");
  cmd->add_option("--set", c.sets, "override one config key (key=value); repeatable");
}

RunConfig resolve(const Common& c) {
  RunConfig config;
  if (!c.config_file.empty()) config = load_run_config(c.config_file);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_setting(config, s.substr(0, eq), s.substr(eq + 1));
  }
  return config;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void prepare_out(const std::string& dir, const RunConfig& config) {
  fs::create_directories(dir);
  write_text(fs::path(dir) / "run_config.txt", resolved_config(config));
}

std::string checkpoint_name(const TrainedModel& m, const DatasetBundle& bundle) {
  return m.domain_scope ? "model." + bundle.domains.at(*m.domain_scope).name + ".ckpt" : "model.ckpt";
}

int cmd_gen(const RunConfig& config, const std::string& out) {
  config.synth.validate();
  auto [bundle, truth] = generate(config.synth);
  prepare_out(out, config);
  write_bundle(bundle, out);
  write_ground_truth(truth, out);

  std::fprintf(stderr, "%-10s %8s %8s %10s %10s %10s\n", "domain", "users", "items", "edges", "eval", "sparsity");
  std::vector<std::size_t> eval_counts(bundle.domains.size(), 0);
  for (const auto& e : bundle.eval_interactions) ++eval_counts[e.item.domain];
  for (Index d = 0; d < bundle.domains.size(); ++d) {
    const auto& g = bundle.train;
    std::fprintf(stderr, "%-10s %8zu %8zu %10zu %10zu %9.4f%%\n", bundle.domains[d].name.c_str(), g.active_users(d),
                 g.domain_items(d).size(), g.num_edges(d), eval_counts[d], 100.0 * sparsity(g, d));
  }
  std::fprintf(stderr, "entities %zu, relations %zu, triples %zu, linked items %zu\n", bundle.kg.num_entities,
               bundle.kg.num_relations, bundle.kg.triples.size(), bundle.links.num_linked());
  return kOk;
}

int cmd_train(const RunConfig& config, const std::string& bundle_dir, const std::string& out) {
  config.model.validate();
  config.train.validate();
  const DatasetBundle bundle = load_bundle(bundle_dir);
  prepare_out(out, config);
  std::fprintf(stderr, "training %s on %zu train edges\n", config.model.variant_name().c_str(),
               bundle.train.num_edges());
  const auto models = train(bundle, config.model, config.train, [&](const TrainedModel& m, const EpochStats& s) {
    const std::string label = m.domain_scope ? bundle.domains[*m.domain_scope].name : "all";
    std::fprintf(stderr, "  [%s] epoch %zu  rec %.6f", label.c_str(), s.epoch, s.rec_loss);
    if (s.kge_loss) std::fprintf(stderr, "  kge %.6f", *s.kge_loss);
    std::fputc('\n', stderr);
  });
  for (const auto& m : models) {
    const fs::path path = fs::path(out) / checkpoint_name(m, bundle);
    save_checkpoint(m, path);
    std::fprintf(stderr, "wrote %s\n", path.string().c_str());
  }
  std::vector<DomainId> domains(bundle.domains.begin(), bundle.domains.end());
  write_text(fs::path(out) / "history.tsv", history_tsv(models, domains));
  return kOk;
}

std::vector<TrainedModel> load_models(const std::vector<std::string>& paths, const DatasetBundle& bundle) {
  const std::string digest = vocab_digest(bundle);
  std::vector<TrainedModel> models;
  for (const auto& p : paths) models.push_back(load_checkpoint(p, digest));
  return models;
}

void print_slice(const char* name, const SliceReport& s, const EvalReport& r) {
  auto row = [&](const std::string& label, const SliceMetrics& m) {
    if (m.empty()) {
      std::fprintf(stderr, "  %-10s %-10s (empty slice)\n", name, label.c_str());
      return;
    }
    std::fprintf(stderr, "  %-10s %-10s n=%-6zu MRR %.4f", name, label.c_str(), m.count, m.mrr);
    for (std::size_t i = 0; i < r.ks.size(); ++i) std::fprintf(stderr, "  H@%zu %.4f", r.ks[i], m.hits[i]);
    std::fputc('\n', stderr);
  };
  for (std::size_t d = 0; d < s.domains.size(); ++d) row(r.domain_names[d], s.domains[d]);
  if (s.all) row("all", *s.all);
  if (s.all_macro) row("all_macro", *s.all_macro);
}

int cmd_eval(const RunConfig& config, const std::string& bundle_dir, const std::vector<std::string>& checkpoints,
             const std::string& out) {
  config.eval.validate();
  const DatasetBundle bundle = load_bundle(bundle_dir);
  const auto models = load_models(checkpoints, bundle);
  const EvalReport report = evaluate(bundle, models, config.eval);
  prepare_out(out, config);
  write_text(fs::path(out) / "report.json", report_json(report).dump(2) + "\n");
  write_text(fs::path(out) / "report.tsv", report_tsv(report));
  std::fprintf(stderr, "%s\n", report.variant.c_str());
  print_slice("general", report.general, report);
  if (report.zero_shot) print_slice("zero_shot", *report.zero_shot, report);
  return kOk;
}

int cmd_rank(const std::string& bundle_dir, const std::vector<std::string>& checkpoints, const std::string& user,
             const std::string& domain, std::size_t k) {
  const DatasetBundle bundle = load_bundle(bundle_dir);
  const auto models = load_models(checkpoints, bundle);
  const auto u = bundle.vocab.users.find(user);
  if (!u) throw DataError("unknown user '" + user + "'");
  std::optional<Index> d;
  for (const auto& dom : bundle.domains) {
    if (dom.name == domain) d = dom.index;
  }
  if (!d) throw DataError("unknown domain '" + domain + "'");
  const Scorer scorer(models, bundle);
  for (const auto& [item, score] : rank_topk(scorer, bundle, *u, *d, k, FilterMode::train)) {
    std::printf("%s\t%.17g\n", bundle.vocab.items.name(item).c_str(), score);
  }
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, bool inject_fault) {
  GradCheckOptions options;
  if (inject_fault) options.corrupt = inject_gradient_fault;
  bool ok = true;
  for (const auto& [name, config] : standard_variants()) {
    auto report = grad_check(config, seed, options);
    report.variant = name;
    ok = ok && report.passed();
    std::fputs(format_report(report).c_str(), stderr);
  }
  std::fprintf(stderr, "gradient check %s\n", ok ? "passed" : "FAILED");
  return ok ? kOk : kCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-graph-enhanced multi-domain recommender"};
  app.require_subcommand(1);

  Common gen_common, train_common, eval_common;
  std::string out, bundle_dir, user, domain;
  std::vector<std::string> checkpoints;
  std::size_t k = 10;
  std::uint64_t seed = 1;
  bool inject_fault = false;

  auto* gen = app.add_subcommand("gen", "generate a synthetic bundle");
  add_common(gen, gen_common);
  gen->add_option("-o,--out", out, "output bundle directory")->required();
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--seed", gen_seed, "generator seed");

  auto* tr = app.add_subcommand("train", "train one model variant");
  add_common(tr, train_common);
  tr->add_option("-b,--bundle", bundle_dir)->required();
  tr->add_option("-o,--out", out)->required();
  bool multi = false, kge = false, gnn = false;
  std::string block;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> train_seed;
  auto* multi_flag = tr->add_flag("--multi-domain", multi, "shared + per-domain user encoder");
  auto* kge_flag = tr->add_flag("--kge", kge, "knowledge graph enhancement");
  auto* gnn_flag = tr->add_flag("--gnn", gnn, "attention GNN user encoder (requires --multi-domain)");
  tr->add_option("--block", block, "interaction block")->check(CLI::IsMember({"mint", "cnc"}));
  tr->add_option("--epochs", epochs);
  tr->add_option("--seed", train_seed, "training seed");

  auto* ev = app.add_subcommand("eval", "filtered ranking evaluation");
  add_common(ev, eval_common);
  ev->add_option("-b,--bundle", bundle_dir)->required();
  ev->add_option("-m,--checkpoint", checkpoints, "checkpoint file(s)")->required();
  ev->add_option("-o,--out", out)->required();
  bool zero_shot = false;
  ev->add_flag("--zero-shot", zero_shot, "also report the zero-shot slice");

  auto* rk = app.add_subcommand("rank", "top-k items for one user in one domain");
  rk->add_option("-b,--bundle", bundle_dir)->required();
  rk->add_option("-m,--checkpoint", checkpoints)->required();
  rk->add_option("-u,--user", user)->required();
  rk->add_option("-d,--domain", domain)->required();
  rk->add_option("-k", k)->check(CLI::PositiveNumber);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of all variants");
  gc->add_option("--seed", seed);
  gc->add_flag("--inject-fault", inject_fault, "corrupt one analytic gradient entry");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) {
      RunConfig config = resolve(gen_common);
      if (gen_seed) config.synth.seed = *gen_seed;
      return cmd_gen(config, out);
    }
    if (*tr) {
      RunConfig config = resolve(train_common);
      if (multi_flag->count() || kge_flag->count() || gnn_flag->count()) {
        config.model.multi_domain = multi;
        config.model.kge = kge;
        config.model.gnn = gnn;
      }
      if (!block.empty()) config.model.block = parse_interaction_block(block);
      if (epochs) config.train.epochs = *epochs;
      if (train_seed) config.train.seed = *train_seed;
      return cmd_train(config, bundle_dir, out);
    }
    if (*ev) {
      RunConfig config = resolve(eval_common);
      if (zero_shot) config.eval.zero_shot = true;
      return cmd_eval(config, bundle_dir, checkpoints, out);
    }
    if (*rk) return cmd_rank(bundle_dir, checkpoints, user, domain, k);
    if (*gc) return cmd_gradcheck(seed, inject_fault);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
