#include "kgmd/bundle_io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "kgmd/digest.hpp"
#include "kgmd/errors.hpp"

namespace kgmd {
namespace fs = std::filesystem;

namespace {

std::string where(const fs::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

template <typename T>
T parse_number(std::string_view text, const fs::path& path, std::size_t line) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DataError(where(path, line) + ": expected integer, got '" + std::string(text) + "'");
  }
  return value;
}

void expect_fields(std::span<const std::string_view> f, std::size_t n, const fs::path& path,
                   std::size_t line) {
  if (f.size() != n) {
    throw DataError(where(path, line) + ": expected " + std::to_string(n) + " fields, got " +
                    std::to_string(f.size()));
  }
  for (auto field : f) {
    if (field.empty()) throw DataError(where(path, line) + ": empty field");
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void close_out(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw DataError("write failed: " + path.string());
}

void write_interactions(const fs::path& path, const DatasetBundle& b,
                        std::span<const Interaction> rows) {
  auto out = open_out(path);
  out << "# user\titem\tdomain\ttimestamp\n";
  for (const auto& x : rows) {
    out << b.vocab.users.name(x.user) << '\t' << b.vocab.items.name(x.item.index) << '\t'
        << b.domains.at(x.item.domain).name << '\t' << x.timestamp << '\n';
  }
  close_out(out, path);
}

void write_names(const fs::path& path, const Vocabulary& vocab) {
  auto out = open_out(path);
  for (Index i = 0; i < vocab.size(); ++i) out << i << '\t' << vocab.name(i) << '\n';
  close_out(out, path);
}

void read_names(const fs::path& path, Vocabulary& vocab, std::vector<std::string>* extra) {
  for_each_tsv_row(path, [&](std::size_t line, std::span<const std::string_view> f) {
    expect_fields(f, extra ? 3 : 2, path, line);
    const auto index = parse_number<Index>(f[0], path, line);
    if (index != vocab.size()) {
      throw DataError(where(path, line) + ": vocabulary indices must be dense and in order");
    }
    if (vocab.find(f[1])) throw DataError(where(path, line) + ": duplicate id '" + std::string(f[1]) + "'");
    vocab.intern(f[1]);
    if (extra) extra->emplace_back(f[2]);
  });
}

std::vector<Interaction> graph_rows(const InteractionGraph& g) {
  std::vector<Interaction> rows;
  rows.reserve(g.num_edges());
  for (const auto& e : g.edges()) rows.push_back({e.user, {e.item, g.item_domain(e.item)}, e.timestamp});
  return rows;
}

}  // namespace

void for_each_tsv_row(const fs::path& path,
                      const std::function<void(std::size_t, std::span<const std::string_view>)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::vector<std::string_view> fields;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    fields.clear();
    std::string_view rest(line);
    while (true) {
      auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    fn(number, fields);
  }
}

std::vector<Interaction> load_interactions(const fs::path& path, std::span<const DomainId> domains,
                                           Vocabularies& vocab) {
  std::vector<Interaction> rows;
  for_each_tsv_row(path, [&](std::size_t line, std::span<const std::string_view> f) {
    expect_fields(f, 4, path, line);
    const DomainId* domain = nullptr;
    for (const auto& d : domains) {
      if (d.name == f[2]) domain = &d;
    }
    if (!domain) throw DataError(where(path, line) + ": unknown domain '" + std::string(f[2]) + "'");
    const auto ts = parse_number<std::int64_t>(f[3], path, line);
    rows.push_back({vocab.users.intern(f[0]), {vocab.items.intern(f[1]), domain->index}, ts});
  });
  return rows;
}

KnowledgeGraph load_triples(const fs::path& path, Vocabularies& vocab) {
  KnowledgeGraph kg;
  for_each_tsv_row(path, [&](std::size_t line, std::span<const std::string_view> f) {
    expect_fields(f, 3, path, line);
    kg.triples.push_back(
        {vocab.entities.intern(f[0]), vocab.relations.intern(f[1]), vocab.entities.intern(f[2])});
  });
  kg.num_entities = vocab.entities.size();
  kg.num_relations = vocab.relations.size();
  dedup_triples(kg);
  return kg;
}

ItemEntityLinks load_links(const fs::path& path, Vocabularies& vocab) {
  ItemEntityLinks links;
  links.entity_of_item.assign(vocab.items.size(), std::nullopt);
  for_each_tsv_row(path, [&](std::size_t line, std::span<const std::string_view> f) {
    expect_fields(f, 2, path, line);
    auto item = vocab.items.find(f[0]);
    if (!item) throw DataError(where(path, line) + ": unknown item '" + std::string(f[0]) + "'");
    const Index entity = vocab.entities.intern(f[1]);
    auto& slot = links.entity_of_item[*item];
    if (slot && *slot != entity) {
      throw DataError(where(path, line) + ": item linked to two entities");
    }
    slot = entity;
  });
  return links;
}

void write_bundle(const DatasetBundle& b, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  write_interactions(dir / "interactions.train.tsv", b, graph_rows(b.train));
  write_interactions(dir / "interactions.eval.tsv", b, b.eval_interactions);

  {
    const auto path = dir / "kg.tsv";
    auto out = open_out(path);
    out << "# head\trelation\ttail\n";
    for (const auto& t : b.kg.triples) {
      out << b.vocab.entities.name(t.head) << '\t' << b.vocab.relations.name(t.relation) << '\t'
          << b.vocab.entities.name(t.tail) << '\n';
    }
    close_out(out, path);
  }
  {
    const auto path = dir / "links.tsv";
    auto out = open_out(path);
    out << "# item\tentity\n";
    for (Index v = 0; v < b.links.entity_of_item.size(); ++v) {
      if (auto e = b.links.entity_of_item[v]) {
        out << b.vocab.items.name(v) << '\t' << b.vocab.entities.name(*e) << '\n';
      }
    }
    close_out(out, path);
  }
  write_names(dir / "vocab.users.tsv", b.vocab.users);
  write_names(dir / "vocab.entities.tsv", b.vocab.entities);
  write_names(dir / "vocab.relations.tsv", b.vocab.relations);
  {
    const auto path = dir / "vocab.items.tsv";
    auto out = open_out(path);
    for (Index v = 0; v < b.vocab.items.size(); ++v) {
      out << v << '\t' << b.vocab.items.name(v) << '\t' << b.domains.at(b.train.item_domain(v)).name
          << '\n';
    }
    close_out(out, path);
  }

  nlohmann::json meta;
  meta["format_version"] = std::string(kBundleFormatVersion);
  meta["domains"] = nlohmann::json::array();
  for (const auto& d : b.domains) meta["domains"].push_back(d.name);
  meta["num_users"] = b.vocab.users.size();
  meta["num_items"] = b.vocab.items.size();
  meta["num_entities"] = b.kg.num_entities;
  meta["num_relations"] = b.kg.num_relations;
  meta["num_train_interactions"] = b.train.num_edges();
  meta["num_eval_interactions"] = b.eval_interactions.size();
  meta["num_triples"] = b.kg.triples.size();
  meta["num_links"] = b.links.num_linked();
  meta["items_per_domain"] = nlohmann::json::array();
  meta["train_edges_per_domain"] = nlohmann::json::array();
  for (Index d = 0; d < b.domains.size(); ++d) {
    meta["items_per_domain"].push_back(b.train.domain_items(d).size());
    meta["train_edges_per_domain"].push_back(b.train.num_edges(d));
  }
  meta["vocab_digest"] = vocab_digest(b);
  const auto path = dir / "meta.json";
  auto out = open_out(path);
  out << meta.dump(2) << '\n';
  close_out(out, path);
}

DatasetBundle load_bundle(const fs::path& dir) {
  nlohmann::json meta;
  {
    std::ifstream in(dir / "meta.json");
    if (!in) throw DataError("missing " + (dir / "meta.json").string());
    try {
      in >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("meta.json: " + std::string(e.what()));
    }
  }
  if (meta.value("format_version", std::string()) != kBundleFormatVersion) {
    throw DataError("unsupported bundle format version in " + dir.string());
  }

  DatasetBundle b;
  try {
    for (const auto& name : meta.at("domains")) {
      b.domains.push_back({static_cast<Index>(b.domains.size()), name.get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("meta.json: " + std::string(e.what()));
  }

  read_names(dir / "vocab.users.tsv", b.vocab.users, nullptr);
  std::vector<std::string> item_domain_names;
  read_names(dir / "vocab.items.tsv", b.vocab.items, &item_domain_names);
  read_names(dir / "vocab.entities.tsv", b.vocab.entities, nullptr);
  read_names(dir / "vocab.relations.tsv", b.vocab.relations, nullptr);

  std::vector<Index> item_domain;
  item_domain.reserve(item_domain_names.size());
  for (const auto& name : item_domain_names) {
    auto it = std::find_if(b.domains.begin(), b.domains.end(),
                           [&](const DomainId& d) { return d.name == name; });
    if (it == b.domains.end()) throw DataError("vocab.items.tsv: unknown domain '" + name + "'");
    item_domain.push_back(it->index);
  }

  const auto sizes = [&] {
    return std::array{b.vocab.users.size(), b.vocab.items.size(), b.vocab.entities.size(),
                      b.vocab.relations.size()};
  };
  const auto frozen = sizes();

  const auto train = load_interactions(dir / "interactions.train.tsv", b.domains, b.vocab);
  b.eval_interactions = load_interactions(dir / "interactions.eval.tsv", b.domains, b.vocab);
  b.kg = load_triples(dir / "kg.tsv", b.vocab);
  b.links = load_links(dir / "links.tsv", b.vocab);
  if (sizes() != frozen) {
    throw DataError(dir.string() + ": data files reference ids missing from the vocabularies");
  }
  b.train = build_graph(train, b.vocab.users.size(), item_domain, b.domains.size());

  if (auto digest = meta.find("vocab_digest"); digest != meta.end()) {
    if (digest->get<std::string>() != vocab_digest(b)) {
      throw DataError(dir.string() + ": vocabulary digest does not match meta.json");
    }
  }
  return b;
}

std::string vocab_digest(const DatasetBundle& b) {
  Fnv1a h;
  for (const auto& d : b.domains) h.update_field(d.name);
  h.update_field("|users");
  for (const auto& n : b.vocab.users.names()) h.update_field(n);
  h.update_field("|items");
  for (Index v = 0; v < b.vocab.items.size(); ++v) {
    h.update_field(b.vocab.items.name(v));
    h.update_field(v < b.train.num_items() ? std::to_string(b.train.item_domain(v)) : "?");
  }
  h.update_field("|entities");
  for (const auto& n : b.vocab.entities.names()) h.update_field(n);
  h.update_field("|relations");
  for (const auto& n : b.vocab.relations.names()) h.update_field(n);
  return h.hex();
}

}  // namespace kgmd
