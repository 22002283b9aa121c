#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgmd/graph_data.hpp"

namespace kgmd {

inline constexpr std::string_view kBundleFormatVersion = "1";

/// Calls `fn(line_number, fields)` for every non-empty, non-comment line of a
/// tab-separated file. Line numbers are 1-based.
void for_each_tsv_row(const std::filesystem::path& path,
                      const std::function<void(std::size_t, std::span<const std::string_view>)>& fn);

/// Parses `user<TAB>item<TAB>domain<TAB>timestamp` rows. Ids are interned into
/// `vocab`; domain labels must name one of `domains`. Rows are returned in file
/// order without deduplication.
std::vector<Interaction> load_interactions(const std::filesystem::path& path,
                                           std::span<const DomainId> domains,
                                           Vocabularies& vocab);

/// Parses `head<TAB>relation<TAB>tail` rows; duplicates are dropped.
KnowledgeGraph load_triples(const std::filesystem::path& path, Vocabularies& vocab);

/// Parses `item<TAB>entity` rows. Items must already be in the vocabulary.
ItemEntityLinks load_links(const std::filesystem::path& path, Vocabularies& vocab);

void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle load_bundle(const std::filesystem::path& dir);

/// Fingerprint of all id maps and domain labels. Checkpoints and reports carry
/// it so they cannot be applied to a bundle with different indexing.
std::string vocab_digest(const DatasetBundle& bundle);

}  // namespace kgmd
