#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "kgmd/model.hpp"
#include "kgmd/training.hpp"

namespace kgmd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json model_config_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Layout: "KGMD", u32 version, u64 header length, canonical JSON header, then
/// little-endian f64 blobs: parameters in Parameters::tensors() order, followed
/// by the Adam first and second moments in the same order.
std::string serialize_checkpoint(const TrainedModel& model);
TrainedModel deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
/// Throws DataError on a bad magic, version, truncation, or when
/// `expected_digest` is given and differs from the stored vocabulary digest.
TrainedModel load_checkpoint(const std::filesystem::path& path,
                             const std::optional<std::string>& expected_digest = std::nullopt);

}  // namespace kgmd
