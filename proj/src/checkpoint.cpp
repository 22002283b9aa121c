#include "kgmd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kgmd/errors.hpp"

namespace kgmd {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'K', 'G', 'M', 'D'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
    return value;
  }

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint is truncated");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void read_blob(Reader& in, Tensor& t) {
  const auto raw = in.take(t.size() * sizeof(double));
  std::memcpy(t.values.data(), raw.data(), raw.size());
}

template <typename T>
T field(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: bad field '") + key + "': " + e.what());
  }
}

}  // namespace

nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"multi_domain", c.multi_domain},
          {"kge", c.kge},
          {"gnn", c.gnn},
          {"block", to_string(c.block)},
          {"gnn_layers", c.gnn_layers},
          {"gnn_neighbor_cap", c.gnn_neighbor_cap},
          {"r_d_hidden", c.r_d_hidden},
          {"mint_hidden", c.mint_hidden},
          {"kge_uses_block_output", c.kge_uses_block_output},
          {"neighbor_seed", c.neighbor_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.dim = field<std::size_t>(j, "dim");
  c.multi_domain = field<bool>(j, "multi_domain");
  c.kge = field<bool>(j, "kge");
  c.gnn = field<bool>(j, "gnn");
  c.block = parse_interaction_block(field<std::string>(j, "block"));
  c.gnn_layers = field<std::size_t>(j, "gnn_layers");
  c.gnn_neighbor_cap = field<std::size_t>(j, "gnn_neighbor_cap");
  c.r_d_hidden = field<std::size_t>(j, "r_d_hidden");
  c.mint_hidden = field<std::size_t>(j, "mint_hidden");
  c.kge_uses_block_output = field<bool>(j, "kge_uses_block_output");
  c.neighbor_seed = field<std::uint64_t>(j, "neighbor_seed");
  return c;
}

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"negatives", c.negatives},
          {"rec_margin", c.rec_margin},
          {"kge_margin", c.kge_margin},
          {"learning_rate", c.learning_rate},
          {"optimizer", to_string(c.optimizer)},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"kg_batches_per_rec_batch", c.kg_batches_per_rec_batch},
          {"kge_weight", c.kge_weight},
          {"entity_renorm", c.entity_renorm},
          {"grad_clip", c.grad_clip},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = field<std::size_t>(j, "epochs");
  c.batch_size = field<std::size_t>(j, "batch_size");
  c.negatives = field<std::size_t>(j, "negatives");
  c.rec_margin = field<double>(j, "rec_margin");
  c.kge_margin = field<double>(j, "kge_margin");
  c.learning_rate = field<double>(j, "learning_rate");
  c.optimizer = parse_optimizer(field<std::string>(j, "optimizer"));
  c.beta1 = field<double>(j, "beta1");
  c.beta2 = field<double>(j, "beta2");
  c.epsilon = field<double>(j, "epsilon");
  c.kg_batches_per_rec_batch = field<std::size_t>(j, "kg_batches_per_rec_batch");
  c.kge_weight = field<double>(j, "kge_weight");
  c.entity_renorm = field<bool>(j, "entity_renorm");
  c.grad_clip = field<double>(j, "grad_clip");
  c.seed = field<std::uint64_t>(j, "seed");
  return c;
}

namespace {

ModelShape shape_of(const Parameters& p) {
  ModelShape s;
  s.num_items = p.item.rows;
  s.num_users = !p.user.empty() ? p.user.rows : p.user_shared.rows;
  s.num_entities = p.entity.rows;
  s.num_relations = p.relation.rows;
  s.num_domains = std::max({p.user_domain.size(), p.combine.size(), p.gnn_domain.size(), std::size_t{1}});
  return s;
}

}  // namespace

std::string serialize_checkpoint(const TrainedModel& m) {
  const ModelShape shape = shape_of(m.params);
  nlohmann::json tensors = nlohmann::json::array();
  for (const Tensor* t : m.params.tensors()) {
    tensors.push_back({{"name", t->name}, {"rows", t->rows}, {"cols", t->cols}});
  }
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : m.history) {
    nlohmann::json row = {{"epoch", h.epoch}, {"rec_loss", h.rec_loss}};
    row["kge_loss"] = h.kge_loss ? nlohmann::json(*h.kge_loss) : nlohmann::json(nullptr);
    history.push_back(row);
  }
  const bool moments = !m.optimizer.first_moment.empty();
  nlohmann::json header = {
      {"format_version", kCheckpointVersion},
      {"model_config", model_config_json(m.config)},
      {"train_config", train_config_json(m.train)},
      {"domain_scope", m.domain_scope ? nlohmann::json(*m.domain_scope) : nlohmann::json(nullptr)},
      {"vocab_digest", m.vocab_digest},
      {"shape",
       {{"users", shape.num_users},
        {"items", shape.num_items},
        {"entities", shape.num_entities},
        {"relations", shape.num_relations},
        {"domains", shape.num_domains}}},
      {"tensors", tensors},
      {"optimizer_step", m.optimizer.step},
      {"optimizer_moments", moments},
      {"seed", m.train.seed},
      {"history", history}};
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  auto blob = [&](const Tensor& t) {
    out.append(reinterpret_cast<const char*>(t.values.data()), t.size() * sizeof(double));
  };
  for (const Tensor* t : m.params.tensors()) blob(*t);
  if (moments) {
    for (const auto& t : m.optimizer.first_moment) blob(t);
    for (const auto& t : m.optimizer.second_moment) blob(t);
  }
  return out;
}

TrainedModel deserialize_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4) != std::string_view(kMagic, 4)) throw DataError("not a checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = in.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.take(header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  TrainedModel m{model_config_from_json(header.at("model_config")),
                 train_config_from_json(header.at("train_config")),
                 std::nullopt,
                 field<std::string>(header, "vocab_digest"),
                 {},
                 {},
                 {}};
  if (!header.at("domain_scope").is_null()) m.domain_scope = field<Index>(header, "domain_scope");
  const auto& s = header.at("shape");
  const ModelShape shape{field<std::size_t>(s, "users"), field<std::size_t>(s, "items"),
                         field<std::size_t>(s, "entities"), field<std::size_t>(s, "relations"),
                         field<std::size_t>(s, "domains")};
  try {
    m.params = Parameters::init(m.config, shape, 0);
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint holds an invalid model config: ") + e.what());
  }

  const auto tensors = m.params.tensors();
  const auto& listed = header.at("tensors");
  if (listed.size() != tensors.size()) throw DataError("checkpoint tensor list does not match its config");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (field<std::string>(listed[i], "name") != tensors[i]->name ||
        field<std::size_t>(listed[i], "rows") != tensors[i]->rows ||
        field<std::size_t>(listed[i], "cols") != tensors[i]->cols) {
      throw DataError("checkpoint tensor " + tensors[i]->name + " does not match its config");
    }
  }
  for (Tensor* t : tensors) read_blob(in, *t);

  m.optimizer.step = field<std::uint64_t>(header, "optimizer_step");
  if (field<bool>(header, "optimizer_moments")) {
    for (auto* moments : {&m.optimizer.first_moment, &m.optimizer.second_moment}) {
      for (const Tensor* t : tensors) {
        moments->emplace_back(t->name, t->rows, t->cols, t->row_sparse);
        moments->back().id = t->id;
        read_blob(in, moments->back());
      }
    }
  }
  if (!in.done()) throw DataError("checkpoint has trailing bytes");

  for (const auto& h : header.at("history")) {
    EpochStats e{field<std::size_t>(h, "epoch"), field<double>(h, "rec_loss"), std::nullopt};
    if (!h.at("kge_loss").is_null()) e.kge_loss = field<double>(h, "kge_loss");
    m.history.push_back(e);
  }
  return m;
}

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for checkpoint " + path.string());
}

TrainedModel load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_digest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  TrainedModel m;
  try {
    m = deserialize_checkpoint(buf.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (expected_digest && m.vocab_digest != *expected_digest) {
    throw DataError(path.string() + ": vocabulary digest " + m.vocab_digest + " does not match bundle digest " +
                    *expected_digest);
  }
  return m;
}

}  // namespace kgmd
