#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"
#include "spd/errors.hpp"
#include "spd/model.hpp"

using nlohmann::json;

namespace spd::ckpt {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'D', 'C', 'K', 'P', 'T', '1'};

json config_to_json(const model::ModelConfig& cfg) {
  json j;
  j["lm"] = {{"n_layers", cfg.lm.n_layers},
             {"n_heads", cfg.lm.n_heads},
             {"d_model", cfg.lm.d_model},
             {"d_ff", cfg.lm.d_ff},
             {"max_positions", cfg.lm.max_positions},
             {"max_len", cfg.lm.max_len},
             {"lora", cfg.lm.lora},
             {"lora_rank", cfg.lm.lora_rank}};
  j["graph"] = {{"layers", cfg.graph.layers},
                {"dim", cfg.graph.dim},
                {"out_dim", cfg.graph.out_dim},
                {"encoder", cfg.graph.encoder.kind == graph::EncoderKind::hash_bag
                                ? "hash_bag"
                                : "external"},
                {"buckets", cfg.graph.encoder.buckets},
                {"sidecar", cfg.graph.encoder.sidecar_path}};
  j["fusion_layers"] = cfg.fusion_layers;
  return j;
}

model::ModelConfig config_from_json(const json& j) {
  model::ModelConfig cfg;
  const json& lm = j.at("lm");
  cfg.lm.n_layers = lm.at("n_layers").get<int>();
  cfg.lm.n_heads = lm.at("n_heads").get<int>();
  cfg.lm.d_model = lm.at("d_model").get<int>();
  cfg.lm.d_ff = lm.at("d_ff").get<int>();
  cfg.lm.max_positions = lm.at("max_positions").get<int>();
  cfg.lm.max_len = lm.at("max_len").get<int>();
  cfg.lm.lora = lm.at("lora").get<bool>();
  cfg.lm.lora_rank = lm.at("lora_rank").get<int>();
  const json& gr = j.at("graph");
  cfg.graph.layers = gr.at("layers").get<int>();
  cfg.graph.dim = gr.at("dim").get<int>();
  cfg.graph.out_dim = gr.at("out_dim").get<int>();
  cfg.graph.encoder.kind = gr.at("encoder").get<std::string>() == "external"
                               ? graph::EncoderKind::external
                               : graph::EncoderKind::hash_bag;
  cfg.graph.encoder.buckets = gr.at("buckets").get<int>();
  cfg.graph.encoder.sidecar_path = gr.value("sidecar", std::string());
  cfg.graph.encoder.dim = cfg.graph.dim;
  cfg.fusion_layers = j.value("fusion_layers", std::vector<int>{});
  return cfg;
}

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_raw(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save(const model::JointModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof kMagic);

  json header;
  header["version"] = 1;
  header["stage"] = m.stage;
  header["seed"] = m.init_seed;
  header["config"] = config_to_json(m.cfg);
  const std::string htext = header.dump();
  write_raw(out, static_cast<uint64_t>(htext.size()));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));

  // Parameter lists are rebuilt from the (non-const) structure; the const
  // cast only reflects that save() does not modify the model.
  auto& mm = const_cast<model::JointModel&>(m);
  const auto params = mm.all_parameters();
  write_raw(out, static_cast<uint64_t>(params.size()));
  for (const ad::Parameter* p : params) {
    write_raw(out, static_cast<uint64_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_raw(out, static_cast<uint64_t>(p->value.rows()));
    write_raw(out, static_cast<uint64_t>(p->value.cols()));
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        write_raw(out, p->value(r, c));
      }
    }
  }
  if (!out) throw IoError("checkpoint write failed: " + path);
}

model::JointModel load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);

  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ValidationError("checkpoint: bad magic in " + path);
  }
  const auto hlen = read_raw<uint64_t>(in);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("checkpoint: truncated header");
  const json header = json::parse(htext);
  if (header.at("version").get<int>() != 1) {
    throw ValidationError("checkpoint: unsupported version");
  }

  model::JointModel m = model::JointModel::make(config_from_json(header.at("config")),
                                                header.value("seed", 0ull));
  m.stage = header.at("stage").get<int>();

  std::map<std::string, ad::Parameter*> by_name;
  for (ad::Parameter* p : m.all_parameters()) by_name[p->name] = p;

  const auto count = read_raw<uint64_t>(in);
  for (uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_raw<uint64_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rows = static_cast<Eigen::Index>(read_raw<uint64_t>(in));
    const auto cols = static_cast<Eigen::Index>(read_raw<uint64_t>(in));
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ValidationError("checkpoint: unknown parameter '" + name + "'");
    }
    ad::Parameter& p = *it->second;
    if (p.value.rows() != rows || p.value.cols() != cols) {
      throw ValidationError("checkpoint: shape mismatch for '" + name + "'");
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        p.value(r, c) = read_raw<double>(in);
      }
    }
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw ValidationError("checkpoint: missing parameter '" + by_name.begin()->first + "'");
  }
  return m;
}

}  // namespace spd::ckpt
