#include "spd/config.hpp"

#include <fstream>
#include <sstream>

#include "spd/errors.hpp"

namespace spd::train {

void TrainConfig::validate() const {
  for (const StageConfig* s : {&stage1, &stage2}) {
    if (s->epochs < 1) throw ValidationError("config: epochs must be >= 1");
    if (!(s->lr > 0.0)) throw ValidationError("config: lr must be positive");
    if (s->batch < 1) throw ValidationError("config: batch must be >= 1");
    if (s->patience < 1) throw ValidationError("config: patience must be >= 1");
  }
  if (!(holdout_val > 0.0 && holdout_val < 1.0)) {
    throw ValidationError("config: holdout_val must lie in (0,1)");
  }
}

namespace {

std::string strip(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ValidationError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const size_t hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    const std::string line = strip(raw);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));

    if (key == "seed") {
      cfg.train.seed = static_cast<uint64_t>(std::stoull(value));
    } else if (key == "checkpoint_dir") {
      cfg.train.checkpoint_dir = value;
    } else if (key == "holdout_val") {
      cfg.train.holdout_val = to_double(key, value);
    } else if (key == "stage1.epochs") {
      cfg.train.stage1.epochs = to_int(key, value);
    } else if (key == "stage1.lr") {
      cfg.train.stage1.lr = to_double(key, value);
    } else if (key == "stage1.batch") {
      cfg.train.stage1.batch = to_int(key, value);
    } else if (key == "stage1.patience") {
      cfg.train.stage1.patience = to_int(key, value);
    } else if (key == "stage1.lora") {
      cfg.train.stage1_lora = to_bool(key, value);
    } else if (key == "stage1.lora_rank") {
      cfg.train.lora_rank = to_int(key, value);
    } else if (key == "stage2.epochs") {
      cfg.train.stage2.epochs = to_int(key, value);
    } else if (key == "stage2.lr") {
      cfg.train.stage2.lr = to_double(key, value);
    } else if (key == "stage2.batch") {
      cfg.train.stage2.batch = to_int(key, value);
    } else if (key == "stage2.patience") {
      cfg.train.stage2.patience = to_int(key, value);
    } else if (key == "model.n_layers") {
      cfg.model.lm.n_layers = to_int(key, value);
    } else if (key == "model.n_heads") {
      cfg.model.lm.n_heads = to_int(key, value);
    } else if (key == "model.d_model") {
      cfg.model.lm.d_model = to_int(key, value);
    } else if (key == "model.d_ff") {
      cfg.model.lm.d_ff = to_int(key, value);
    } else if (key == "model.max_positions") {
      cfg.model.lm.max_positions = to_int(key, value);
    } else if (key == "model.max_len") {
      cfg.model.lm.max_len = to_int(key, value);
    } else if (key == "graph.layers") {
      cfg.model.graph.layers = to_int(key, value);
    } else if (key == "graph.dim") {
      cfg.model.graph.dim = to_int(key, value);
      cfg.model.graph.encoder.dim = cfg.model.graph.dim;
    } else if (key == "graph.out_dim") {
      cfg.model.graph.out_dim = to_int(key, value);
    } else if (key == "graph.encoder") {
      if (value == "hash_bag") {
        cfg.model.graph.encoder.kind = graph::EncoderKind::hash_bag;
      } else if (value == "external") {
        cfg.model.graph.encoder.kind = graph::EncoderKind::external;
      } else {
        throw ValidationError("config: graph.encoder must be hash_bag or external");
      }
    } else if (key == "graph.buckets") {
      cfg.model.graph.encoder.buckets = to_int(key, value);
    } else if (key == "graph.sidecar") {
      cfg.model.graph.encoder.sidecar_path = value;
    } else if (key == "fusion.layers") {
      cfg.model.fusion_layers.clear();
      if (value != "all") {
        std::istringstream parts(value);
        std::string tok;
        while (std::getline(parts, tok, ',')) {
          cfg.model.fusion_layers.push_back(to_int(key, strip(tok)));
        }
      }
    } else {
      throw ValidationError("config line " + std::to_string(line_no) + ": unknown key '" +
                            key + "'");
    }
  }
  cfg.model.lm.lora = cfg.train.stage1_lora;
  cfg.model.lm.lora_rank = cfg.train.lora_rank;
  cfg.train.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const RunConfig& cfg) {
  std::ostringstream out;
  out << "seed = " << cfg.train.seed << "\n";
  out << "checkpoint_dir = " << cfg.train.checkpoint_dir << "\n";
  out << "holdout_val = " << cfg.train.holdout_val << "\n";
  out << "stage1.epochs = " << cfg.train.stage1.epochs << "\n";
  out << "stage1.lr = " << cfg.train.stage1.lr << "\n";
  out << "stage1.batch = " << cfg.train.stage1.batch << "\n";
  out << "stage1.patience = " << cfg.train.stage1.patience << "\n";
  out << "stage1.lora = " << (cfg.train.stage1_lora ? 1 : 0) << "\n";
  out << "stage1.lora_rank = " << cfg.train.lora_rank << "\n";
  out << "stage2.epochs = " << cfg.train.stage2.epochs << "\n";
  out << "stage2.lr = " << cfg.train.stage2.lr << "\n";
  out << "stage2.batch = " << cfg.train.stage2.batch << "\n";
  out << "stage2.patience = " << cfg.train.stage2.patience << "\n";
  out << "model.n_layers = " << cfg.model.lm.n_layers << "\n";
  out << "model.n_heads = " << cfg.model.lm.n_heads << "\n";
  out << "model.d_model = " << cfg.model.lm.d_model << "\n";
  out << "model.d_ff = " << cfg.model.lm.d_ff << "\n";
  out << "model.max_positions = " << cfg.model.lm.max_positions << "\n";
  out << "model.max_len = " << cfg.model.lm.max_len << "\n";
  out << "graph.layers = " << cfg.model.graph.layers << "\n";
  out << "graph.dim = " << cfg.model.graph.dim << "\n";
  out << "graph.out_dim = " << cfg.model.graph.out_dim << "\n";
  out << "graph.encoder = "
      << (cfg.model.graph.encoder.kind == graph::EncoderKind::hash_bag ? "hash_bag" : "external")
      << "\n";
  out << "graph.buckets = " << cfg.model.graph.encoder.buckets << "\n";
  if (!cfg.model.graph.encoder.sidecar_path.empty()) {
    out << "graph.sidecar = " << cfg.model.graph.encoder.sidecar_path << "\n";
  }
  out << "fusion.layers = ";
  if (cfg.model.fusion_layers.empty()) {
    out << "all";
  } else {
    for (size_t i = 0; i < cfg.model.fusion_layers.size(); ++i) {
      if (i) out << ",";
      out << cfg.model.fusion_layers[i];
    }
  }
  out << "\n";
  return out.str();
}

}  // namespace spd::train
