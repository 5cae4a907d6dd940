#include "spd/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "spd/asmcfg.hpp"
#include "spd/config.hpp"
#include "spd/datamodel.hpp"
#include "spd/errors.hpp"
#include "spd/evalreport.hpp"
#include "spd/model.hpp"
#include "spd/synthgen.hpp"
#include "spd/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace spd::cli {

namespace {

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json cfg_to_json(const data::Cfg& cfg) {
  json nodes = json::array();
  for (const auto& b : cfg.blocks) nodes.push_back({{"id", b.id}, {"text", b.instructions}});
  json edges = json::array();
  for (const auto& [s, d] : cfg.edges) edges.push_back(json::array({s, d}));
  return {{"nodes", nodes}, {"edges", edges}};
}

// Train/val selection: an explicit split file wins; otherwise a
// deterministic holdout drawn from the config seed.
void resolve_train_val(const std::vector<data::PatchSample>& all, const std::string& split_path,
                       const train::TrainConfig& tc, std::vector<data::PatchSample>* train_set,
                       std::vector<data::PatchSample>* val_set) {
  if (!split_path.empty()) {
    const data::DatasetSplit split = data::load_split(split_path);
    *train_set = data::select_samples(all, split.train);
    *val_set = data::select_samples(all, split.validation);
  } else {
    train::holdout_split(all, tc.holdout_val, tc.seed, train_set, val_set);
  }
}

model::JointModel attach_external(model::JointModel m) {
  m.attach_external_table();
  return m;
}

int run_gen_toy(const std::string& out_path, int n, const std::string& mode, double ratio,
                uint64_t seed, int min_blocks, int max_blocks) {
  synth::GenConfig cfg;
  cfg.n_samples = n;
  cfg.mode = synth::mode_from_string(mode);
  cfg.positive_ratio = ratio;
  cfg.seed = seed;
  cfg.min_blocks = min_blocks;
  cfg.max_blocks = max_blocks;
  const auto samples = synth::gen_dataset(cfg);
  data::save_dataset(samples, out_path);
  std::cout << "wrote " << samples.size() << " samples to " << out_path << "\n";
  return 0;
}

int run_validate(const std::string& data_path, bool lenient) {
  const data::LoadResult r = data::load_dataset(data_path, !lenient);
  std::cout << "valid samples: " << r.samples.size();
  if (lenient) std::cout << ", skipped: " << r.skipped;
  std::cout << "\n";
  return 0;
}

int run_stats(const std::string& data_path, const std::string& group_by,
              const std::string& out_path) {
  const auto samples = data::load_dataset(data_path).samples;
  const auto rows = data::dataset_stats(samples, eval::group_by_from_string(group_by));
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%16s %6s %12s %12s %14s\n", "group", "n", "avg_nodes",
                "avg_edges", "avg_tokens");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%16s %6zu %12.2f %12.2f %14.2f\n", r.group.c_str(),
                  r.n_samples, r.avg_nodes, r.avg_edges, r.avg_pseudo_tokens);
    out << buf;
  }
  std::cout << out.str();
  if (!out_path.empty()) write_text_file(out_path, out.str());
  return 0;
}

int run_split(const std::string& data_path, const std::string& ratios, uint64_t seed,
              const std::string& by, const std::string& out_path) {
  double r[3];
  if (std::sscanf(ratios.c_str(), "%lf,%lf,%lf", &r[0], &r[1], &r[2]) != 3) {
    throw ValidationError("--ratios expects three comma-separated numbers");
  }
  const auto samples = data::load_dataset(data_path).samples;
  const auto key = by == "project" ? data::PartitionKey::project : data::PartitionKey::sample;
  const data::DatasetSplit split = data::make_split(samples, r[0], r[1], r[2], seed, key);
  data::save_split(split, out_path);
  std::cout << "train/val/test = " << split.train.size() << "/" << split.validation.size() << "/"
            << split.test.size() << " -> " << out_path << "\n";
  return 0;
}

int run_train_stage1(const std::string& config_path, const std::string& data_path,
                     const std::string& out_path, const std::string& split_path, int64_t seed,
                     bool quiet) {
  train::RunConfig rc = train::load_config(config_path);
  if (seed >= 0) rc.train.seed = static_cast<uint64_t>(seed);
  const auto all = data::load_dataset(data_path).samples;
  std::vector<data::PatchSample> train_set, val_set;
  resolve_train_val(all, split_path, rc.train, &train_set, &val_set);

  model::JointModel m = attach_external(model::JointModel::make(rc.model, rc.train.seed));
  const train::TrainResult res = train::train_stage1(m, train_set, val_set, rc.train, quiet);
  ckpt::save(m, out_path);
  std::cout << "stage1 best_epoch=" << res.best_epoch << " best_val_loss=" << res.best_val_loss
            << " -> " << out_path << "\n";
  return 0;
}

int run_train_stage2(const std::string& config_path, const std::string& data_path,
                     const std::string& out_path, const std::string& init_path,
                     const std::string& split_path, int64_t seed, bool quiet) {
  train::RunConfig rc = train::load_config(config_path);
  if (seed >= 0) rc.train.seed = static_cast<uint64_t>(seed);
  const auto all = data::load_dataset(data_path).samples;
  std::vector<data::PatchSample> train_set, val_set;
  resolve_train_val(all, split_path, rc.train, &train_set, &val_set);

  model::JointModel m = attach_external(ckpt::load(init_path));
  if (m.stage < 1) throw ValidationError("train-stage2: --init must be a stage-1 checkpoint");
  const train::TrainResult res = train::train_stage2(m, train_set, val_set, rc.train, quiet);
  ckpt::save(m, out_path);
  std::cout << "stage2 best_epoch=" << res.best_epoch << " best_val_loss=" << res.best_val_loss
            << " -> " << out_path << "\n";
  return 0;
}

int run_train_joint(const std::string& config_path, const std::string& data_path,
                    const std::string& out_path, const std::string& split_path, int64_t seed,
                    bool quiet) {
  train::RunConfig rc = train::load_config(config_path);
  if (seed >= 0) rc.train.seed = static_cast<uint64_t>(seed);
  const auto all = data::load_dataset(data_path).samples;
  std::vector<data::PatchSample> train_set, val_set;
  resolve_train_val(all, split_path, rc.train, &train_set, &val_set);

  model::JointModel m = attach_external(model::JointModel::make(rc.model, rc.train.seed));
  const train::JointDiagnostics diag = train::train_joint_ablation(m, train_set, val_set,
                                                                   rc.train, quiet);
  json j;
  j["val_losses"] = diag.val_losses;
  j["grad_cosines"] = diag.grad_cosines;
  write_text_file(out_path, j.dump(2) + "\n");
  std::cout << "joint-ablation diagnostics -> " << out_path << "\n";
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& group_by, const std::string& out_dir, bool plot) {
  model::JointModel m = attach_external(ckpt::load(ckpt_path));
  const auto samples = data::load_dataset(data_path).samples;
  const data::GroupBy g = eval::group_by_from_string(group_by);
  const eval::EvalOutput out = eval::evaluate(m, samples, g);

  fs::create_directories(out_dir);
  const std::string table = eval::render_table(out.groups);
  write_text_file(out_dir + "/metrics.json", eval::report_json(out, g));
  write_text_file(out_dir + "/metrics.txt", table);
  write_text_file(out_dir + "/predictions.jsonl", eval::predictions_jsonl(out.predictions));
  if (plot) {
    for (const char* metric : {"accuracy", "f1"}) {
      write_text_file(out_dir + "/" + metric + ".svg", eval::render_svg_bars(out.groups, metric));
    }
  }
  std::cout << table;
  return 0;
}

int run_cka(const std::string& ckpt_path, const std::string& data_path,
            const std::string& out_path) {
  model::JointModel m = attach_external(ckpt::load(ckpt_path));
  const auto samples = data::load_dataset(data_path).samples;
  const double cka = eval::representation_cka(m, samples);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f\n", cka);
  std::cout << "cka " << buf;
  if (!out_path.empty()) write_text_file(out_path, buf);
  return 0;
}

int run_parse_asm(const std::string& in_path, const std::string& diff_path, bool as_json) {
  std::vector<std::string> warnings;
  const data::Cfg cfg = asmcfg::build_cfg(asmcfg::parse_listing(read_text_file(in_path)),
                                          &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  if (!diff_path.empty()) {
    std::vector<std::string> w2;
    const data::Cfg other = asmcfg::build_cfg(asmcfg::parse_listing(read_text_file(diff_path)),
                                              &w2);
    const asmcfg::CfgDiff d = asmcfg::cfg_diff_stats(cfg, other);
    if (as_json) {
      json j = {{"added_nodes", d.added_nodes},     {"removed_nodes", d.removed_nodes},
                {"added_edges", d.added_edges},     {"removed_edges", d.removed_edges},
                {"changed_nodes", d.changed_nodes}};
      std::cout << j.dump(2) << "\n";
    } else {
      std::cout << "added_nodes=" << d.added_nodes << " removed_nodes=" << d.removed_nodes
                << " added_edges=" << d.added_edges << " removed_edges=" << d.removed_edges
                << " changed_nodes=" << d.changed_nodes << "\n";
    }
    return 0;
  }

  if (as_json) {
    std::cout << cfg_to_json(cfg).dump(2) << "\n";
  } else {
    std::cout << cfg.blocks.size() << " blocks, " << cfg.edges.size() << " edges\n";
    for (const auto& b : cfg.blocks) {
      std::cout << b.id << ":\n";
      for (const auto& ins : b.instructions) std::cout << "  " << ins << "\n";
    }
    for (const auto& [s, d] : cfg.edges) std::cout << s << " -> " << d << "\n";
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"binary security-patch detection toolkit"};
  app.require_subcommand(1);

  // gen-toy
  auto* gen = app.add_subcommand("gen-toy", "generate a synthetic labeled dataset");
  int gen_n = 100, gen_min = 3, gen_max = 10;
  double gen_ratio = 0.435;
  uint64_t gen_seed = 0;
  std::string gen_mode = "mixed", gen_out;
  gen->add_option("--n", gen_n, "number of samples");
  gen->add_option("--mode", gen_mode, "mixed|structure_only|semantics_only");
  gen->add_option("--ratio", gen_ratio, "positive ratio in (0,1)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--min-blocks", gen_min, "minimum base CFG blocks");
  gen->add_option("--max-blocks", gen_max, "maximum CFG blocks");
  gen->add_option("--out", gen_out, "output dataset path")->required();

  // validate
  auto* val = app.add_subcommand("validate", "validate a dataset file");
  std::string val_data;
  bool val_lenient = false;
  val->add_option("--data", val_data, "dataset path")->required();
  val->add_flag("--lenient", val_lenient, "skip and count invalid records");

  // stats
  auto* st = app.add_subcommand("stats", "dataset statistics");
  std::string st_data, st_group = "none", st_out;
  st->add_option("--data", st_data)->required();
  st->add_option("--group-by", st_group, "none|opt_level|project");
  st->add_option("--out", st_out, "also write the table to this path");

  // split
  auto* sp = app.add_subcommand("split", "make a train/validation/test split");
  std::string sp_data, sp_ratios = "0.8,0.1,0.1", sp_by = "sample", sp_out;
  uint64_t sp_seed = 0;
  sp->add_option("--data", sp_data)->required();
  sp->add_option("--ratios", sp_ratios, "train,val,test");
  sp->add_option("--seed", sp_seed);
  sp->add_option("--by", sp_by, "sample|project");
  sp->add_option("--out", sp_out)->required();

  // train-stage1 / train-stage2 / train-joint
  std::string t1_cfg, t1_data, t1_out, t1_split;
  int64_t t1_seed = -1;
  bool t1_quiet = false;
  auto* t1 = app.add_subcommand("train-stage1", "instruction-tune the LM branch");
  t1->add_option("--config", t1_cfg)->required();
  t1->add_option("--data", t1_data)->required();
  t1->add_option("--out", t1_out)->required();
  t1->add_option("--split", t1_split, "split file; its train/validation ids are used");
  t1->add_option("--seed", t1_seed, "override the config seed");
  t1->add_flag("--quiet", t1_quiet);

  std::string t2_cfg, t2_data, t2_out, t2_init, t2_split;
  int64_t t2_seed = -1;
  bool t2_quiet = false;
  auto* t2 = app.add_subcommand("train-stage2", "train the graph branch against a frozen LM");
  t2->add_option("--config", t2_cfg)->required();
  t2->add_option("--data", t2_data)->required();
  t2->add_option("--out", t2_out)->required();
  t2->add_option("--init", t2_init, "stage-1 checkpoint")->required();
  t2->add_option("--split", t2_split);
  t2->add_option("--seed", t2_seed);
  t2->add_flag("--quiet", t2_quiet);

  std::string tj_cfg, tj_data, tj_out, tj_split;
  int64_t tj_seed = -1;
  bool tj_quiet = false;
  auto* tj = app.add_subcommand(
      "train-joint", "diagnostic ablation: joint single-stage training, logs only");
  tj->add_option("--config", tj_cfg)->required();
  tj->add_option("--data", tj_data)->required();
  tj->add_option("--out", tj_out, "diagnostics JSON path")->required();
  tj->add_option("--split", tj_split);
  tj->add_option("--seed", tj_seed);
  tj->add_flag("--quiet", tj_quiet);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_group = "none", ev_out = "eval_out";
  bool ev_plot = false;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--group-by", ev_group, "none|opt_level|cwe|project");
  ev->add_option("--out", ev_out, "output directory");
  ev->add_flag("--plot", ev_plot, "also write SVG bar charts");

  // cka
  auto* ck = app.add_subcommand("cka", "representation-similarity diagnostic");
  std::string ck_ckpt, ck_data, ck_out;
  ck->add_option("--checkpoint", ck_ckpt)->required();
  ck->add_option("--data", ck_data)->required();
  ck->add_option("--out", ck_out, "write the value to this path");

  // parse-asm
  auto* pa = app.add_subcommand("parse-asm", "build a CFG from a listing");
  std::string pa_in, pa_diff;
  bool pa_json = false;
  pa->add_option("--in", pa_in)->required();
  pa->add_option("--diff", pa_diff, "second listing; print structural diff counts");
  pa->add_flag("--json", pa_json);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    // CLI11 prints --help to stdout with code 0; everything else is a
    // usage error.
    if (e.get_exit_code() == 0) {
      app.exit(e);
      return 0;
    }
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) return run_gen_toy(gen_out, gen_n, gen_mode, gen_ratio, gen_seed, gen_min,
                                          gen_max);
    if (val->parsed()) return run_validate(val_data, val_lenient);
    if (st->parsed()) return run_stats(st_data, st_group, st_out);
    if (sp->parsed()) return run_split(sp_data, sp_ratios, sp_seed, sp_by, sp_out);
    if (t1->parsed()) return run_train_stage1(t1_cfg, t1_data, t1_out, t1_split, t1_seed,
                                              t1_quiet);
    if (t2->parsed()) return run_train_stage2(t2_cfg, t2_data, t2_out, t2_init, t2_split, t2_seed,
                                              t2_quiet);
    if (tj->parsed()) return run_train_joint(tj_cfg, tj_data, tj_out, tj_split, tj_seed,
                                             tj_quiet);
    if (ev->parsed()) return run_eval(ev_ckpt, ev_data, ev_group, ev_out, ev_plot);
    if (ck->parsed()) return run_cka(ck_ckpt, ck_data, ck_out);
    if (pa->parsed()) return run_parse_asm(pa_in, pa_diff, pa_json);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace spd::cli
