// abd: synthetic antibody CDR design pipeline.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "abd/align.hpp"
#include "abd/checkpoint.hpp"
#include "abd/config.hpp"
#include "abd/data.hpp"
#include "abd/diffusion.hpp"
#include "abd/errors.hpp"
#include "abd/eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace abd;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  bool force = false;

  RunConfig load() const {
    std::vector<std::pair<std::string, json>> ov;
    for (const auto& s : sets) ov.push_back(parse_override(s));
    return load_config(config, ov);
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file (defaults when omitted)")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Override a config key, e.g. --set align.beta=50 (repeatable)");
  cmd->add_flag("--force", c.force, "Overwrite existing outputs");
}

void refuse_existing(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) throw ConfigError(fmt::format("{} exists; pass --force to overwrite", p.string()));
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw DataError(fmt::format("cannot write {}", p.string()));
  os << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError(fmt::format("cannot read {}", p.string()));
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string loss_csv(const std::vector<double>& losses, const std::string& hash) {
  std::string s = fmt::format("# config_hash {}\nstep,loss\n", hash);
  for (std::size_t i = 0; i < losses.size(); ++i) s += fmt::format("{},{:.17g}\n", i + 1, losses[i]);
  return s;
}

struct Dataset {
  std::vector<DatasetEntry> entries;
  SplitManifest split;

  std::vector<const DatasetEntry*> subset(const std::string& which) const {
    std::vector<std::string> ids;
    if (which == "train") ids = split.train;
    else if (which == "val") ids = split.val;
    else if (which == "test") ids = split.test;
    else if (which == "all") for (const auto& e : entries) ids.push_back(e.complex.id);
    else throw ConfigError(fmt::format("unknown split '{}'", which));
    std::vector<const DatasetEntry*> out;
    for (const auto& id : ids) {
      auto it = std::find_if(entries.begin(), entries.end(), [&](const DatasetEntry& e) { return e.complex.id == id; });
      if (it == entries.end()) throw DataError(fmt::format("split lists unknown complex {}", id));
      out.push_back(&*it);
    }
    return out;
  }

  std::vector<ComplexInstance> complexes(const std::string& which) const {
    std::vector<ComplexInstance> out;
    for (const auto* e : subset(which)) out.push_back(e->complex);
    return out;
  }
};

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(fmt::format("data directory {} not found", dir.string()));
  Dataset d;
  d.entries = read_dataset((dir / "dataset.jsonl").string());
  d.split = manifest_from_json(read_text(dir / "split.json"));
  return d;
}

Checkpoint load_matching(const std::string& path, const RunConfig& cfg) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.model_hash != model_hash(cfg))
    throw ConfigError(fmt::format("checkpoint {} was built for config hash {}, current config hash is {}", path,
                                  ck.model_hash, model_hash(cfg)));
  return ck;
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const Common& c, const std::string& out) {
  const RunConfig cfg = c.load();
  const fs::path dir(out);
  refuse_existing(dir / "dataset.jsonl", c.force);
  const std::string hash = config_hash(cfg);
  std::vector<DatasetEntry> entries;
  std::vector<std::string> ids;
  for (int i = 0; i < cfg.data.n_complexes; ++i) {
    GenParams gp = cfg.data.gen;
    gp.seed = Rng::derive_seed(cfg.seed, fmt::format("data/complex/{}", i));
    ComplexInstance cx = gen_complex(gp);
    Design ref = gen_reference_cdr(cx, Rng::derive_seed(cfg.seed, fmt::format("data/anneal/{}", i)), cfg.data.anneal,
                                   cfg.energy);
    ids.push_back(cx.id);
    entries.push_back({std::move(cx), std::move(ref)});
  }
  std::ostringstream os;
  write_dataset(os, entries, hash);
  write_text(dir / "dataset.jsonl", os.str());
  const SplitManifest split = split_by_hash(ids);
  write_text(dir / "split.json", manifest_to_json(split, hash));
  std::cout << fmt::format("wrote {} complexes ({} train / {} val / {} test) to {}\n", entries.size(),
                           split.train.size(), split.val.size(), split.test.size(), dir.string());
  return 0;
}

int cmd_train(const Common& c, const std::string& data, const std::string& out, const std::string& init,
              bool pretrain_only) {
  const RunConfig cfg = c.load();
  const fs::path dir(out);
  refuse_existing(dir / "manifest.json", c.force);
  const Dataset ds = load_dataset(data);
  const auto train = ds.subset("train");
  if (train.empty()) throw DataError("training split is empty");
  Rng rng(Rng::derive_seed(cfg.seed, "train"));

  DiffusionModel model;
  model.schedule = NoiseSchedule::cosine(cfg.schedule_steps, cfg.schedule_offset);
  std::vector<double> pre_losses;
  if (!init.empty()) {
    model = load_matching(init, cfg).model;
  } else {
    Rng init_rng = rng.split("init");
    model.params = DenoiserParams::init(cfg.model, init_rng);
    std::vector<SequenceExample> corpus;
    for (const auto* e : train) {
      if (!e->reference) throw DataError(fmt::format("complex {} has no reference CDR", e->complex.id));
      corpus.push_back(sequence_example(e->complex, e->reference->cdr));
    }
    Rng pre_rng = rng.split("pretrain");
    AdamConfig opt;
    opt.lr = cfg.train.pretrain_lr;
    PretrainResult pr = pretrain_encoder(std::move(model.params), corpus, cfg.train.pretrain_steps, pre_rng, opt);
    model.params = std::move(pr.params);
    pre_losses = std::move(pr.losses);
  }

  std::vector<double> losses;
  if (!pretrain_only) {
    std::vector<TrainExample> examples;
    for (const auto* e : train) {
      if (!e->reference) throw DataError(fmt::format("complex {} has no reference CDR", e->complex.id));
      examples.push_back({e->complex, e->reference->cdr});
    }
    Rng train_rng = rng.split("diffusion");
    AdamConfig opt;
    opt.lr = cfg.train.lr;
    losses = train_diffusion(model, examples, cfg.train.steps, cfg.train.batch, train_rng, opt, true);
  }

  save_checkpoint(dir.string(), {model, model_hash(cfg), rng.serialize()});
  if (init.empty()) write_text(dir / "pretrain_loss.csv", loss_csv(pre_losses, config_hash(cfg)));
  if (!pretrain_only) write_text(dir / "loss.csv", loss_csv(losses, config_hash(cfg)));
  std::cout << fmt::format("{} done: {} pre-training steps, {} diffusion steps", pretrain_only ? "pretrain" : "train",
                           pre_losses.size(), losses.size());
  if (!losses.empty()) std::cout << fmt::format(", loss {:.4f} -> {:.4f}", losses.front(), losses.back());
  std::cout << "\n";
  return 0;
}

json align_report(const AlignResult& r, const RunConfig& cfg, const std::string& hash) {
  json it = json::array();
  for (const auto& rep : r.iterations)
    it.push_back({{"iter", rep.iter},
                  {"temperature", rep.temperature},
                  {"n_prefs", rep.n_prefs},
                  {"n_prefs_total", rep.n_prefs_total},
                  {"mean_rhat_train", rep.mean_rhat_train},
                  {"mean_rhat_val", rep.mean_rhat_val},
                  {"mean_implicit_reward", rep.mean_implicit_reward},
                  {"loss_curve_path", rep.iter == 0 ? "" : fmt::format("loss_iter{}.csv", rep.iter)}});
  return {{"config_hash", hash}, {"weights", cfg.align.w.label()}, {"beta", cfg.align.beta},
          {"best_iter", r.best}, {"warnings", r.warnings}, {"iterations", it}};
}

// Runs one alignment and writes its artifacts under `dir`.
DiffusionModel run_align(const RunConfig& cfg, const Dataset& ds, const Checkpoint& ref, const fs::path& dir) {
  const std::string hash = config_hash(cfg);
  const AlignResult r = iterate_align(ref.model, ds.complexes("train"), ds.complexes("val"), cfg.align,
                                      Rng::derive_seed(cfg.seed, "align"), cfg.energy);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& rep : r.iterations)
    if (rep.iter > 0) write_text(dir / fmt::format("loss_iter{}.csv", rep.iter), loss_csv(rep.losses, hash));
  write_text(dir / "report.json", align_report(r, cfg, hash).dump(2) + "\n");
  DiffusionModel best{r.best_params(), ref.model.schedule};
  save_checkpoint((dir / "best").string(), {best, ref.model_hash, ""});
  std::cout << fmt::format("align {}: best iteration {} (validation mean reward {:.4f}, reference {:.4f})\n",
                           cfg.align.w.label(), r.best, r.iterations[r.best].mean_rhat_val,
                           r.iterations[0].mean_rhat_val);
  return best;
}

int cmd_align(const Common& c, const std::string& data, const std::string& ref_path, const std::string& out) {
  const RunConfig cfg = c.load();
  const fs::path dir(out);
  refuse_existing(dir / "report.json", c.force);
  const Dataset ds = load_dataset(data);
  const Checkpoint ref = load_matching(ref_path, cfg);
  run_align(cfg, ds, ref, dir);
  return 0;
}

std::vector<Weights> parse_weight_list(const std::string& text) {
  std::vector<Weights> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      out.push_back(Weights::parse(item));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("--weights: entry starting at position {}: {}", pos, e.what()));
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

int cmd_pareto(const Common& c, const std::string& data, const std::string& ref_path, const std::string& out,
               const std::string& weights) {
  const RunConfig base = c.load();
  const std::vector<Weights> ws = parse_weight_list(weights);
  const fs::path dir(out);
  refuse_existing(dir / "front.csv", c.force);
  const Dataset ds = load_dataset(data);
  const Checkpoint ref = load_matching(ref_path, base);
  const auto complexes = ds.complexes("train");
  std::string csv = fmt::format("# config_hash {}\nw_att,w_rep,mean_e_att,mean_e_rep\n", config_hash(base));
  for (const auto& w : ws) {
    RunConfig cfg = base;
    cfg.align.w = w;
    const fs::path sub = dir / fmt::format("w_{:g}_{:g}", w.att, w.rep);
    const DiffusionModel best = run_align(cfg, ds, ref, sub);
    double att = 0.0, rep = 0.0;
    int n = 0;
    for (const auto& cx : complexes)
      for (int j = 0; j < cfg.eval.samples; ++j) {
        const Design d = sample_cdr(best, cx, cfg.eval.temperature,
                                    Rng::derive_seed(cfg.seed, fmt::format("front/{}/{}", cx.id, j)));
        const EnergyReport e = cdr_ag_energies(cx, d.cdr, cfg.energy);
        att += e.e_att_total;
        rep += e.e_rep_total;
        ++n;
      }
    if (n == 0) throw ConfigError("pareto-sweep needs eval.samples >= 1");
    csv += fmt::format("{:.17g},{:.17g},{:.17g},{:.17g}\n", w.att, w.rep, att / n, rep / n);
  }
  write_text(dir / "front.csv", csv);
  std::cout << fmt::format("pareto-sweep: {} weightings written to {}\n", ws.size(), dir.string());
  return 0;
}

int cmd_sample(const Common& c, const std::string& ckpt, const std::string& data, const std::string& split, int n,
               double temp, const std::string& out) {
  const RunConfig cfg = c.load();
  if (n < 0) throw ConfigError("--n must be >= 0");
  if (!(temp > 0.0)) throw ConfigError("--temp must be positive");
  const fs::path path(out);
  refuse_existing(path, c.force);
  const Checkpoint ck = load_matching(ckpt, cfg);
  const Dataset ds = load_dataset(data);
  std::vector<Design> designs;
  std::vector<CdrSpan> spans;
  for (const auto* e : ds.subset(split))
    for (int j = 0; j < n; ++j) {
      Design d = sample_cdr(ck.model, e->complex, temp,
                            Rng::derive_seed(cfg.seed, fmt::format("sample/{}/{}", e->complex.id, j)));
      d.energies = cdr_ag_energies(e->complex, d.cdr, cfg.energy);
      designs.push_back(std::move(d));
      spans.push_back(e->complex.cdr_span);
    }
  std::ostringstream os;
  write_designs(os, designs, spans, config_hash(cfg));
  write_text(path, os.str());
  std::cout << fmt::format("wrote {} designs to {}\n", designs.size(), path.string());
  return 0;
}

int cmd_eval(const Common& c, const std::string& designs_path, const std::string& refs, const std::string& label,
             const std::string& out) {
  const RunConfig cfg = c.load();
  const fs::path path(out);
  refuse_existing(path, c.force);
  const std::vector<Design> designs = read_designs(designs_path);
  const std::vector<DatasetEntry> entries = fs::is_directory(refs) ? load_dataset(refs).entries : read_dataset(refs);
  std::map<std::string, const DatasetEntry*> by_id;
  for (const auto& e : entries) by_id[e.complex.id] = &e;
  std::vector<std::string> order;
  std::map<std::string, std::vector<Design>> groups;
  for (const auto& d : designs) {
    auto it = by_id.find(d.complex_id);
    if (it == by_id.end()) throw DataError(fmt::format("design for unknown complex {}", d.complex_id));
    Design dd = d;
    if (!dd.energies) dd.energies = cdr_ag_energies(it->second->complex, dd.cdr, cfg.energy);
    if (!groups.count(d.complex_id)) order.push_back(d.complex_id);
    groups[d.complex_id].push_back(std::move(dd));
  }
  std::vector<MetricRow> rows;
  for (const auto& id : order) {
    const DatasetEntry& e = *by_id.at(id);
    if (!e.reference) throw DataError(fmt::format("complex {} has no reference CDR", id));
    const EnergyReport ref = e.reference->energies ? *e.reference->energies
                                                   : cdr_ag_energies(e.complex, e.reference->cdr, cfg.energy);
    rows.push_back(metric_row(label, groups[id], ref));
  }
  std::ostringstream os;
  os << "# entropy: pooled over positions, bits; config_hash " << config_hash(cfg) << "\n";
  write_metrics_csv(os, rows);
  write_text(path, os.str());
  std::cout << fmt::format("evaluated {} designs over {} complexes\n", designs.size(), rows.size());
  return 0;
}

int cmd_config(const Common& c) {
  std::cout << config_to_json(c.load()).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"abd: diffusion-based CDR design with multi-objective preference alignment"};
  app.require_subcommand(1);
  app.footer(
      "Config keys (JSON sections, overridable with --set section.key=value):\n"
      "  seed                        root seed; every stage derives named substreams from it\n"
      "  schedule.steps/offset       number of diffusion steps T and cosine offset s\n"
      "  model.*                     denoiser widths, depth, neighbor count K, length scale\n"
      "  data.n_complexes            complexes generated by gen-data\n"
      "  data.n_antigen_res/cdr_len  antigen residues and CDR length m\n"
      "  data.anchor_gap/box_scale   anchor spacing and anchor-to-epitope distance (Angstrom)\n"
      "  data.anneal_*               reference annealing steps and temperatures\n"
      "  train.pretrain_steps/lr     masked-recovery pre-training of the context encoder\n"
      "  train.steps/batch/lr        diffusion training (encoder frozen)\n"
      "  align.beta                  KL regularization strength (default 100)\n"
      "  align.weights               att:rep objective ratio (default 1:3)\n"
      "  align.iterations            online alignment rounds (default 3)\n"
      "  align.prompts_per_iter      complexes sampled per round\n"
      "  align.samples_per_prompt    designs sampled per complex per round\n"
      "  align.steps_per_iter        optimizer steps per round\n"
      "  align.batch_pairs           preference pairs per optimizer step\n"
      "  align.temp0/temp_decay      sampling temperature 1 + (temp0-1)*decay^k at round k\n"
      "  align.lr/clip_norm          Adam learning rate and gradient-norm clip\n"
      "  align.val_samples           validation samples per complex for policy selection\n"
      "  align.use_margin            false disables the reward margin (plain DPO)\n"
      "  eval.samples/temperature    samples per complex for pareto-sweep fronts\n"
      "  energy.*                    pair potential sigma, caps, switch and cutoff radii\n"
      "Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.");

  Common common;
  std::string out, data, ref, ckpt, init, weights = "1:1,1:3,3:1", split = "test", designs, refs, label = "model";
  int n = 1;
  double temp = 1.0;

  auto* gen = app.add_subcommand("gen-data", "Generate complexes, annealed references and the split manifest");
  add_common(gen, common);
  gen->add_option("--out", out, "Output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Pre-train the context encoder by masked CDR recovery");
  auto* train = app.add_subcommand("train", "Pre-train the encoder, then train the diffusion model");
  for (auto* cmd : {pre, train}) {
    add_common(cmd, common);
    cmd->add_option("--data", data, "Dataset directory from gen-data")->required();
    cmd->add_option("--out", out, "Checkpoint directory")->required();
  }
  train->add_option("--init", init, "Start from this checkpoint instead of pre-training");

  auto* align = app.add_subcommand("align", "Iterative preference alignment against a reference checkpoint");
  add_common(align, common);
  align->add_option("--data", data, "Dataset directory")->required();
  align->add_option("--ref", ref, "Reference checkpoint")->required();
  align->add_option("--out", out, "Output directory")->required();

  auto* sweep = app.add_subcommand("pareto-sweep", "Align once per weighting and write the energy front");
  add_common(sweep, common);
  sweep->add_option("--data", data, "Dataset directory")->required();
  sweep->add_option("--ref", ref, "Reference checkpoint")->required();
  sweep->add_option("--out", out, "Output directory")->required();
  sweep->add_option("--weights", weights, "Comma-separated att:rep ratios")->capture_default_str();

  auto* samp = app.add_subcommand("sample", "Sample designs with energies as JSON lines");
  add_common(samp, common);
  samp->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  samp->add_option("--data", data, "Dataset directory")->required();
  samp->add_option("--split", split, "train, val, test or all")->capture_default_str();
  samp->add_option("--n", n, "Designs per complex")->capture_default_str();
  samp->add_option("--temp", temp, "Type sampling temperature")->capture_default_str();
  samp->add_option("--out", out, "Output file")->required();

  auto* ev = app.add_subcommand("eval", "Top-1/average energies, gaps and entropy per complex");
  add_common(ev, common);
  ev->add_option("--designs", designs, "Designs file from sample")->required();
  ev->add_option("--refs", refs, "Dataset directory or dataset file with references")->required();
  ev->add_option("--label", label, "method_label column")->capture_default_str();
  ev->add_option("--out", out, "Output CSV")->required();

  auto* cfg = app.add_subcommand("config", "Print the effective configuration");
  add_common(cfg, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(common, out);
    if (*pre) return cmd_train(common, data, out, "", true);
    if (*train) return cmd_train(common, data, out, init, false);
    if (*align) return cmd_align(common, data, ref, out);
    if (*sweep) return cmd_pareto(common, data, ref, out, weights);
    if (*samp) return cmd_sample(common, ckpt, data, split, n, temp, out);
    if (*ev) return cmd_eval(common, designs, refs, label, out);
    if (*cfg) return cmd_config(common);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
