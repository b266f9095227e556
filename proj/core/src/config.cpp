#include "abd/config.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "abd/errors.hpp"

namespace abd {

using nlohmann::json;

void RunConfig::validate() const {
  if (schedule_steps < 1) throw ConfigError("schedule.steps must be >= 1");
  if (!(schedule_offset > 0.0)) throw ConfigError("schedule.offset must be positive");
  if (model.hidden < 1 || model.depth < 0 || model.neighbors < 1 || model.time_dim < 2 || model.time_dim % 2 ||
      model.enc_embed < 1 || model.enc_hidden < 1 || model.enc_out < 1 || model.enc_pos_dim < 2 ||
      model.enc_pos_dim % 2 || !(model.length_scale > 0.0))
    throw ConfigError("model: dimensions must be positive (time_dim and enc_pos_dim even)");
  if (model.steps != schedule_steps) throw ConfigError("model.steps must equal schedule.steps");
  if (data.n_complexes < 1) throw ConfigError("data.n_complexes must be >= 1");
  data.gen.validate();
  if (data.anneal.steps < 0) throw ConfigError("data.anneal_steps must be >= 0");
  if (train.pretrain_steps < 0 || train.steps < 0 || train.batch < 1) throw ConfigError("train: invalid step counts");
  if (!(train.lr > 0.0) || !(train.pretrain_lr > 0.0)) throw ConfigError("train: learning rates must be positive");
  align.validate();
  if (eval.samples < 0) throw ConfigError("eval.samples must be >= 0");
  if (!(eval.temperature > 0.0)) throw ConfigError("eval.temperature must be positive");
}

json config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["schedule"] = {{"steps", c.schedule_steps}, {"offset", c.schedule_offset}};
  j["model"] = {{"hidden", c.model.hidden},       {"depth", c.model.depth},
                {"neighbors", c.model.neighbors}, {"time_dim", c.model.time_dim},
                {"enc_embed", c.model.enc_embed}, {"enc_hidden", c.model.enc_hidden},
                {"enc_out", c.model.enc_out},     {"enc_pos_dim", c.model.enc_pos_dim},
                {"length_scale", c.model.length_scale}};
  j["data"] = {{"n_complexes", c.data.n_complexes},   {"n_antigen_res", c.data.gen.n_antigen_res},
               {"cdr_len", c.data.gen.cdr_len},        {"anchor_gap", c.data.gen.anchor_gap},
               {"box_scale", c.data.gen.box_scale},    {"anneal_steps", c.data.anneal.steps},
               {"anneal_temp_start", c.data.anneal.temp_start}, {"anneal_temp_end", c.data.anneal.temp_end}};
  j["train"] = {{"pretrain_steps", c.train.pretrain_steps}, {"pretrain_lr", c.train.pretrain_lr},
                {"steps", c.train.steps},                   {"batch", c.train.batch},
                {"lr", c.train.lr}};
  const AlignConfig& a = c.align;
  j["align"] = {{"beta", a.beta},
                {"weights", a.w.label()},
                {"iterations", a.iterations},
                {"prompts_per_iter", a.prompts_per_iter},
                {"samples_per_prompt", a.samples_per_prompt},
                {"steps_per_iter", a.steps_per_iter},
                {"batch_pairs", a.batch_pairs},
                {"temp0", a.temp0},
                {"temp_decay", a.temp_decay},
                {"lr", a.opt.lr},
                {"clip_norm", a.opt.clip_norm},
                {"val_samples", a.val_samples},
                {"val_temperature", a.val_temperature},
                {"use_margin", a.use_margin}};
  j["eval"] = {{"samples", c.eval.samples}, {"temperature", c.eval.temperature}};
  j["energy"] = {{"sigma", c.energy.sigma},       {"rep_cap", c.energy.rep_cap}, {"att_cap", c.energy.att_cap},
                 {"switch_on", c.energy.switch_on}, {"cutoff", c.energy.cutoff}};
  return j;
}

namespace {

template <class T>
void read(const json& section, const std::string& sname, const char* key, T& dst) {
  auto it = section.find(key);
  if (it == section.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError("expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError("expected a number");
    }
    dst = it->get<T>();
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("config key {}.{}: {}", sname, key, e.what()));
  }
}

void check_keys(const json& section, const std::string& sname, std::initializer_list<const char*> keys) {
  if (!section.is_object()) throw ConfigError(fmt::format("config section '{}' must be an object", sname));
  for (auto it = section.begin(); it != section.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(fmt::format("unknown config key {}.{}", sname, it.key()));
  }
}

const json& section(const json& j, const char* name) {
  static const json empty = json::object();
  auto it = j.find(name);
  return it == j.end() ? empty : *it;
}

}  // namespace

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  check_keys(j, "<root>", {"seed", "schedule", "model", "data", "train", "align", "eval", "energy"});
  RunConfig c;
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("config key seed: expected a nonnegative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  const json& s = section(j, "schedule");
  check_keys(s, "schedule", {"steps", "offset"});
  read(s, "schedule", "steps", c.schedule_steps);
  read(s, "schedule", "offset", c.schedule_offset);
  c.model.steps = c.schedule_steps;

  const json& m = section(j, "model");
  check_keys(m, "model", {"hidden", "depth", "neighbors", "time_dim", "enc_embed", "enc_hidden", "enc_out",
                          "enc_pos_dim", "length_scale"});
  read(m, "model", "hidden", c.model.hidden);
  read(m, "model", "depth", c.model.depth);
  read(m, "model", "neighbors", c.model.neighbors);
  read(m, "model", "time_dim", c.model.time_dim);
  read(m, "model", "enc_embed", c.model.enc_embed);
  read(m, "model", "enc_hidden", c.model.enc_hidden);
  read(m, "model", "enc_out", c.model.enc_out);
  read(m, "model", "enc_pos_dim", c.model.enc_pos_dim);
  read(m, "model", "length_scale", c.model.length_scale);

  const json& d = section(j, "data");
  check_keys(d, "data", {"n_complexes", "n_antigen_res", "cdr_len", "anchor_gap", "box_scale", "anneal_steps",
                         "anneal_temp_start", "anneal_temp_end"});
  read(d, "data", "n_complexes", c.data.n_complexes);
  read(d, "data", "n_antigen_res", c.data.gen.n_antigen_res);
  read(d, "data", "cdr_len", c.data.gen.cdr_len);
  read(d, "data", "anchor_gap", c.data.gen.anchor_gap);
  read(d, "data", "box_scale", c.data.gen.box_scale);
  read(d, "data", "anneal_steps", c.data.anneal.steps);
  read(d, "data", "anneal_temp_start", c.data.anneal.temp_start);
  read(d, "data", "anneal_temp_end", c.data.anneal.temp_end);

  const json& t = section(j, "train");
  check_keys(t, "train", {"pretrain_steps", "pretrain_lr", "steps", "batch", "lr"});
  read(t, "train", "pretrain_steps", c.train.pretrain_steps);
  read(t, "train", "pretrain_lr", c.train.pretrain_lr);
  read(t, "train", "steps", c.train.steps);
  read(t, "train", "batch", c.train.batch);
  read(t, "train", "lr", c.train.lr);

  const json& a = section(j, "align");
  check_keys(a, "align", {"beta", "weights", "iterations", "prompts_per_iter", "samples_per_prompt", "steps_per_iter",
                          "batch_pairs", "temp0", "temp_decay", "lr", "clip_norm", "val_samples", "val_temperature",
                          "use_margin"});
  read(a, "align", "beta", c.align.beta);
  if (a.contains("weights")) {
    if (!a["weights"].is_string()) throw ConfigError("config key align.weights: expected a string such as \"1:3\"");
    c.align.w = Weights::parse(a["weights"].get<std::string>());
  }
  read(a, "align", "iterations", c.align.iterations);
  read(a, "align", "prompts_per_iter", c.align.prompts_per_iter);
  read(a, "align", "samples_per_prompt", c.align.samples_per_prompt);
  read(a, "align", "steps_per_iter", c.align.steps_per_iter);
  read(a, "align", "batch_pairs", c.align.batch_pairs);
  read(a, "align", "temp0", c.align.temp0);
  read(a, "align", "temp_decay", c.align.temp_decay);
  read(a, "align", "lr", c.align.opt.lr);
  read(a, "align", "clip_norm", c.align.opt.clip_norm);
  read(a, "align", "val_samples", c.align.val_samples);
  read(a, "align", "val_temperature", c.align.val_temperature);
  read(a, "align", "use_margin", c.align.use_margin);

  const json& e = section(j, "eval");
  check_keys(e, "eval", {"samples", "temperature"});
  read(e, "eval", "samples", c.eval.samples);
  read(e, "eval", "temperature", c.eval.temperature);

  const json& en = section(j, "energy");
  check_keys(en, "energy", {"sigma", "rep_cap", "att_cap", "switch_on", "cutoff"});
  read(en, "energy", "sigma", c.energy.sigma);
  read(en, "energy", "rep_cap", c.energy.rep_cap);
  read(en, "energy", "att_cap", c.energy.att_cap);
  read(en, "energy", "switch_on", c.energy.switch_on);
  read(en, "energy", "cutoff", c.energy.cutoff);

  c.validate();
  return c;
}

std::pair<std::string, json> parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError(fmt::format("override '{}': expected key=value", text));
  const std::string key = text.substr(0, eq);
  const std::string raw = text.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  return {key, value};
}

RunConfig load_config(const std::string& path, const std::vector<std::pair<std::string, json>>& overrides) {
  json j = config_to_json(RunConfig{});
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError(fmt::format("cannot read config {}", path));
    std::stringstream ss;
    ss << is.rdbuf();
    json file = json::parse(ss.str(), nullptr, false);
    if (file.is_discarded() || !file.is_object()) throw ConfigError(fmt::format("config {} is not a JSON object", path));
    j.merge_patch(file);
  }
  for (const auto& [key, value] : overrides) {
    json* node = &j;
    std::size_t pos = 0;
    while (true) {
      const auto dot = key.find('.', pos);
      const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
      if (part.empty()) throw ConfigError(fmt::format("override key '{}' is malformed", key));
      if (dot == std::string::npos) {
        if (!node->is_object() || !node->contains(part)) throw ConfigError(fmt::format("unknown config key {}", key));
        (*node)[part] = value;
        break;
      }
      if (!node->contains(part) || !(*node)[part].is_object())
        throw ConfigError(fmt::format("unknown config section in {}", key));
      node = &(*node)[part];
      pos = dot + 1;
    }
  }
  return config_from_json(j);
}

std::string model_hash(const DenoiserConfig& model, int schedule_steps, double schedule_offset) {
  RunConfig c;
  c.model = model;
  c.schedule_steps = schedule_steps;
  c.schedule_offset = schedule_offset;
  const json j = config_to_json(c);
  const json part = {{"model", j["model"]}, {"schedule", j["schedule"]}};
  return fmt::format("{:016x}", fnv1a64(part.dump()));
}

std::string model_hash(const RunConfig& cfg) { return model_hash(cfg.model, cfg.schedule_steps, cfg.schedule_offset); }

std::string config_hash(const RunConfig& cfg) { return fmt::format("{:016x}", fnv1a64(config_to_json(cfg).dump())); }

}  // namespace abd
