#include "abd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "abd/config.hpp"
#include "abd/errors.hpp"

namespace abd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
  return r;
}

}  // namespace

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
  const auto& p = ckpt.model.params;
  if (!p.store.all_finite()) throw NumericError("refusing to save non-finite parameters");
  fs::create_directories(dir);
  json m;
  m["format"] = "abd-checkpoint-1";
  m["config_hash"] = ckpt.model_hash;
  RunConfig rc;
  rc.model = p.config;
  rc.schedule_steps = ckpt.model.schedule.steps();
  rc.schedule_offset = ckpt.model.schedule.offset();
  const json cj = config_to_json(rc);
  m["model"] = cj["model"];
  m["schedule"] = cj["schedule"];
  const auto& betas = ckpt.model.schedule.betas();
  m["betas"] = std::vector<double>(betas.begin() + 1, betas.end());
  json params = json::array();
  for (int i = 0; i < p.store.count(); ++i)
    params.push_back({{"name", p.store.name(i)}, {"rows", p.store.rows(i)}, {"cols", p.store.cols(i)}});
  m["params"] = params;
  m["rng_state"] = ckpt.rng_state;
  m["blob"] = "params.bin";

  const std::vector<double> flat = p.store.flatten();
  std::string blob(flat.size() * 8, '\0');
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(flat[i]));
    std::memcpy(blob.data() + 8 * i, &bits, 8);
  }
  std::ofstream(fs::path(dir) / "params.bin", std::ios::binary) << blob;
  std::ofstream(fs::path(dir) / "manifest.json", std::ios::binary) << m.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream mis(mpath, std::ios::binary);
  if (!mis) throw DataError(fmt::format("checkpoint manifest {} not found", mpath.string()));
  std::stringstream ss;
  ss << mis.rdbuf();
  const json m = json::parse(ss.str(), nullptr, false);
  if (m.is_discarded() || !m.is_object() || m.value("format", "") != "abd-checkpoint-1")
    throw DataError(fmt::format("{}: not a checkpoint manifest", mpath.string()));

  Checkpoint ck;
  RunConfig rc;
  try {
    rc = config_from_json({{"model", m.at("model")}, {"schedule", m.at("schedule")}});
    ck.model_hash = m.at("config_hash").get<std::string>();
    ck.rng_state = m.value("rng_state", "");
  } catch (const std::exception& e) {
    throw DataError(fmt::format("{}: {}", mpath.string(), e.what()));
  }
  if (ck.model_hash != model_hash(rc))
    throw DataError(fmt::format("{}: config hash does not match the stored architecture", mpath.string()));

  Rng init(0);
  ck.model.params = DenoiserParams::init(rc.model, init);
  if (m.contains("betas")) {
    std::vector<double> betas;
    try {
      betas = m.at("betas").get<std::vector<double>>();
    } catch (const std::exception& e) {
      throw DataError(fmt::format("{}: betas: {}", mpath.string(), e.what()));
    }
    if (static_cast<int>(betas.size()) != rc.schedule_steps)
      throw DataError(fmt::format("{}: expected {} betas, found {}", mpath.string(), rc.schedule_steps, betas.size()));
    betas.insert(betas.begin(), 0.0);
    ck.model.schedule = NoiseSchedule::from_betas(std::move(betas), rc.schedule_offset);
  } else {
    ck.model.schedule = NoiseSchedule::cosine(rc.schedule_steps, rc.schedule_offset);
  }
  const auto& store = ck.model.params.store;
  const json& params = m.at("params");
  if (!params.is_array() || static_cast<int>(params.size()) != store.count())
    throw DataError(fmt::format("{}: parameter list does not match the architecture", mpath.string()));
  for (int i = 0; i < store.count(); ++i) {
    const json& e = params[i];
    if (e.value("name", "") != store.name(i) || e.value("rows", -1) != store.rows(i) || e.value("cols", -1) != store.cols(i))
      throw DataError(fmt::format("{}: parameter {} does not match the architecture", mpath.string(), i));
  }

  const fs::path bpath = fs::path(dir) / m.value("blob", "params.bin");
  std::ifstream bis(bpath, std::ios::binary);
  if (!bis) throw DataError(fmt::format("checkpoint blob {} not found", bpath.string()));
  std::stringstream bs;
  bs << bis.rdbuf();
  const std::string blob = bs.str();
  if (blob.size() != store.total_size() * 8)
    throw DataError(fmt::format("{}: expected {} bytes, found {}", bpath.string(), store.total_size() * 8, blob.size()));
  std::vector<double> flat(store.total_size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, blob.data() + 8 * i, 8);
    flat[i] = std::bit_cast<double>(to_le(bits));
  }
  ck.model.params.store.assign_flat(flat);
  if (!ck.model.params.store.all_finite()) throw NumericError(fmt::format("{}: non-finite parameters", bpath.string()));
  return ck;
}

}  // namespace abd
