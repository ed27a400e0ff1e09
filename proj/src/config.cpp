#include "fedstab/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include "json.hpp"

#include "fedstab/io.hpp"

namespace fedstab::config {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::string_view where, std::set<std::string> allowed) {
  if (!j.is_object()) throw ValidationError(fmt::format("'{}' must be an object", where));
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ValidationError(fmt::format("unknown key '{}.{}'", where, key));
  }
}

std::size_t get_count(const json& j, std::string_view where, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ValidationError(fmt::format("'{}.{}' must be a non-negative integer", where, key));
  }
  return v.get<std::size_t>();
}

double get_real(const json& j, std::string_view where, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) throw ValidationError(fmt::format("'{}.{}' must be a number", where, key));
  return v.get<double>();
}

std::string get_string(const json& j, std::string_view where, const char* key,
                       std::string fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_string()) throw ValidationError(fmt::format("'{}.{}' must be a string", where, key));
  return v.get<std::string>();
}

std::vector<std::size_t> get_counts(const json& j, std::string_view where, const char* key) {
  std::vector<std::size_t> out;
  if (!j.contains(key)) return out;
  const json& v = j.at(key);
  if (!v.is_array()) throw ValidationError(fmt::format("'{}.{}' must be an array", where, key));
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<long long>() < 0) {
      throw ValidationError(fmt::format("'{}.{}' must hold non-negative integers", where, key));
    }
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

}  // namespace

ExperimentConfig parse(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  reject_unknown(root, "config",
                 {"schema_version", "data", "model", "train", "stability", "output", "sweep"});
  if (!root.contains("schema_version") || !root["schema_version"].is_number_integer()) {
    throw ValidationError("config needs an integer 'schema_version'");
  }
  if (root["schema_version"].get<int>() != kSchemaVersion) {
    throw ValidationError(fmt::format("unsupported schema_version {}, expected {}",
                                      root["schema_version"].get<int>(), kSchemaVersion));
  }
  for (const char* block : {"data", "model", "train"}) {
    if (!root.contains(block)) throw ValidationError(fmt::format("config needs a '{}' block", block));
  }

  ExperimentConfig cfg;
  const json& d = root["data"];
  reject_unknown(d, "data", {"d", "C", "clients", "total", "beta", "noise", "seed"});
  cfg.data.d = get_count(d, "data", "d", cfg.data.d);
  cfg.data.C = get_count(d, "data", "C", cfg.data.C);
  cfg.data.clients = get_count(d, "data", "clients", cfg.data.clients);
  cfg.data.total = get_count(d, "data", "total", cfg.data.total);
  cfg.data.beta = get_real(d, "data", "beta", cfg.data.beta);
  cfg.data.noise = get_real(d, "data", "noise", cfg.data.noise);
  cfg.data.seed = get_count(d, "data", "seed", cfg.data.seed);

  const json& m = root["model"];
  reject_unknown(m, "model", {"family", "hidden", "weight_decay", "init_scale"});
  cfg.model.family = model::parse_family(get_string(m, "model", "family", "logistic"));
  cfg.model.hidden = get_count(m, "model", "hidden", cfg.model.hidden);
  cfg.model.weight_decay = get_real(m, "model", "weight_decay", cfg.model.weight_decay);
  cfg.model.init_scale = get_real(m, "model", "init_scale", cfg.model.init_scale);

  const json& t = root["train"];
  reject_unknown(t, "train", {"T", "K", "n", "topology", "batch", "mu", "schedule", "alpha", "seed"});
  cfg.train.T = get_count(t, "train", "T", cfg.train.T);
  cfg.train.K = get_count(t, "train", "K", cfg.train.K);
  if (t.contains("n")) cfg.train.n = get_count(t, "train", "n", 0);
  if (t.contains("topology")) {
    cfg.train.topology = topology::parse_kind(get_string(t, "train", "topology", ""));
  }
  cfg.train.batch = get_count(t, "train", "batch", cfg.train.batch);
  if (t.contains("mu")) {
    if (t["mu"].is_string()) {
      if (t["mu"].get<std::string>() != "auto") {
        throw ValidationError("'train.mu' must be a number or \"auto\"");
      }
    } else {
      cfg.train.mu = get_real(t, "train", "mu", 0.0);
    }
  }
  cfg.train.schedule = engine::parse_schedule(get_string(t, "train", "schedule", "inverse_iteration"));
  if (t.contains("alpha")) cfg.train.alpha = get_real(t, "train", "alpha", 0.5);
  cfg.train.seed = get_count(t, "train", "seed", cfg.train.seed);

  if (root.contains("stability")) {
    const json& s = root["stability"];
    reject_unknown(s, "stability", {"seeds", "positions", "probe_size", "probe_count",
                                    "probe_radius", "zero_perturbation"});
    cfg.stability.seeds = get_count(s, "stability", "seeds", cfg.stability.seeds);
    cfg.stability.positions = get_count(s, "stability", "positions", cfg.stability.positions);
    cfg.stability.probe_size = get_count(s, "stability", "probe_size", cfg.stability.probe_size);
    cfg.stability.probe_count = get_count(s, "stability", "probe_count", cfg.stability.probe_count);
    cfg.stability.probe_radius = get_real(s, "stability", "probe_radius", cfg.stability.probe_radius);
    if (s.contains("zero_perturbation")) {
      if (!s["zero_perturbation"].is_boolean()) {
        throw ValidationError("'stability.zero_perturbation' must be a boolean");
      }
      cfg.stability.zero_perturbation = s["zero_perturbation"].get<bool>();
    }
  }

  if (root.contains("output")) {
    const json& o = root["output"];
    reject_unknown(o, "output", {"directory", "formats"});
    cfg.output.directory = get_string(o, "output", "directory", cfg.output.directory);
    if (o.contains("formats")) {
      if (!o["formats"].is_array()) throw ValidationError("'output.formats' must be an array");
      cfg.output.formats.clear();
      for (const auto& f : o["formats"]) {
        if (!f.is_string()) throw ValidationError("'output.formats' must hold strings");
        cfg.output.formats.push_back(f.get<std::string>());
      }
    }
  }

  if (root.contains("sweep")) {
    const json& s = root["sweep"];
    reject_unknown(s, "sweep", {"n_list", "kinds", "m_list", "fixed_S"});
    cfg.sweep.n_list = get_counts(s, "sweep", "n_list");
    cfg.sweep.m_list = get_counts(s, "sweep", "m_list");
    if (s.contains("fixed_S")) cfg.sweep.fixed_S = get_count(s, "sweep", "fixed_S", 0);
    if (s.contains("kinds")) {
      if (!s["kinds"].is_array()) throw ValidationError("'sweep.kinds' must be an array");
      for (const auto& k : s["kinds"]) {
        if (!k.is_string()) throw ValidationError("'sweep.kinds' must hold strings");
        cfg.sweep.kinds.push_back(topology::parse_kind(k.get<std::string>()));
      }
    }
  }

  validate(cfg);
  return cfg;
}

ExperimentConfig load(const std::filesystem::path& path) { return parse(io::read_text(path)); }

void validate(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  if (d.d < 1) throw ValidationError("data.d must be >= 1");
  if (d.C < 2) throw ValidationError("data.C must be >= 2");
  if (d.clients < 1) throw ValidationError("data.clients must be >= 1");
  if (d.total < d.C) throw ValidationError(fmt::format("data.total {} is below data.C {}", d.total, d.C));
  if (d.total < d.clients) {
    throw ValidationError(fmt::format("data.total {} cannot give {} clients one sample each",
                                      d.total, d.clients));
  }
  if (!(d.beta > 0.0)) throw ValidationError("data.beta must be > 0");
  if (!(d.noise >= 0.0)) throw ValidationError("data.noise must be >= 0");

  const auto& m = cfg.model;
  if (m.family == model::Family::mlp && m.hidden < 1) throw ValidationError("model.hidden must be >= 1 for mlp");
  if (!(m.weight_decay >= 0.0)) throw ValidationError("model.weight_decay must be >= 0");
  if (!(m.init_scale >= 0.0)) throw ValidationError("model.init_scale must be >= 0");

  const auto& t = cfg.train;
  if (t.T < 1 || t.K < 1 || t.batch < 1) throw ValidationError("train.T, train.K and train.batch must be >= 1");
  if (t.n.has_value() == t.topology.has_value()) {
    throw ValidationError("train needs exactly one of 'n' (cfl) or 'topology' (dfl)");
  }
  if (t.n && (*t.n < 1 || *t.n > d.clients)) {
    throw ValidationError(fmt::format("train.n must lie in [1, {}], got {}", d.clients, *t.n));
  }
  if (t.topology) topology::build(*t.topology, d.clients);
  if (t.mu && (!(*t.mu >= 0.0) || !std::isfinite(*t.mu))) throw ValidationError("train.mu must be >= 0");
  if (t.alpha && !(*t.alpha > 0.0 && *t.alpha < 1.0)) throw ValidationError("train.alpha must lie in (0, 1)");

  const auto& s = cfg.stability;
  if (s.seeds < 1 || s.positions < 1) throw ValidationError("stability.seeds and positions must be >= 1");
  if (s.probe_size < 1) throw ValidationError("stability.probe_size must be >= 1");
  if (s.probe_count < 100) throw ValidationError("stability.probe_count must be >= 100");
  if (!(s.probe_radius > 0.0)) throw ValidationError("stability.probe_radius must be > 0");

  for (const auto& f : cfg.output.formats) {
    if (f != "csv" && f != "json") throw ValidationError(fmt::format("unknown output format '{}'", f));
  }
  if (cfg.sweep.fixed_S && *cfg.sweep.fixed_S < 1) throw ValidationError("sweep.fixed_S must be >= 1");
}

std::string canonical(const ExperimentConfig& cfg) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["data"] = {{"d", cfg.data.d},           {"C", cfg.data.C},         {"clients", cfg.data.clients},
               {"total", cfg.data.total},   {"beta", cfg.data.beta},   {"noise", cfg.data.noise},
               {"seed", cfg.data.seed}};
  j["model"] = {{"family", std::string(model::to_string(cfg.model.family))},
                {"hidden", cfg.model.hidden},
                {"weight_decay", cfg.model.weight_decay},
                {"init_scale", cfg.model.init_scale}};
  json t = {{"T", cfg.train.T},
            {"K", cfg.train.K},
            {"batch", cfg.train.batch},
            {"schedule", std::string(engine::to_string(cfg.train.schedule))},
            {"seed", cfg.train.seed}};
  if (cfg.train.n) t["n"] = *cfg.train.n;
  if (cfg.train.topology) t["topology"] = std::string(topology::to_string(*cfg.train.topology));
  t["mu"] = cfg.train.mu ? json(*cfg.train.mu) : json("auto");
  if (cfg.train.alpha) t["alpha"] = *cfg.train.alpha;
  j["train"] = t;
  j["stability"] = {{"seeds", cfg.stability.seeds},
                    {"positions", cfg.stability.positions},
                    {"probe_size", cfg.stability.probe_size},
                    {"probe_count", cfg.stability.probe_count},
                    {"probe_radius", cfg.stability.probe_radius},
                    {"zero_perturbation", cfg.stability.zero_perturbation}};
  j["output"] = {{"directory", cfg.output.directory}, {"formats", cfg.output.formats}};
  json s = json::object();
  if (!cfg.sweep.n_list.empty()) s["n_list"] = cfg.sweep.n_list;
  if (!cfg.sweep.m_list.empty()) s["m_list"] = cfg.sweep.m_list;
  if (cfg.sweep.fixed_S) s["fixed_S"] = *cfg.sweep.fixed_S;
  if (!cfg.sweep.kinds.empty()) {
    json kinds = json::array();
    for (auto k : cfg.sweep.kinds) kinds.push_back(std::string(topology::to_string(k)));
    s["kinds"] = kinds;
  }
  j["sweep"] = s;
  return j.dump();
}

std::string hash(const ExperimentConfig& cfg) { return io::git_blob_hash(canonical(cfg)); }

}  // namespace fedstab::config
