#include "lead/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "lead/hashing.hpp"

namespace lead {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      {"seed", "1"},
      {"nodes", "10"},
      {"vnodes_per_node", "10"},
      {"topology", "uniform"},
      {"topology.lo", "10"},
      {"topology.hi", "100"},
      {"dataset", "lognormal"},
      {"dataset.count", "1000000"},
      {"dataset.take", "0"},
      {"dataset.mu", "0"},
      {"dataset.sigma", "2"},
      {"dataset.clusters", "5"},
      {"dataset.spread", "0.02"},
      {"model.family", "linear"},
      {"model.branching", "1024"},
      {"ranges", "500,2000,5000"},
      {"systems", "lead,chord100"},
      {"queries", "50"},
      {"seeds", "5"},
      {"lookups", "10000"},
      {"churn.family", "uniform,exponential,pareto"},
      {"churn.lifetime_min", "8"},
      {"churn.rejoin_min", "1"},
      {"churn.alpha", "2"},
      {"churn.horizon_min", "30"},
      {"churn.exit", "depart"},
      {"workload.interval_ms", "10000"},
      {"workload.n", "1000"},
      {"timers.stabilize_ms", "1000"},
      {"timers.heartbeat_ms", "500"},
      {"timers.failure_ms", "2000"},
      {"frm.enabled", "true"},
      {"frm.threshold", "0.4"},
      {"frm.quorum", "0.9"},
      {"frm.lr", "0.05"},
      {"update.fraction", "0.4"},
      {"update.rounds", "3"},
      {"update.drift_mu", "2"},
      {"update.drift_sigma", "1"},
      {"balance.ks", "1,2,5,10"},
      {"balance.nodes", "49"},
      {"balance.seeds", "10"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ExperimentConfig::ExperimentConfig() : values_(defaults()) {}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [key, _] : defaults()) out.push_back(key);
    return out;
  }();
  return k;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (!defaults().count(key)) throw Error("unknown-config-key", key);
  values_[key] = value;
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error("unknown-config-key", key);
  return it->second;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("invalid-config", "line " + std::to_string(lineno) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config-not-found", path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::int64_t ExperimentConfig::integer(const std::string& key) const {
  try {
    return static_cast<std::int64_t>(std::stoll(get(key)));
  } catch (const std::logic_error&) {
    throw Error("invalid-config", key + " = " + get(key));
  }
}

std::uint64_t ExperimentConfig::u64(const std::string& key) const {
  try {
    return std::stoull(get(key));
  } catch (const std::logic_error&) {
    throw Error("invalid-config", key + " = " + get(key));
  }
}

double ExperimentConfig::real(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::logic_error&) {
    throw Error("invalid-config", key + " = " + get(key));
  }
}

bool ExperimentConfig::flag(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("invalid-config", key + " = " + v);
}

std::vector<std::string> ExperimentConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

std::vector<std::int64_t> ExperimentConfig::int_list(const std::string& key) const {
  std::vector<std::int64_t> out;
  for (const auto& s : list(key)) {
    try {
      out.push_back(std::stoll(s));
    } catch (const std::logic_error&) {
      throw Error("invalid-config", key + " = " + get(key));
    }
  }
  return out;
}

std::string ExperimentConfig::snapshot() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string ExperimentConfig::run_id() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fmix64(fnv1a64(snapshot()))));
  return buf;
}

}  // namespace lead
