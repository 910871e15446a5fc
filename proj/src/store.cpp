#include "ftcrl/store.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ftcrl::store {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path manifest_path(const fs::path& root) { return root / "manifest"; }

json load_manifest(const fs::path& root) {
  fs::path file = manifest_path(root);
  if (!fs::exists(file)) {
    return json{{"policies", json::array()}, {"runs", json::array()}};
  }
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open manifest at " + file.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw std::runtime_error("manifest at " + file.string() + " is corrupt: " + e.what());
  }
  return m;
}

void store_manifest(const fs::path& root, const json& m) {
  atomic_write(manifest_path(root), m.dump(2) + "\n");
}

const json* find_policy(const json& manifest, const std::string& id) {
  if (!manifest.contains("policies")) return nullptr;
  for (const json& p : manifest["policies"]) {
    if (p.value("id", "") == id) return &p;
  }
  return nullptr;
}

std::string timestamp_utc() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void atomic_write(const fs::path& file, const std::string& content) {
  if (!file.parent_path().empty()) fs::create_directories(file.parent_path());
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, file);
}

void init_store(const fs::path& root) {
  fs::create_directories(root / "policies");
  fs::create_directories(root / "runs");
  if (!fs::exists(manifest_path(root))) {
    store_manifest(root, json{{"policies", json::array()}, {"runs", json::array()}});
  }
}

std::string save_policy(const fs::path& root, const nn::ParameterVector& params,
                        const PolicyMeta& meta) {
  if (meta.id.empty()) throw std::invalid_argument("policy id must not be empty");
  params.validate();
  init_store(root);
  json manifest = load_manifest(root);
  if (find_policy(manifest, meta.id)) {
    throw std::invalid_argument("policy id '" + meta.id + "' already exists in the store");
  }
  std::string file_rel = "policies/" + meta.id + ".params";
  std::ostringstream body;
  nn::write_params(body, params);
  atomic_write(root / file_rel, body.str());
  manifest["policies"].push_back(json{{"id", meta.id},
                                      {"env", meta.env_kind},
                                      {"provenance", meta.provenance},
                                      {"trained_steps", meta.trained_steps},
                                      {"file", file_rel}});
  store_manifest(root, manifest);
  return meta.id;
}

bool has_policy(const fs::path& root, const std::string& id) {
  if (!fs::exists(manifest_path(root))) return false;
  json manifest = load_manifest(root);
  return find_policy(manifest, id) != nullptr;
}

nn::ParameterVector load_policy(const fs::path& root, const std::string& id) {
  json manifest = load_manifest(root);
  const json* p = find_policy(manifest, id);
  if (!p) throw std::runtime_error("policy '" + id + "' not found in store " + root.string());
  fs::path file = root / p->value("file", "");
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open parameter file " + file.string());
  return nn::read_params(in, file.string());
}

PolicyMeta policy_meta(const fs::path& root, const std::string& id) {
  json manifest = load_manifest(root);
  const json* p = find_policy(manifest, id);
  if (!p) throw std::runtime_error("policy '" + id + "' not found in store " + root.string());
  PolicyMeta meta;
  meta.id = p->value("id", "");
  meta.env_kind = p->value("env", "");
  meta.provenance = p->value("provenance", "");
  meta.trained_steps = p->value("trained_steps", 0L);
  return meta;
}

meta::PolicyComplement load_complement(const fs::path& root,
                                       std::span<const std::string> labels) {
  json manifest = load_manifest(root);
  std::vector<std::string> missing;
  meta::PolicyComplement complement;
  for (const std::string& label : labels) {
    const json* p = find_policy(manifest, label);
    if (!p) {
      missing.push_back(label);
      continue;
    }
    fs::path file = root / p->value("file", "");
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open parameter file " + file.string());
    meta::ComplementEntry entry;
    entry.params = nn::read_params(in, file.string());
    entry.provenance = p->value("provenance", label);
    entry.trained_steps = p->value("trained_steps", 0L);
    complement.entries.push_back(std::move(entry));
  }
  if (!missing.empty()) {
    std::string msg = "missing policies in store: " + missing.front();
    for (std::size_t i = 1; i < missing.size(); ++i) msg += ", " + missing[i];
    throw std::runtime_error(msg);
  }
  complement.validate();
  return complement;
}

void save_curated_set(const fs::path& root, std::span<const std::string> labels,
                      std::span<const double> d_totals) {
  if (labels.size() != d_totals.size()) {
    throw std::invalid_argument("labels and divergence totals must align");
  }
  json manifest = load_manifest(root);
  json entry;
  entry["labels"] = json::array();
  entry["d_total"] = json::array();
  for (const std::string& l : labels) entry["labels"].push_back(l);
  for (double d : d_totals) entry["d_total"].push_back(d);
  entry["curated_at"] = timestamp_utc();
  manifest["complement"] = entry;
  store_manifest(root, manifest);
}

std::vector<std::string> curated_labels(const fs::path& root) {
  json manifest = load_manifest(root);
  if (!manifest.contains("complement")) return {};
  std::vector<std::string> labels;
  for (const json& l : manifest["complement"]["labels"]) {
    labels.push_back(l.get<std::string>());
  }
  return labels;
}

void append_run_record(const fs::path& root, const RunRecord& record) {
  init_store(root);
  json manifest = load_manifest(root);
  for (const json& r : manifest["runs"]) {
    if (r.value("run_id", "") == record.run_id) {
      throw std::invalid_argument("run id '" + record.run_id + "' already exists");
    }
  }
  json r{{"run_id", record.run_id},
         {"env", record.env_kind},
         {"method", record.method},
         {"fault", record.fault_label},
         {"seed", record.seed},
         {"steps", record.steps},
         {"total_reward", record.total_reward},
         {"rewards_csv", "runs/" + record.run_id + "/rewards.csv"}};
  if (!record.config_json.empty()) r["config"] = json::parse(record.config_json);
  manifest["runs"].push_back(r);
  store_manifest(root, manifest);
}

bool has_run(const fs::path& root, const std::string& run_id) {
  if (!fs::exists(manifest_path(root))) return false;
  json manifest = load_manifest(root);
  for (const json& r : manifest["runs"]) {
    if (r.value("run_id", "") == run_id) return true;
  }
  return false;
}

fs::path run_dir(const fs::path& root, const std::string& run_id) {
  return root / "runs" / run_id;
}

void write_rewards_csv(const fs::path& file, std::span<const ppo::EpisodeLog> log) {
  std::ostringstream out;
  out << "step,episode,cumulative_reward\n";
  for (const ppo::EpisodeLog& row : log) {
    out << row.step << ',' << row.episode << ',' << nn::format_double(row.reward) << '\n';
  }
  atomic_write(file, out.str());
}

std::vector<ppo::EpisodeLog> read_rewards_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open rewards csv " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != "step,episode,cumulative_reward") {
    throw std::runtime_error(file.string() + ": unexpected csv header");
  }
  std::vector<ppo::EpisodeLog> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    ppo::EpisodeLog row;
    std::getline(ls, field, ',');
    row.step = std::stol(field);
    std::getline(ls, field, ',');
    row.episode = std::stol(field);
    std::getline(ls, field, ',');
    row.reward = nn::parse_double(field, file.string() + ": cumulative_reward");
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ftcrl::store
