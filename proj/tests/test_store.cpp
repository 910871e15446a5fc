#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <string>

#include "ftcrl/nn.hpp"
#include "ftcrl/rng.hpp"
#include "ftcrl/store.hpp"

using namespace ftcrl;
namespace fs = std::filesystem;
using nn::NetworkSpec;
using nn::ParameterVector;

namespace {

// Fresh store directory, removed when the case ends.
struct TempStore {
  fs::path root;

  TempStore() {
    static int counter = 0;
    root = fs::temp_directory_path() /
           ("ftcrl-store-test-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter++));
    fs::remove_all(root);
    store::init_store(root);
  }
  ~TempStore() { fs::remove_all(root); }
};

NetworkSpec spec_of(std::vector<int> sizes) {
  NetworkSpec s;
  s.layer_sizes = std::move(sizes);
  s.head = nn::OutputHead::sigmoid;
  return s;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("policies round-trip bit-exactly through the store") {
  TempStore store;
  const auto params = ParameterVector::random_init(spec_of({4, 16, 1}), 301);
  store::PolicyMeta meta;
  meta.id = "nominal";
  meta.env_kind = "cartpole";
  meta.provenance = "nominal";
  meta.trained_steps = 30000;
  CHECK(store::save_policy(store.root, params, meta) == "nominal");
  CHECK(store::has_policy(store.root, "nominal"));
  CHECK(!store::has_policy(store.root, "other"));

  const auto loaded = store::load_policy(store.root, "nominal");
  CHECK(loaded.spec == params.spec);
  CHECK(loaded.values == params.values);

  std::mt19937_64 gen(302);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> input(4);
    for (double& x : input) x = rng::uniform(gen, -3.0, 3.0);
    const auto a = nn::forward(params, input);
    const auto b = nn::forward(loaded, input);
    CHECK(a == b);
  }

  const auto back = store::policy_meta(store.root, "nominal");
  CHECK(back.env_kind == "cartpole");
  CHECK(back.provenance == "nominal");
  CHECK(back.trained_steps == 30000);
}

TEST_CASE("duplicate policy ids are rejected") {
  TempStore store;
  const auto params = ParameterVector::random_init(spec_of({4, 4, 1}), 303);
  store::PolicyMeta meta;
  meta.id = "p";
  store::save_policy(store.root, params, meta);
  CHECK_THROWS_WITH_AS(store::save_policy(store.root, params, meta),
                       doctest::Contains("already exists"), std::invalid_argument);
  meta.id = "";
  CHECK_THROWS_AS(store::save_policy(store.root, params, meta), std::invalid_argument);
}

TEST_CASE("loading a corrupted parameter file names the bad value") {
  TempStore store;
  const auto params = ParameterVector::random_init(spec_of({4, 4, 1}), 304);
  store::PolicyMeta meta;
  meta.id = "p";
  store::save_policy(store.root, params, meta);

  const fs::path file = store.root / "policies" / "p.params";
  REQUIRE(fs::exists(file));
  std::string text = slurp(file);
  const auto pos = text.find_last_of("0123456789");
  REQUIRE(pos != std::string::npos);
  text[pos] = '!';
  store::atomic_write(file, text);

  CHECK_THROWS_WITH_AS(store::load_policy(store.root, "p"), doctest::Contains("value"),
                       std::runtime_error);

  CHECK_THROWS_WITH_AS(store::load_policy(store.root, "ghost"),
                       doctest::Contains("'ghost' not found"), std::runtime_error);
}

TEST_CASE("complements load in label order with provenance intact") {
  TempStore store;
  const auto spec = spec_of({4, 6, 1});
  for (int i = 0; i < 4; ++i) {
    store::PolicyMeta meta;
    meta.id = "f" + std::to_string(i + 1);
    meta.provenance = meta.id;
    meta.trained_steps = 100 * (i + 1);
    store::save_policy(store.root, ParameterVector::random_init(spec, 310 + i), meta);
  }

  const std::vector<std::string> labels = {"f3", "f1", "f4"};
  const auto complement = store::load_complement(store.root, labels);
  REQUIRE(complement.size() == 3);
  CHECK(complement.entries[0].provenance == "f3");
  CHECK(complement.entries[1].provenance == "f1");
  CHECK(complement.entries[2].provenance == "f4");
  CHECK(complement.entries[0].trained_steps == 300);
  for (const auto& e : complement.entries) {
    CHECK(e.params.values == store::load_policy(store.root, e.provenance).values);
  }

  const auto empty = store::load_complement(store.root, std::vector<std::string>{});
  CHECK(empty.empty());
}

TEST_CASE("missing complement labels are reported by name") {
  TempStore store;
  const auto spec = spec_of({4, 6, 1});
  store::PolicyMeta meta;
  meta.id = "f1";
  store::save_policy(store.root, ParameterVector::random_init(spec, 320), meta);

  const std::vector<std::string> labels = {"f1", "f9", "f2"};
  CHECK_THROWS_WITH_AS(store::load_complement(store.root, labels),
                       doctest::Contains("f9, f2"), std::runtime_error);
}

TEST_CASE("mixed network topologies cannot form a complement") {
  TempStore store;
  store::PolicyMeta meta;
  meta.id = "small";
  store::save_policy(store.root, ParameterVector::random_init(spec_of({4, 4, 1}), 321), meta);
  meta.id = "large";
  store::save_policy(store.root, ParameterVector::random_init(spec_of({4, 8, 1}), 322), meta);

  const std::vector<std::string> labels = {"small", "large"};
  CHECK_THROWS_WITH_AS(store::load_complement(store.root, labels),
                       doctest::Contains("mixed"), std::invalid_argument);
}

TEST_CASE("the curated set round-trips labels in order") {
  TempStore store;
  const std::vector<std::string> labels = {"f7", "f1", "f5"};
  const std::vector<double> totals = {2.5, 1.25, 0.75};
  store::save_curated_set(store.root, labels, totals);
  CHECK(store::curated_labels(store.root) == labels);

  // Re-curation replaces the set.
  const std::vector<std::string> smaller = {"f2"};
  const std::vector<double> one = {0.5};
  store::save_curated_set(store.root, smaller, one);
  CHECK(store::curated_labels(store.root) == smaller);

  CHECK_THROWS_WITH_AS(store::save_curated_set(store.root, labels, one),
                       doctest::Contains("align"), std::invalid_argument);
}

TEST_CASE("run records enforce unique run ids") {
  TempStore store;
  store::RunRecord rec;
  rec.run_id = "nominal-s1";
  rec.env_kind = "cartpole";
  rec.method = "ppo";
  rec.seed = 1;
  rec.steps = 30000;
  rec.total_reward = 1234.5;
  CHECK(!store::has_run(store.root, rec.run_id));
  store::append_run_record(store.root, rec);
  CHECK(store::has_run(store.root, rec.run_id));
  CHECK_THROWS_WITH_AS(store::append_run_record(store.root, rec),
                       doctest::Contains("already exists"), std::invalid_argument);

  const fs::path dir = store::run_dir(store.root, rec.run_id);
  CHECK(dir == store.root / "runs" / "nominal-s1");
}

TEST_CASE("reward logs round-trip through csv exactly") {
  TempStore store;
  std::vector<ppo::EpisodeLog> log;
  log.push_back({212, 1, 212.0, 3});
  log.push_back({500, 2, 287.5, 7});
  log.push_back({623, 3, 1.0 / 3.0, 11});

  const fs::path file = store.root / "runs" / "r1" / "rewards.csv";
  store::write_rewards_csv(file, log);
  const std::string text = slurp(file);
  // Wall time stays out of the file so reruns are byte-identical.
  CHECK(text.substr(0, text.find('\n')) == "step,episode,cumulative_reward");

  const auto back = store::read_rewards_csv(file);
  REQUIRE(back.size() == log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(back[i].step == log[i].step);
    CHECK(back[i].episode == log[i].episode);
    CHECK(back[i].reward == log[i].reward);
  }

  store::atomic_write(file, "not,the,right,header\n1,2,3,4\n");
  CHECK_THROWS_WITH_AS(store::read_rewards_csv(file), doctest::Contains("header"),
                       std::runtime_error);
}

TEST_CASE("atomic writes leave no temporaries behind") {
  TempStore store;
  const fs::path file = store.root / "nested" / "deep" / "note.txt";
  store::atomic_write(file, "first");
  CHECK(slurp(file) == "first");
  store::atomic_write(file, "second");
  CHECK(slurp(file) == "second");

  int entries = 0;
  for (const auto& e : fs::directory_iterator(file.parent_path())) {
    ++entries;
    CHECK(e.path().filename() == "note.txt");
  }
  CHECK(entries == 1);
}
