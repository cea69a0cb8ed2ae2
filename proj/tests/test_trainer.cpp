#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ccsd/trainer.hpp"

using namespace ccsd;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_cfg(uint64_t seed = 4242) {
  TrainConfig c;
  c.data.n_modalities = 2;
  c.data.volume_size = {1, 16, 16};
  c.data.n_cases = 6;
  c.data.noise_std = 0.05;
  c.data.seed = seed;
  c.seed = seed;
  c.fractions = {0.66, 0.17, 0.17};  // 4 / 1 / 1
  c.net.base_channels = 4;
  c.net.depth = 2;
  c.net.n_classes = 4;
  c.net.feature_channels = 4;
  c.epochs = 2;
  c.batch_size = 2;
  c.eval_every = 1;
  c.lr = 5e-3;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "ccsd_trainer_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("cosine annealing schedule endpoints") {
  CHECK(cosine_lr(0, 100, 1e-2, 1e-5) == doctest::Approx(1e-2).epsilon(1e-15));
  CHECK(cosine_lr(100, 100, 1e-2, 1e-5) == doctest::Approx(1e-5).epsilon(1e-15));
  CHECK(cosine_lr(50, 100, 1e-2, 1e-5) ==
        doctest::Approx(1e-5 + 0.5 * (1e-2 - 1e-5)).epsilon(1e-12));
  // Monotone decrease across epochs.
  for (int e = 1; e <= 100; ++e) CHECK(cosine_lr(e, 100, 1e-2, 1e-5) < cosine_lr(e - 1, 100, 1e-2, 1e-5));
}

TEST_CASE("adam minimizes a quadratic") {
  ad::ParamT<double> x("x", Tensor::scalar(5.0));
  Adam<double> adam;
  std::vector<ad::ParamT<double>*> params{&x};
  for (int i = 0; i < 400; ++i) {
    x.zero_grad();
    x.grad[0] = 2.0 * (x.value[0] - 3.0);
    adam.step(params, 0.05);
  }
  CHECK(x.value[0] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("training runs are reproducible and disabled losses stay zero") {
  auto cfg = tiny_cfg();
  cfg.distill.hmsd_weight = 0;
  cfg.distill.dmcd_weight = 0;

  auto d1 = fresh_dir("plain1");
  auto d2 = fresh_dir("plain2");
  RunRecord r1 = train(cfg, d1.string());
  RunRecord r2 = train(cfg, d2.string());

  // Disabled terms are exactly zero in every logged step.
  std::ifstream log(d1 / "loss_log.csv");
  std::string line;
  std::getline(log, line);
  CHECK(line == "step,seg,hmsd,dmcd,total,k,path");
  int rows = 0;
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string step, seg, hmsd, dmcd;
    std::getline(is, step, ',');
    std::getline(is, seg, ',');
    std::getline(is, hmsd, ',');
    std::getline(is, dmcd, ',');
    CHECK(hmsd == "0");
    CHECK(dmcd == "0");
    ++rows;
  }
  CHECK(rows == 4);  // 2 epochs x 2 steps

  // Same seed, same trace and same outputs.
  REQUIRE(r1.epochs.size() == r2.epochs.size());
  for (size_t i = 0; i < r1.epochs.size(); ++i) {
    CHECK(std::abs(r1.epochs[i].total - r2.epochs[i].total) <= 1e-6);
    CHECK(r1.epochs[i].seg == r2.epochs[i].seg);
  }
  CHECK(slurp(d1 / "loss_log.csv") == slurp(d2 / "loss_log.csv"));
  CHECK(slurp(d1 / "eval_table.csv") == slurp(d2 / "eval_table.csv"));
  // Records agree on everything except wall-clock time.
  auto ja = nlohmann::ordered_json::parse(slurp(d1 / "run_record.json"));
  auto jb = nlohmann::ordered_json::parse(slurp(d2 / "run_record.json"));
  ja["wall_seconds"] = jb["wall_seconds"] = 0.0;
  CHECK(ja.dump() == jb.dump());

  // Partial-combo evaluation ran even with distillation off: full lattice.
  CHECK(r1.test_table.rows.size() == 3);
  for (const auto& row : r1.test_table.rows)
    for (double v : row) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }

  // Run record reloads byte-identically.
  RunRecord loaded = RunRecord::load((d1 / "run_record.json").string());
  loaded.save((d1 / "run_record_2.json").string());
  CHECK(slurp(d1 / "run_record.json") == slurp(d1 / "run_record_2.json"));
}

TEST_CASE("distillation run logs k and path and writes aurc") {
  auto cfg = tiny_cfg(777);
  auto dir = fresh_dir("distill");
  RunRecord rec = train(cfg, dir.string());

  std::ifstream log(dir / "loss_log.csv");
  std::string line;
  std::getline(log, line);
  bool saw_path = false;
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    // k column is 1 at N=2; path column is "12->x".
    auto last_comma = line.rfind(',');
    std::string path = line.substr(last_comma + 1);
    if (path.rfind("12->", 0) == 0) saw_path = true;
  }
  CHECK(saw_path);
  CHECK(rec.aurc_by_region.size() == 3);
  CHECK(fs::exists(dir / "aurc.csv"));
  CHECK(fs::exists(dir / "robustness_curve.csv"));
  CHECK(fs::exists(dir / "ckpt.bin"));
  CHECK(fs::exists(dir / "ckpt.meta"));
  CHECK(rec.steps == 4);
  CHECK(!rec.aborted);

  // Checkpoint round-trip: reload and evaluate equals the recorded table.
  Dataset ds = load_dataset(cfg);
  std::vector<MultiModalCase> test_cases;
  for (int i : ds.split.test) test_cases.push_back(ds.cases[static_cast<size_t>(i)]);
  EvalTable again = evaluate_checkpoint((dir / "ckpt").string(), cfg, test_cases);
  REQUIRE(again.rows.size() == rec.test_table.rows.size());
  for (size_t i = 0; i < again.rows.size(); ++i)
    for (size_t r = 0; r < again.rows[i].size(); ++r)
      CHECK(std::abs(again.rows[i][r] - rec.test_table.rows[i][r]) <= 1e-6);

  // And twice more, identically.
  EvalTable third = evaluate_checkpoint((dir / "ckpt").string(), cfg, test_cases);
  CHECK(third.rows == again.rows);

  // A mismatched data config is refused with an explanation.
  TrainConfig other = cfg;
  other.data.n_modalities = 3;
  std::vector<MultiModalCase> other_cases;
  Dataset ds3 = load_dataset(other);
  for (int i : ds3.split.test) other_cases.push_back(ds3.cases[static_cast<size_t>(i)]);
  CHECK_THROWS_WITH_AS(evaluate_checkpoint((dir / "ckpt").string(), other, other_cases),
                       doctest::Contains("checkpoint config mismatch"), std::runtime_error);
}

TEST_CASE("evaluate structure on an untrained model") {
  auto cfg = tiny_cfg(31337);
  cfg.data.n_modalities = 4;
  cfg.data.n_cases = 6;
  Dataset ds = load_dataset(cfg);
  SsNetF net(cfg.net_for_data(), 1);
  std::vector<MultiModalCase> cases{ds.cases[0], ds.cases[1]};
  EvalTable t = evaluate(net, cases);
  CHECK(t.rows.size() == 15);
  CHECK(t.region_names == std::vector<std::string>{"WT", "TC", "ET"});
  // Full-combo row sits in the canonical last position.
  CHECK(combo_label(t.lattice.all_combos.back()) == "1234");
  for (const auto& row : t.rows)
    for (double v : row) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  CHECK_THROWS_AS(evaluate(net, {}), std::invalid_argument);
}

TEST_CASE("ablation runner structure (k1k2 axis, one seed)") {
  auto cfg = tiny_cfg();
  cfg.data.volume_size = {1, 8, 8};
  cfg.data.n_cases = 5;
  cfg.fractions = {0.6, 0.2, 0.2};
  cfg.epochs = 1;
  auto dir = fresh_dir("ablate");
  AblationReport rep = ablate(cfg, AblationAxis::k1k2, {1}, dir.string());

  REQUIRE(rep.runs.size() == 4);
  CHECK(rep.dice_summary.size() == 4);
  CHECK(rep.dice_summary.count("both") == 1);
  CHECK(rep.dice_summary.count("k1_only") == 1);
  CHECK(rep.dice_summary.count("k2_only") == 1);
  CHECK(rep.dice_summary.count("neither") == 1);
  CHECK(fs::exists(dir / "ablation_report.csv"));
  CHECK(fs::exists(dir / "ablation_report.json"));
  CHECK(fs::exists(dir / "both" / "seed_1" / "run_record.json"));
  // Spread over a single seed is zero.
  for (const auto& [name, ms] : rep.dice_summary) CHECK(ms.second == 0.0);

  CHECK(parse_ablation_axis("carrier") == AblationAxis::carrier);
  CHECK_THROWS_AS(parse_ablation_axis("nope"), std::invalid_argument);
}
