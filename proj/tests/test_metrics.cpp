#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ccsd/metrics.hpp"
#include "ccsd/rng.hpp"

using namespace ccsd;

TEST_CASE("dice fixtures and symmetry") {
  std::vector<uint8_t> a{1, 1, 0, 0}, b{1, 1, 0, 0};
  CHECK(dice(a, b) == 1.0);

  std::vector<uint8_t> c{1, 1, 0, 0}, d{0, 0, 1, 1};
  CHECK(dice(c, d) == 0.0);

  // |pred| = 2, |gt| = 2, overlap 1 -> 0.5.
  std::vector<uint8_t> e{1, 1, 0, 0}, f{0, 1, 1, 0};
  CHECK(dice(e, f) == 0.5);

  std::vector<uint8_t> zero(4, 0);
  CHECK(dice(zero, zero) == 1.0);

  Rng rng(3);
  for (int iter = 0; iter < 50; ++iter) {
    std::vector<uint8_t> u(16), v(16);
    for (size_t i = 0; i < 16; ++i) {
      u[i] = rng.uniform_int(2);
      v[i] = rng.uniform_int(2);
    }
    CHECK(dice(u, v) == dice(v, u));
  }

  std::vector<uint8_t> wrong(3, 0);
  CHECK_THROWS_AS(dice(a, wrong), std::invalid_argument);
}

TEST_CASE("region masks") {
  auto regions = default_regions();
  REQUIRE(regions.size() == 3);

  LabelVolume zeros({1, 1, 2, 2});
  auto wt0 = region_mask(zeros, regions[0]);
  for (auto v : wt0) CHECK(v == 0);

  // Nesting ET <= TC <= WT for any labelmap, and histogram counts.
  Rng rng(5);
  LabelVolume lm({1, 2, 4, 4});
  std::map<int, int> hist;
  for (auto& l : lm.data) {
    l = static_cast<int32_t>(rng.uniform_int(4));
    hist[l]++;
  }
  auto wt = region_mask(lm, regions[0]);
  auto tc = region_mask(lm, regions[1]);
  auto et = region_mask(lm, regions[2]);
  int nwt = 0, ntc = 0, net_ = 0;
  for (size_t i = 0; i < wt.size(); ++i) {
    CHECK(et[i] <= tc[i]);
    CHECK(tc[i] <= wt[i]);
    nwt += wt[i];
    ntc += tc[i];
    net_ += et[i];
  }
  CHECK(nwt == hist[1] + hist[2] + hist[3]);
  CHECK(ntc == hist[2] + hist[3]);
  CHECK(net_ == hist[3]);
}

TEST_CASE("argmax labels") {
  Tensor x({1, 3, 1, 1, 2});
  // voxel 0: class 2 wins; voxel 1: tie between 0 and 1 -> lowest index.
  x.at({0, 0, 0, 0, 0}) = 0.1;
  x.at({0, 1, 0, 0, 0}) = 0.2;
  x.at({0, 2, 0, 0, 0}) = 0.7;
  x.at({0, 0, 0, 0, 1}) = 0.4;
  x.at({0, 1, 0, 0, 1}) = 0.4;
  x.at({0, 2, 0, 0, 1}) = 0.2;
  auto l = argmax_labels(x);
  CHECK(l.data[0] == 2);
  CHECK(l.data[1] == 0);
}

namespace {

EvalTable make_table(int n, const std::function<double(ModalityCombo, int)>& fill) {
  EvalTable t;
  t.lattice = enumerate_combos(n);
  t.region_names = {"WT", "TC", "ET"};
  for (auto c : t.lattice.all_combos)
    t.rows.push_back({fill(c, 0), fill(c, 1), fill(c, 2)});
  t.recompute_averages();
  return t;
}

}  // namespace

TEST_CASE("robustness curve") {
  // Constant table -> constant curve.
  auto flat = make_table(4, [](ModalityCombo, int) { return 0.6; });
  auto c0 = robustness_curve(flat, 0);
  for (double d : c0.mean_dice) CHECK(d == doctest::Approx(0.6));

  // Group cardinalities at N=4 are (4, 6, 4, 1).
  CHECK(c0.counts == std::vector<int>{1, 2, 3, 4});
  int sizes[5] = {0, 0, 0, 0, 0};
  for (auto c : flat.lattice.all_combos) sizes[c.size()]++;
  CHECK(sizes[1] == 4);
  CHECK(sizes[2] == 6);
  CHECK(sizes[3] == 4);
  CHECK(sizes[4] == 1);

  // Hand-filled table: means match an independent group-by.
  Rng rng(7);
  std::map<uint32_t, double> values;
  auto rnd = make_table(4, [&](ModalityCombo c, int r) {
    if (r == 0) values[c.bits] = rng.uniform(0, 1);
    return values[c.bits] + 0.001 * r;
  });
  for (int r = 0; r < 3; ++r) {
    auto curve = robustness_curve(rnd, r);
    std::map<int, std::pair<double, int>> groups;
    for (auto c : rnd.lattice.all_combos) {
      groups[c.size()].first += values[c.bits] + 0.001 * r;
      groups[c.size()].second += 1;
    }
    for (size_t i = 0; i < curve.counts.size(); ++i) {
      auto [sum, cnt] = groups[curve.counts[i]];
      CHECK(curve.mean_dice[i] == doctest::Approx(sum / cnt).epsilon(1e-12));
    }
  }

  EvalTable incomplete = flat;
  incomplete.rows.pop_back();
  CHECK_THROWS_AS(robustness_curve(incomplete, 0), std::invalid_argument);
}

TEST_CASE("aurc") {
  RobustnessCurve flat{{1, 2, 3, 4}, {0.8, 0.8, 0.8, 0.8}};
  CHECK(aurc(flat) == doctest::Approx(0.8));

  RobustnessCurve lin{{1, 2, 3, 4}, {0.6, 0.7, 0.8, 0.9}};
  CHECK(std::abs(aurc(lin) - 0.75) < 1e-9);
  CHECK(aurc_raw(lin) == doctest::Approx(2.25));

  // Permuted x keys are rejected; single-point curves are undefined.
  RobustnessCurve perm{{2, 1, 3, 4}, {0.6, 0.7, 0.8, 0.9}};
  CHECK_THROWS_AS(aurc(perm), std::invalid_argument);
  RobustnessCurve one{{1}, {0.5}};
  CHECK_THROWS_AS(aurc(one), std::invalid_argument);

  // Raising any point strictly increases AURC.
  Rng rng(11);
  for (int iter = 0; iter < 50; ++iter) {
    RobustnessCurve c{{1, 2, 3, 4},
                      {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1),
                       rng.uniform(0, 1)}};
    const double base = aurc(c);
    const size_t i = rng.uniform_int(4);
    c.mean_dice[i] += 0.05;
    CHECK(aurc(c) > base);
  }
}

TEST_CASE("table averages and CSV output") {
  Rng rng(13);
  auto table = make_table(4, [&](ModalityCombo, int) { return rng.uniform(0, 1); });

  // Averages equal the brute-force mean of rows.
  for (int r = 0; r < 3; ++r) {
    double sum = 0;
    for (const auto& row : table.rows) sum += row[static_cast<size_t>(r)];
    CHECK(table.averages[static_cast<size_t>(r)] ==
          doctest::Approx(sum / 15.0).epsilon(1e-12));
  }

  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "ccsd_metrics_test";
  fs::create_directories(dir);

  write_eval_table_csv((dir / "eval_table.csv").string(), table);
  write_robustness_csv((dir / "robustness_curve.csv").string(), table);
  write_aurc_csv((dir / "aurc.csv").string(), table);

  std::ifstream f(dir / "eval_table.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "combo,WT,TC,ET");
  int rows = 0;
  std::string last;
  while (std::getline(f, line))
    if (!line.empty()) {
      last = line;
      ++rows;
    }
  CHECK(rows == 16);  // 15 combos + Avg.
  CHECK(last.substr(0, 5) == "Avg.,");

  // Byte-identical regeneration.
  write_eval_table_csv((dir / "eval_table2.csv").string(), table);
  std::ifstream a(dir / "eval_table.csv", std::ios::binary), b(dir / "eval_table2.csv",
                                                               std::ios::binary);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());

  std::ifstream rc(dir / "robustness_curve.csv");
  std::getline(rc, line);
  CHECK(line == "count,WT,TC,ET");
  std::vector<std::string> xs;
  while (std::getline(rc, line))
    if (!line.empty()) xs.push_back(line.substr(0, line.find(',')));
  CHECK(xs == std::vector<std::string>{"1", "2", "3", "4"});

  std::ifstream ac(dir / "aurc.csv");
  std::getline(ac, line);
  CHECK(line == "region,aurc,raw_area");
}
