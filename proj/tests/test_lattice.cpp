#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "ccsd/lattice.hpp"

using namespace ccsd;

namespace {

// Independent oracle: recursive powerset over member lists, empty set dropped.
void powerset_rec(int n, int next, std::vector<int>& cur, std::set<std::vector<int>>& out) {
  if (next == n) {
    if (!cur.empty()) out.insert(cur);
    return;
  }
  powerset_rec(n, next + 1, cur, out);
  cur.push_back(next);
  powerset_rec(n, next + 1, cur, out);
  cur.pop_back();
}

std::set<std::vector<int>> powerset_oracle(int n) {
  std::set<std::vector<int>> out;
  std::vector<int> cur;
  powerset_rec(n, 0, cur, out);
  return out;
}

long binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  long r = 1;
  for (int i = 0; i < k; ++i) r = r * (n - i) / (i + 1);
  return r;
}

}  // namespace

TEST_CASE("enumerate_combos counts and contents") {
  CHECK(enumerate_combos(4).all_combos.size() == 15);
  CHECK(enumerate_combos(1).all_combos.size() == 1);
  CHECK(enumerate_combos(1).all_combos[0] == ModalityCombo::single(0));

  auto lat = enumerate_combos(3);
  CHECK(lat.all_combos.size() == 7);
  std::set<std::vector<int>> got;
  for (auto c : lat.all_combos) got.insert(c.members());
  CHECK(got == powerset_oracle(3));

  CHECK_THROWS_AS(enumerate_combos(0), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_combos(-2), std::invalid_argument);
}

TEST_CASE("level_set matches the hierarchy definition") {
  auto l43 = level_set(4, 3);
  std::vector<std::string> labels;
  for (auto c : l43) labels.push_back(combo_label(c));
  CHECK(labels == std::vector<std::string>{"123", "124", "134", "234"});

  auto l44 = level_set(4, 4);
  REQUIRE(l44.size() == 1);
  CHECK(l44[0] == ModalityCombo::full(4));

  CHECK(level_set(4, 1).size() == static_cast<size_t>(binomial(4, 1)));

  CHECK_THROWS_AS(level_set(4, 0), std::invalid_argument);
  CHECK_THROWS_AS(level_set(4, 5), std::invalid_argument);
}

TEST_CASE("lattice invariants for n=1..6") {
  for (int n = 1; n <= 6; ++n) {
    auto lat = enumerate_combos(n);
    CHECK(lat.all_combos.size() == (size_t{1} << n) - 1);

    // Stable ordering: two calls agree.
    auto again = enumerate_combos(n);
    CHECK(std::equal(lat.all_combos.begin(), lat.all_combos.end(), again.all_combos.begin()));

    // Canonical order: size ascending, then bits ascending; no duplicates.
    for (size_t i = 1; i < lat.all_combos.size(); ++i) {
      auto a = lat.all_combos[i - 1], b = lat.all_combos[i];
      CHECK((a.size() < b.size() || (a.size() == b.size() && a.bits < b.bits)));
    }

    // Level sets partition the lattice with binomial sizes.
    std::set<uint32_t> seen;
    size_t total = 0;
    for (int k = 1; k <= n; ++k) {
      auto level = level_set(n, k);
      CHECK(level.size() == static_cast<size_t>(binomial(n, k)));
      for (auto c : level) {
        CHECK(c.size() == k);
        seen.insert(c.bits);
      }
      total += level.size();
    }
    CHECK(total == lat.all_combos.size());
    CHECK(seen.size() == lat.all_combos.size());
  }
}

TEST_CASE("remove_modality") {
  CHECK(combo_label(remove_modality(parse_combo_label("1234", 4), 1)) == "134");
  CHECK(combo_label(remove_modality(parse_combo_label("12", 4), 1)) == "1");

  // All 32 (combo, member) pairs at N=4: removal inverts insertion when the
  // combo has >= 2 members, and errors on singletons.
  int checked = 0;
  for (auto c : enumerate_combos(4).all_combos)
    for (int m : c.members()) {
      if (c.size() >= 2) {
        auto r = remove_modality(c, m);
        CHECK(r.size() == c.size() - 1);
        CHECK(r.subset_of(c));
        CHECK(!r.contains(m));
        CHECK(r.with(m) == c);
      } else {
        CHECK_THROWS_AS(remove_modality(c, m), std::invalid_argument);
      }
      ++checked;
    }
  CHECK(checked == 32);

  CHECK_THROWS_AS(remove_modality(parse_combo_label("13", 4), 1), std::invalid_argument);
}

TEST_CASE("labels and names") {
  CHECK(combo_label(ModalityCombo::full(4)) == "1234");
  CHECK(combo_label(ModalityCombo::single(2)) == "3");
  CHECK(parse_combo_label("134", 4).members() == std::vector<int>{0, 2, 3});
  CHECK_THROWS_AS(parse_combo_label("", 4), std::invalid_argument);
  CHECK_THROWS_AS(parse_combo_label("15", 4), std::invalid_argument);
  CHECK_THROWS_AS(parse_combo_label("11", 4), std::invalid_argument);
  CHECK(modality_name(0) == "FLAIR");
  CHECK(modality_name(3) == "T2");
  CHECK(modality_name(4) == "M5");

  auto lat = enumerate_combos(4);
  CHECK(lat.index_of(parse_combo_label("1234", 4)) == 14);
  CHECK(lat.index_of(parse_combo_label("1", 4)) == 0);
}
