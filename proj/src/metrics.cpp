#include "ccsd/metrics.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

namespace ccsd {

std::vector<RegionSpec> default_regions() {
  return {{"WT", {1, 2, 3}}, {"TC", {2, 3}}, {"ET", {3}}};
}

double dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("dice: mask size mismatch");
  int64_t inter = 0, np = 0, ng = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    np += pred[i] ? 1 : 0;
    ng += gt[i] ? 1 : 0;
    inter += (pred[i] && gt[i]) ? 1 : 0;
  }
  if (np + ng == 0) return 1.0;  // both empty: perfect agreement on absence
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

std::vector<uint8_t> region_mask(const LabelVolume& labels, const RegionSpec& spec) {
  std::vector<uint8_t> mask(labels.data.size(), 0);
  for (size_t i = 0; i < labels.data.size(); ++i)
    for (int l : spec.labels)
      if (labels.data[i] == l) {
        mask[i] = 1;
        break;
      }
  return mask;
}

template <typename T>
LabelVolume argmax_labels(const TensorT<T>& x) {
  if (x.rank() != 5) throw std::invalid_argument("argmax_labels: expected [B,C,D,H,W]");
  const auto& s = x.shape();
  const int64_t B = s[0], C = s[1], V = s[2] * s[3] * s[4];
  LabelVolume out({s[0], s[2], s[3], s[4]});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t v = 0; v < V; ++v) {
      int best = 0;
      T bv = x[(b * C + 0) * V + v];
      for (int64_t c = 1; c < C; ++c) {
        const T cv = x[(b * C + c) * V + v];
        if (cv > bv) {
          bv = cv;
          best = static_cast<int>(c);
        }
      }
      out.data[static_cast<size_t>(b * V + v)] = best;
    }
  return out;
}

template LabelVolume argmax_labels<float>(const TensorT<float>&);
template LabelVolume argmax_labels<double>(const TensorT<double>&);

void EvalTable::recompute_averages() {
  averages.assign(region_names.size(), 0.0);
  if (rows.empty()) return;
  for (const auto& row : rows)
    for (size_t r = 0; r < averages.size(); ++r) averages[r] += row[r];
  for (auto& a : averages) a /= static_cast<double>(rows.size());
}

RobustnessCurve robustness_curve(const EvalTable& table, int region_index) {
  const int n = table.lattice.n_modalities;
  if (table.rows.size() != table.lattice.all_combos.size())
    throw std::invalid_argument("robustness_curve: incomplete table");
  if (region_index < 0 || region_index >= static_cast<int>(table.region_names.size()))
    throw std::invalid_argument("robustness_curve: bad region index");
  RobustnessCurve curve;
  for (int c = 1; c <= n; ++c) {
    double sum = 0;
    int count = 0;
    for (size_t i = 0; i < table.rows.size(); ++i)
      if (table.lattice.all_combos[i].size() == c) {
        sum += table.rows[i][static_cast<size_t>(region_index)];
        ++count;
      }
    curve.counts.push_back(c);
    curve.mean_dice.push_back(sum / count);
  }
  return curve;
}

double aurc_raw(const RobustnessCurve& curve) {
  if (curve.counts.size() < 2)
    throw std::invalid_argument("aurc: need at least 2 curve points");
  for (size_t i = 0; i < curve.counts.size(); ++i)
    if (curve.counts[i] != static_cast<int>(i) + 1)
      throw std::invalid_argument("aurc: curve must be keyed by modality count 1..N");
  double area = 0;
  for (size_t i = 0; i + 1 < curve.mean_dice.size(); ++i)
    area += 0.5 * (curve.mean_dice[i] + curve.mean_dice[i + 1]);
  return area;
}

double aurc(const RobustnessCurve& curve) {
  return aurc_raw(curve) / static_cast<double>(curve.counts.size() - 1);
}

std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  return f;
}

}  // namespace

void write_eval_table_csv(const std::string& path, const EvalTable& table) {
  auto f = open_out(path);
  f << "combo";
  for (const auto& r : table.region_names) f << "," << r;
  f << "\n";
  for (size_t i = 0; i < table.rows.size(); ++i) {
    f << combo_label(table.lattice.all_combos[i]);
    for (double v : table.rows[i]) f << "," << format_double(v);
    f << "\n";
  }
  f << "Avg.";
  for (double v : table.averages) f << "," << format_double(v);
  f << "\n";
}

void write_robustness_csv(const std::string& path, const EvalTable& table) {
  auto f = open_out(path);
  f << "count";
  for (const auto& r : table.region_names) f << "," << r;
  f << "\n";
  std::vector<RobustnessCurve> curves;
  for (size_t r = 0; r < table.region_names.size(); ++r)
    curves.push_back(robustness_curve(table, static_cast<int>(r)));
  for (size_t i = 0; i < curves[0].counts.size(); ++i) {
    f << curves[0].counts[i];
    for (const auto& c : curves) f << "," << format_double(c.mean_dice[i]);
    f << "\n";
  }
}

void write_aurc_csv(const std::string& path, const EvalTable& table) {
  auto f = open_out(path);
  f << "region,aurc,raw_area\n";
  for (size_t r = 0; r < table.region_names.size(); ++r) {
    auto curve = robustness_curve(table, static_cast<int>(r));
    f << table.region_names[r] << "," << format_double(aurc(curve)) << ","
      << format_double(aurc_raw(curve)) << "\n";
  }
}

}  // namespace ccsd
