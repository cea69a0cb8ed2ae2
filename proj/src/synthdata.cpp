#include "ccsd/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ccsd/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "case files are raw little-endian");

namespace ccsd {

void PhantomConfig::validate() const {
  if (n_modalities < 1) throw std::invalid_argument("data: n_modalities must be >= 1");
  if (n_cases < 1) throw std::invalid_argument("data: n_cases must be >= 1");
  if (noise_std < 0) throw std::invalid_argument("data: noise_std must be >= 0");
  if (volume_size.h < 8 || volume_size.w < 8 || volume_size.d < 1)
    throw std::invalid_argument("data: volume too small");
  const auto table = effective_contrast();
  if (static_cast<int>(table.size()) != n_modalities)
    throw std::invalid_argument("data: contrast table must have one row per modality");
  for (int r = 0; r < 3; ++r) {
    double best = 0;
    for (const auto& row : table) best = std::max(best, row[static_cast<size_t>(r)]);
    if (best < kVisibilityThreshold)
      throw std::invalid_argument("data: region " + std::to_string(r) +
                                  " is not visible in any modality");
  }
}

std::vector<std::array<double, 3>> PhantomConfig::default_contrast(int n) {
  if (n == 4)
    return {{1.00, 0.10, 0.00},   // FLAIR-like: whole tumor bright
            {0.15, 0.60, 0.10},   // T1-like: core moderate
            {0.10, 0.25, 1.00},   // T1c-like: enhancing bright
            {0.45, 0.35, 0.05}};  // T2-like: moderate everywhere
  if (n == 1) return {{1.0, 0.8, 0.9}};
  if (n == 2) return {{1.0, 0.8, 0.1}, {0.2, 0.3, 1.0}};
  std::vector<std::array<double, 3>> table;
  for (int m = 0; m < n; ++m) {
    std::array<double, 3> row{0.15, 0.1, 0.05};
    row[static_cast<size_t>(m % 3)] = 1.0;
    table.push_back(row);
  }
  return table;
}

std::vector<std::array<double, 3>> PhantomConfig::effective_contrast() const {
  return contrast.empty() ? default_contrast(n_modalities) : contrast;
}

uint64_t case_seed(uint64_t dataset_seed, int case_index) {
  return mix_seed(dataset_seed, static_cast<uint64_t>(case_index));
}

namespace {

// Low-frequency texture: random values on a coarse lattice, interpolated.
Tensor smooth_texture(Size3 size, Rng& rng) {
  const int g = 8;  // lattice spacing in voxels
  const int nd = size.d / g + 2, nh = size.h / g + 2, nw = size.w / g + 2;
  std::vector<double> lattice(static_cast<size_t>(nd) * nh * nw);
  for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
  auto at = [&](int z, int y, int x) {
    return lattice[(static_cast<size_t>(z) * nh + y) * nw + x];
  };
  Tensor out({size.d, size.h, size.w});
  int64_t i = 0;
  for (int z = 0; z < size.d; ++z)
    for (int y = 0; y < size.h; ++y)
      for (int x = 0; x < size.w; ++x) {
        const double fz = static_cast<double>(z) / g, fy = static_cast<double>(y) / g,
                     fx = static_cast<double>(x) / g;
        const int z0 = static_cast<int>(fz), y0 = static_cast<int>(fy),
                  x0 = static_cast<int>(fx);
        const double tz = fz - z0, ty = fy - y0, tx = fx - x0;
        double v = 0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              v += at(z0 + dz, y0 + dy, x0 + dx) * (dz ? tz : 1 - tz) * (dy ? ty : 1 - ty) *
                   (dx ? tx : 1 - tx);
        out[i++] = v;
      }
  return out;
}

struct Ellipsoids {
  std::array<double, 3> center;
  std::array<double, 3> wt, tc, et;  // radii per axis (d, h, w)
};

LabelVolume rasterize(const Ellipsoids& e, Size3 size) {
  LabelVolume labels({size.d, size.h, size.w});
  size_t i = 0;
  for (int z = 0; z < size.d; ++z)
    for (int y = 0; y < size.h; ++y)
      for (int x = 0; x < size.w; ++x) {
        const double pz = z + 0.5 - e.center[0], py = y + 0.5 - e.center[1],
                     px = x + 0.5 - e.center[2];
        auto inside = [&](const std::array<double, 3>& r) {
          const double qz = size.d > 1 ? pz / r[0] : 0.0;
          const double qy = py / r[1], qx = px / r[2];
          return qz * qz + qy * qy + qx * qx <= 1.0;
        };
        int l = 0;
        if (inside(e.et))
          l = 3;
        else if (inside(e.tc))
          l = 2;
        else if (inside(e.wt))
          l = 1;
        labels.data[i++] = l;
      }
  return labels;
}

}  // namespace

MultiModalCase generate_case(const PhantomConfig& cfg, uint64_t seed, int case_id) {
  cfg.validate();
  const Size3 size = cfg.volume_size;
  const bool flat = size.d == 1;
  const int64_t V = size.voxels();
  const auto lo_frac = static_cast<int64_t>(0.005 * static_cast<double>(V));
  const auto hi_frac = static_cast<int64_t>(0.20 * static_cast<double>(V));

  Rng geom(mix_seed(seed, 1));
  LabelVolume labels;
  bool ok = false;
  for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
    Ellipsoids e;
    for (int a = 0; a < 3; ++a) {
      const int s = a == 0 ? size.d : (a == 1 ? size.h : size.w);
      if (a == 0 && flat) {
        e.center[0] = 0.5;
        e.wt[0] = e.tc[0] = e.et[0] = 1.0;
        continue;
      }
      const double rf = flat ? geom.uniform(0.20, 0.245) : geom.uniform(0.26, 0.34);
      e.wt[static_cast<size_t>(a)] = rf * s;
      e.center[static_cast<size_t>(a)] = 0.5 * s + geom.uniform(-0.08, 0.08) * s;
    }
    const double tc_ratio = geom.uniform(0.58, 0.70);
    const double et_ratio = geom.uniform(0.55, 0.68);
    for (int a = 0; a < 3; ++a) {
      e.tc[static_cast<size_t>(a)] = flat && a == 0 ? 1.0 : e.wt[static_cast<size_t>(a)] * tc_ratio;
      e.et[static_cast<size_t>(a)] =
          flat && a == 0 ? 1.0 : e.tc[static_cast<size_t>(a)] * et_ratio;
    }
    labels = rasterize(e, size);
    int64_t counts[4] = {0, 0, 0, 0};
    for (int32_t l : labels.data) ++counts[l];
    ok = true;
    for (int l = 1; l <= 3; ++l)
      ok = ok && counts[l] >= std::max<int64_t>(lo_frac, 1) && counts[l] <= hi_frac;
  }
  if (!ok)
    throw std::runtime_error("generate_case: nested regions do not fit volume " +
                             std::to_string(size.d) + "x" + std::to_string(size.h) + "x" +
                             std::to_string(size.w) + " within the label fraction bounds");

  MultiModalCase c;
  c.case_id = case_id;
  c.seed = seed;
  c.labels = std::move(labels);
  const auto table = cfg.effective_contrast();
  for (int m = 0; m < cfg.n_modalities; ++m) {
    Rng tex_rng(mix_seed(seed, 2 + static_cast<uint64_t>(m)));
    Rng noise_rng(mix_seed(seed, 100 + static_cast<uint64_t>(m)));
    Tensor vol = smooth_texture(size, tex_rng);
    const auto& row = table[static_cast<size_t>(m)];
    for (int64_t i = 0; i < V; ++i) {
      const int32_t l = c.labels.data[static_cast<size_t>(i)];
      double v = 0.15 * vol[i];
      if (l >= 1) v += row[0];  // WT = {1,2,3}
      if (l >= 2) v += row[1];  // TC = {2,3}
      if (l == 3) v += row[2];  // ET = {3}
      if (cfg.noise_std > 0) v += cfg.noise_std * noise_rng.normal();
      vol[i] = v;
    }
    c.volumes.push_back(std::move(vol));
  }
  return c;
}

AugmentOps sample_augment(uint64_t aug_seed, Size3 shape) {
  Rng rng(mix_seed(aug_seed, 7));
  AugmentOps ops;
  ops.flip[0] = shape.d > 1 && rng.uniform_int(2) == 1;
  ops.flip[1] = rng.uniform_int(2) == 1;
  ops.flip[2] = rng.uniform_int(2) == 1;
  std::vector<int> planes;
  if (shape.h == shape.w) planes.push_back(0);
  if (shape.d > 1 && shape.d == shape.h) planes.push_back(1);
  if (shape.d > 1 && shape.d == shape.w) planes.push_back(2);
  if (!planes.empty()) {
    ops.plane = planes[static_cast<size_t>(rng.uniform_int(planes.size()))];
    ops.quarter_turns = static_cast<int>(rng.uniform_int(4));
  }
  return ops;
}

namespace {

// Source coordinates for an output voxel: k quarter-turns in the chosen
// plane, then axis flips.
inline void source_coords(const AugmentOps& ops, Size3 size, int z, int y, int x, int& sz,
                          int& sy, int& sx) {
  sz = z;
  sy = y;
  sx = x;
  for (int k = 0; k < ops.quarter_turns % 4; ++k) {
    if (ops.plane == 0) {  // (H, W), square
      const int ny = sx, nx = size.h - 1 - sy;
      sy = ny;
      sx = nx;
    } else if (ops.plane == 1) {  // (D, H)
      const int nz = sy, ny = size.d - 1 - sz;
      sz = nz;
      sy = ny;
    } else if (ops.plane == 2) {  // (D, W)
      const int nz = sx, nx = size.d - 1 - sz;
      sz = nz;
      sx = nx;
    }
  }
  if (ops.flip[0]) sz = size.d - 1 - sz;
  if (ops.flip[1]) sy = size.h - 1 - sy;
  if (ops.flip[2]) sx = size.w - 1 - sx;
}

}  // namespace

MultiModalCase apply_augment(const MultiModalCase& c, const AugmentOps& ops) {
  const auto& ls = c.labels.shape;
  const Size3 size{static_cast<int>(ls[0]), static_cast<int>(ls[1]), static_cast<int>(ls[2])};
  MultiModalCase out;
  out.case_id = c.case_id;
  out.seed = c.seed;
  out.labels = LabelVolume({ls[0], ls[1], ls[2]});
  for (const auto& v : c.volumes) out.volumes.emplace_back(v.shape());

  size_t i = 0;
  for (int z = 0; z < size.d; ++z)
    for (int y = 0; y < size.h; ++y)
      for (int x = 0; x < size.w; ++x, ++i) {
        int sz, sy, sx;
        source_coords(ops, size, z, y, x, sz, sy, sx);
        const size_t j =
            (static_cast<size_t>(sz) * static_cast<size_t>(size.h) + static_cast<size_t>(sy)) *
                static_cast<size_t>(size.w) +
            static_cast<size_t>(sx);
        out.labels.data[i] = c.labels.data[j];
        for (size_t m = 0; m < c.volumes.size(); ++m)
          out.volumes[m][static_cast<int64_t>(i)] = c.volumes[m][static_cast<int64_t>(j)];
      }
  return out;
}

MultiModalCase augment(const MultiModalCase& c, uint64_t aug_seed) {
  const auto& ls = c.labels.shape;
  return apply_augment(c, sample_augment(aug_seed, {static_cast<int>(ls[0]),
                                                    static_cast<int>(ls[1]),
                                                    static_cast<int>(ls[2])}));
}

SplitIndices make_split(const PhantomConfig& cfg, std::array<double, 3> fractions) {
  cfg.validate();
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("make_split: fractions must sum to 1");
  const int n = cfg.n_cases;
  const int n_val = static_cast<int>(fractions[1] * n);
  const int n_test = static_cast<int>(fractions[2] * n);
  const int n_train = n - n_val - n_test;
  if (n_train <= 0 || n_val <= 0 || n_test <= 0)
    throw std::invalid_argument("make_split: every split must be non-empty (got train=" +
                                std::to_string(n_train) + " val=" + std::to_string(n_val) +
                                " test=" + std::to_string(n_test) + ")");
  std::vector<int> ids(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = i;
  Rng shuffle_rng(mix_seed(cfg.seed, 9001));
  shuffle_rng.shuffle(ids);
  SplitIndices s;
  s.train.assign(ids.begin(), ids.begin() + n_train);
  s.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  s.test.assign(ids.begin() + n_train + n_val, ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

void save_case(const std::string& path, const MultiModalCase& c) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  const auto& ls = c.labels.shape;
  f << "CCSDVOL1 n=" << c.volumes.size() << " dims=" << ls[0] << "," << ls[1] << "," << ls[2]
    << " dtype=f8 labels=i4 case_id=" << c.case_id << " seed=" << c.seed << "\n";
  for (const auto& v : c.volumes)
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(v.numel())));
  f.write(reinterpret_cast<const char*>(c.labels.data.data()),
          static_cast<std::streamsize>(sizeof(int32_t) * c.labels.data.size()));
}

MultiModalCase load_case(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string header;
  std::getline(f, header);
  long long d = 0, h = 0, w = 0;
  int nmod = 0, case_id = 0;
  unsigned long long seed = 0;
  if (std::sscanf(header.c_str(),
                  "CCSDVOL1 n=%d dims=%lld,%lld,%lld dtype=f8 labels=i4 case_id=%d seed=%llu",
                  &nmod, &d, &h, &w, &case_id, &seed) != 6)
    throw std::runtime_error("bad case header in " + path + ": " + header);
  MultiModalCase c;
  c.case_id = case_id;
  c.seed = seed;
  for (int m = 0; m < nmod; ++m) {
    Tensor v({d, h, w});
    f.read(reinterpret_cast<char*>(v.data()),
           static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(v.numel())));
    c.volumes.push_back(std::move(v));
  }
  c.labels = LabelVolume({d, h, w});
  f.read(reinterpret_cast<char*>(c.labels.data.data()),
         static_cast<std::streamsize>(sizeof(int32_t) * c.labels.data.size()));
  if (!f) throw std::runtime_error("truncated case file " + path);
  return c;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& e : entries)
    f << e.case_id << "," << e.split << "," << e.seed << "," << e.path << "\n";
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    ManifestEntry e;
    std::istringstream is(line);
    std::string id, seed;
    if (!std::getline(is, id, ',') || !std::getline(is, e.split, ',') ||
        !std::getline(is, seed, ',') || !std::getline(is, e.path))
      throw std::runtime_error("bad manifest line: " + line);
    e.case_id = std::stoi(id);
    e.seed = std::stoull(seed);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace ccsd
