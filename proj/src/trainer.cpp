#include "ccsd/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ccsd/config.hpp"
#include "ccsd/rng.hpp"

namespace fs = std::filesystem;

namespace ccsd {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (lr <= 0) throw std::invalid_argument("train: lr must be > 0");
  if (lr_min < 0 || lr_min > lr)
    throw std::invalid_argument("train: lr_min must lie in [0, lr]");
  if (eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
  if (precision != "f32" && precision != "f64")
    throw std::invalid_argument("train: precision must be f32 or f64");
  distill.validate();
  data.validate();
  net_for_data().validate();
}

NetConfig TrainConfig::net_for_data() const {
  NetConfig n = net;
  n.n_modalities = data.n_modalities;
  n.input_size = data.volume_size;
  if (data.volume_size.d == 1) n.spatial_rank = 2;
  return n;
}

double cosine_lr(int epoch, int total_epochs, double lr0, double lr_min) {
  const double x = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(3.14159265358979323846 * x));
}

template <typename T>
void Adam<T>::step(const std::vector<ad::ParamT<T>*>& params, double lr) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(static_cast<size_t>(p->value.numel()), 0.0);
      v_.emplace_back(static_cast<size_t>(p->value.numel()), 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    const int64_t n = p.value.numel();
    for (int64_t j = 0; j < n; ++j) {
      const double g = static_cast<double>(p.grad[j]);
      m[static_cast<size_t>(j)] = beta1_ * m[static_cast<size_t>(j)] + (1.0 - beta1_) * g;
      v[static_cast<size_t>(j)] = beta2_ * v[static_cast<size_t>(j)] + (1.0 - beta2_) * g * g;
      const double mhat = m[static_cast<size_t>(j)] / bc1;
      const double vhat = v[static_cast<size_t>(j)] / bc2;
      p.value[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

namespace {

nlohmann::ordered_json table_to_json(const EvalTable& t) {
  nlohmann::ordered_json j;
  j["n_modalities"] = t.lattice.n_modalities;
  j["regions"] = t.region_names;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (size_t i = 0; i < t.rows.size(); ++i) {
    nlohmann::ordered_json r;
    r["combo"] = combo_label(t.lattice.all_combos[i]);
    r["dice"] = t.rows[i];
    rows.push_back(r);
  }
  j["rows"] = rows;
  j["averages"] = t.averages;
  return j;
}

EvalTable table_from_json(const nlohmann::ordered_json& j) {
  EvalTable t;
  t.lattice = enumerate_combos(j.at("n_modalities").get<int>());
  t.region_names = j.at("regions").get<std::vector<std::string>>();
  const auto& rows = j.at("rows");
  if (rows.size() != t.lattice.all_combos.size())
    throw std::runtime_error("run record: eval table has wrong row count");
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].at("combo").get<std::string>() != combo_label(t.lattice.all_combos[i]))
      throw std::runtime_error("run record: eval table rows out of canonical order");
    t.rows.push_back(rows[i].at("dice").get<std::vector<double>>());
  }
  t.averages = j.at("averages").get<std::vector<double>>();
  return t;
}

nlohmann::ordered_json config_snapshot(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["data.n_modalities"] = cfg.data.n_modalities;
  j["data.volume_size"] = std::to_string(cfg.data.volume_size.d) + "," +
                          std::to_string(cfg.data.volume_size.h) + "," +
                          std::to_string(cfg.data.volume_size.w);
  j["data.n_cases"] = cfg.data.n_cases;
  j["data.noise_std"] = cfg.data.noise_std;
  {
    std::string rows;
    for (const auto& r : cfg.data.effective_contrast()) {
      if (!rows.empty()) rows += ";";
      rows += format_double(r[0]) + "," + format_double(r[1]) + "," + format_double(r[2]);
    }
    j["data.contrast"] = rows;
  }
  j["data.fractions"] = format_double(cfg.fractions[0]) + "," + format_double(cfg.fractions[1]) +
                        "," + format_double(cfg.fractions[2]);
  j["data.dir"] = cfg.data_dir;
  const NetConfig n = cfg.net_for_data();
  j["net.spatial_rank"] = n.spatial_rank;
  j["net.base_channels"] = n.base_channels;
  j["net.depth"] = n.depth;
  j["net.n_classes"] = n.n_classes;
  j["net.feature_channels"] = n.feature_channels;
  j["distill.temperature"] = cfg.distill.temperature;
  j["distill.hmsd_weight"] = cfg.distill.hmsd_weight;
  j["distill.dmcd_weight"] = cfg.distill.dmcd_weight;
  j["distill.carrier"] = cfg.distill.carrier == Carrier::shared
                             ? "shared"
                             : (cfg.distill.carrier == Carrier::specific ? "specific" : "fused");
  j["distill.hmsd_mode"] =
      cfg.distill.hmsd_mode == HmsdMode::decoder_output ? "decoder_output" : "feature";
  j["distill.per_case_path"] = cfg.distill.per_case_path;
  j["train.epochs"] = cfg.epochs;
  j["train.batch_size"] = cfg.batch_size;
  j["train.lr"] = cfg.lr;
  j["train.lr_min"] = cfg.lr_min;
  j["train.eval_every"] = cfg.eval_every;
  j["train.path_strategy"] = path_strategy_name(cfg.path_strategy);
  j["train.augment"] = cfg.augment_data;
  j["train.precision"] = cfg.precision;
  return j;
}

}  // namespace

nlohmann::ordered_json RunRecord::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = config;
  nlohmann::ordered_json eps = nlohmann::ordered_json::array();
  for (const auto& e : epochs) {
    nlohmann::ordered_json je;
    je["epoch"] = e.epoch;
    je["seg"] = e.seg;
    je["hmsd"] = e.hmsd;
    je["dmcd"] = e.dmcd;
    je["total"] = e.total;
    je["lr"] = e.lr;
    eps.push_back(je);
  }
  j["epochs"] = eps;
  j["best_val_mean_dice"] = best_val_mean_dice;
  j["test_mean_dice"] = test_mean_dice;
  j["steps"] = steps;
  j["wall_seconds"] = wall_seconds;
  j["aborted"] = aborted;
  j["abort_reason"] = abort_reason;
  j["test_table"] = table_to_json(test_table);
  nlohmann::ordered_json curves;
  for (size_t r = 0; r < test_table.region_names.size(); ++r) {
    auto c = robustness_curve(test_table, static_cast<int>(r));
    nlohmann::ordered_json jc;
    jc["counts"] = c.counts;
    jc["mean_dice"] = c.mean_dice;
    curves[test_table.region_names[r]] = jc;
  }
  j["robustness_curves"] = curves;
  j["aurc"] = aurc_by_region;
  j["raw_area"] = raw_area_by_region;
  return j;
}

RunRecord RunRecord::from_json(const nlohmann::ordered_json& j) {
  RunRecord r;
  r.config = j.at("config");
  for (const auto& je : j.at("epochs")) {
    EpochStats e;
    e.epoch = je.at("epoch").get<int>();
    e.seg = je.at("seg").get<double>();
    e.hmsd = je.at("hmsd").get<double>();
    e.dmcd = je.at("dmcd").get<double>();
    e.total = je.at("total").get<double>();
    e.lr = je.at("lr").get<double>();
    r.epochs.push_back(e);
  }
  r.best_val_mean_dice = j.at("best_val_mean_dice").get<double>();
  r.test_mean_dice = j.at("test_mean_dice").get<double>();
  r.steps = j.at("steps").get<int64_t>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.aborted = j.at("aborted").get<bool>();
  r.abort_reason = j.at("abort_reason").get<std::string>();
  r.test_table = table_from_json(j.at("test_table"));
  r.aurc_by_region = j.at("aurc").get<std::map<std::string, double>>();
  r.raw_area_by_region = j.at("raw_area").get<std::map<std::string, double>>();
  return r;
}

void RunRecord::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << to_json().dump(2) << "\n";
}

RunRecord RunRecord::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(f);
  return from_json(j);
}

Dataset load_dataset(const TrainConfig& cfg) {
  Dataset ds;
  if (cfg.data_dir.empty()) {
    for (int i = 0; i < cfg.data.n_cases; ++i)
      ds.cases.push_back(generate_case(cfg.data, case_seed(cfg.data.seed, i), i));
    ds.split = make_split(cfg.data, cfg.fractions);
    return ds;
  }
  const auto entries = read_manifest((fs::path(cfg.data_dir) / "manifest.csv").string());
  ds.cases.resize(entries.size());
  for (const auto& e : entries) {
    if (e.case_id < 0 || e.case_id >= static_cast<int>(entries.size()))
      throw std::runtime_error("manifest: case_id " + std::to_string(e.case_id) +
                               " out of range");
    fs::path p = e.path;
    if (p.is_relative()) p = fs::path(cfg.data_dir) / p;
    ds.cases[static_cast<size_t>(e.case_id)] = load_case(p.string());
    if (e.split == "train")
      ds.split.train.push_back(e.case_id);
    else if (e.split == "val")
      ds.split.val.push_back(e.case_id);
    else if (e.split == "test")
      ds.split.test.push_back(e.case_id);
    else
      throw std::runtime_error("manifest: unknown split '" + e.split + "'");
  }
  return ds;
}

template <typename T>
EvalTable evaluate(SsNetT<T>& net, const std::vector<MultiModalCase>& cases) {
  if (cases.empty()) throw std::invalid_argument("evaluate: no cases");
  const NetConfig& cfg = net.config();
  const auto regions = default_regions();
  EvalTable table;
  table.lattice = enumerate_combos(cfg.n_modalities);
  for (const auto& r : regions) table.region_names.push_back(r.name);
  table.rows.assign(table.lattice.all_combos.size(),
                    std::vector<double>(regions.size(), 0.0));

  const int64_t V = cfg.input_size.voxels();
  for (const auto& c : cases) {
    if (static_cast<int>(c.volumes.size()) != cfg.n_modalities)
      throw std::invalid_argument("evaluate: case modality count does not match net");
    TensorT<T> x({1, cfg.n_modalities, cfg.input_size.d, cfg.input_size.h, cfg.input_size.w});
    for (int m = 0; m < cfg.n_modalities; ++m)
      for (int64_t i = 0; i < V; ++i)
        x[m * V + i] = static_cast<T>(c.volumes[static_cast<size_t>(m)][i]);

    std::vector<std::vector<uint8_t>> gt_masks;
    LabelVolume gt({1, c.labels.shape[0], c.labels.shape[1], c.labels.shape[2]});
    gt.data = c.labels.data;
    for (const auto& r : regions) gt_masks.push_back(region_mask(gt, r));

    ad::TapeT<T> t;
    auto feats = net.encode(t, x);
    auto* shared_zero = net.encode_shared_zero(t, 1);
    for (size_t i = 0; i < table.lattice.all_combos.size(); ++i) {
      auto* z = net.assemble_with_substitute(t, table.lattice.all_combos[i], feats, shared_zero);
      auto* logits = net.decode(t, z);
      const LabelVolume pred = argmax_labels(logits->value);
      for (size_t r = 0; r < regions.size(); ++r)
        table.rows[i][r] += dice(region_mask(pred, regions[r]), gt_masks[r]);
    }
  }
  for (auto& row : table.rows)
    for (auto& v : row) v /= static_cast<double>(cases.size());
  table.recompute_averages();
  return table;
}

template EvalTable evaluate<float>(SsNetT<float>&, const std::vector<MultiModalCase>&);
template EvalTable evaluate<double>(SsNetT<double>&, const std::vector<MultiModalCase>&);

namespace {

double table_mean_dice(const EvalTable& t) {
  double s = 0;
  for (double a : t.averages) s += a;
  return s / static_cast<double>(t.averages.size());
}

template <typename T>
std::vector<double> pooled_case(const TensorT<T>& v, int64_t b) {
  const int64_t C = v.shape()[1], V = v.shape()[2] * v.shape()[3] * v.shape()[4];
  std::vector<double> out(static_cast<size_t>(C), 0.0);
  for (int64_t c = 0; c < C; ++c) {
    const T* p = v.data() + (b * C + c) * V;
    double s = 0;
    for (int64_t i = 0; i < V; ++i) s += static_cast<double>(p[i]);
    out[static_cast<size_t>(c)] = s / static_cast<double>(V);
  }
  return out;
}

template <typename T>
RunRecord train_impl(const TrainConfig& cfg, const std::string& out_dir) {
  const auto t_start = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);

  RunRecord rec;
  rec.config = config_snapshot(cfg);

  Dataset ds = load_dataset(cfg);
  const NetConfig netcfg = cfg.net_for_data();
  const int N = netcfg.n_modalities;
  const ModalityCombo full = ModalityCombo::full(N);
  SsNetT<T> net(netcfg, cfg.seed);
  auto params = net.parameters();
  Adam<T> adam;

  std::ofstream loss_log(fs::path(out_dir) / "loss_log.csv", std::ios::binary);
  loss_log << "step,seg,hmsd,dmcd,total,k,path\n";

  auto collect = [&](const std::vector<int>& ids) {
    std::vector<MultiModalCase> out;
    for (int i : ids) out.push_back(ds.cases[static_cast<size_t>(i)]);
    return out;
  };
  const auto val_cases = collect(ds.split.val);
  const std::string ckpt_prefix = (fs::path(out_dir) / "ckpt").string();

  Rng krng(mix_seed(cfg.seed, 60001));
  int64_t step = 0;
  double best_val = -1.0;
  bool saved = false;
  const int64_t V = netcfg.input_size.voxels();

  auto flush_record = [&](bool final_pass) {
    rec.steps = step;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    if (final_pass) rec.save((fs::path(out_dir) / "run_record.json").string());
  };

  try {
    for (int e = 0; e < cfg.epochs; ++e) {
      const double lr_e = cosine_lr(e, cfg.epochs, cfg.lr, cfg.lr_min);
      std::vector<int> order = ds.split.train;
      Rng shuffle_rng(mix_seed(cfg.seed, 40000 + static_cast<uint64_t>(e)));
      shuffle_rng.shuffle(order);

      EpochStats es;
      es.epoch = e;
      es.lr = lr_e;
      int epoch_steps = 0;

      for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
        const size_t B = std::min<size_t>(static_cast<size_t>(cfg.batch_size),
                                          order.size() - off);
        TensorT<T> x({static_cast<int64_t>(B), N, netcfg.input_size.d, netcfg.input_size.h,
                      netcfg.input_size.w});
        LabelVolume labels({static_cast<int64_t>(B), netcfg.input_size.d, netcfg.input_size.h,
                            netcfg.input_size.w});
        for (size_t b = 0; b < B; ++b) {
          const int id = order[off + b];
          MultiModalCase c = ds.cases[static_cast<size_t>(id)];
          if (cfg.augment_data)
            c = augment(c, mix_seed(mix_seed(cfg.seed, 50000 + static_cast<uint64_t>(e)),
                                    static_cast<uint64_t>(id)));
          for (int m = 0; m < N; ++m)
            for (int64_t i = 0; i < V; ++i)
              x[(static_cast<int64_t>(b) * N + m) * V + i] =
                  static_cast<T>(c.volumes[static_cast<size_t>(m)][i]);
          std::copy(c.labels.data.begin(), c.labels.data.end(),
                    labels.data.begin() + static_cast<int64_t>(b) * V);
        }

        ad::TapeT<T> tape;
        auto cache = net.forward_all_combos(tape, x);
        auto* full_logits = net.decode(tape, cache.entry(full));
        auto* seg = seg_loss(tape, full_logits, labels);

        int k = 0;
        ad::NodeT<T>* hmsd;
        if (N >= 2 && cfg.distill.hmsd_weight > 0) {
          k = 1 + static_cast<int>(krng.uniform_int(static_cast<uint64_t>(N - 1)));
          hmsd = hmsd_loss(tape, net, cache, k, cfg.distill, full_logits);
        } else {
          if (N >= 2) k = 1 + static_cast<int>(krng.uniform_int(static_cast<uint64_t>(N - 1)));
          hmsd = tape.constant(TensorT<T>::scalar(T{0}));
        }

        std::string path_str;
        ad::NodeT<T>* dmcd;
        if (cfg.distill.dmcd_weight > 0) {
          if (cfg.distill.per_case_path) {
            std::vector<DecrementPath> paths;
            for (size_t b = 0; b < B; ++b) {
              std::vector<std::vector<double>> feats;
              for (int m = 0; m < N; ++m)
                feats.push_back(pooled_case(cache.feats.fused[static_cast<size_t>(m)]->value,
                                            static_cast<int64_t>(b)));
              paths.push_back(build_path(full, feats, cfg.path_strategy,
                                         mix_seed(cfg.seed, 70000 + static_cast<uint64_t>(step) *
                                                                       64 +
                                                                   b)));
            }
            dmcd = dmcd_loss_per_case(tape, net, cache, paths, cfg.distill);
            path_str = paths[0].to_string();
          } else {
            std::vector<std::vector<double>> feats;
            for (int m = 0; m < N; ++m)
              feats.push_back(pooled_feature(cache.feats.fused[static_cast<size_t>(m)]->value));
            DecrementPath path =
                build_path(full, feats, cfg.path_strategy,
                           mix_seed(cfg.seed, 70000 + static_cast<uint64_t>(step)));
            dmcd = dmcd_loss(tape, net, cache, path, cfg.distill);
            path_str = path.to_string();
          }
        } else {
          dmcd = tape.constant(TensorT<T>::scalar(T{0}));
        }

        LossBreakdown bd;
        auto* total = total_loss(tape, seg, hmsd, dmcd, cfg.distill, &bd);
        for (auto* p : params) p->zero_grad();
        tape.backward(total);
        adam.step(params, lr_e);

        loss_log << step << "," << format_double(bd.seg) << "," << format_double(bd.hmsd) << ","
                 << format_double(bd.dmcd) << "," << format_double(bd.total) << "," << k << ","
                 << path_str << "\n";
        es.seg += bd.seg;
        es.hmsd += bd.hmsd;
        es.dmcd += bd.dmcd;
        es.total += bd.total;
        ++epoch_steps;
        ++step;
      }

      if (epoch_steps > 0) {
        es.seg /= epoch_steps;
        es.hmsd /= epoch_steps;
        es.dmcd /= epoch_steps;
        es.total /= epoch_steps;
      }
      rec.epochs.push_back(es);

      if ((e + 1) % cfg.eval_every == 0 || e == cfg.epochs - 1) {
        const double val = table_mean_dice(evaluate(net, val_cases));
        if (val > best_val) {
          best_val = val;
          net.save_checkpoint(ckpt_prefix, cfg.seed, step);
          saved = true;
        }
      }
    }
  } catch (const TrainingAbort& abort) {
    rec.aborted = true;
    rec.abort_reason = abort.what();
    flush_record(true);
    throw;
  }

  rec.best_val_mean_dice = best_val;

  // Final evaluation runs the best-validation checkpoint on the test split.
  SsNetT<T> best = saved ? SsNetT<T>::load_checkpoint(ckpt_prefix) : std::move(net);
  rec.test_table = evaluate(best, collect(ds.split.test));
  rec.test_mean_dice = table_mean_dice(rec.test_table);
  for (size_t r = 0; r < rec.test_table.region_names.size(); ++r) {
    auto curve = robustness_curve(rec.test_table, static_cast<int>(r));
    if (N >= 2) {
      rec.aurc_by_region[rec.test_table.region_names[r]] = aurc(curve);
      rec.raw_area_by_region[rec.test_table.region_names[r]] = aurc_raw(curve);
    }
  }
  write_eval_table_csv((fs::path(out_dir) / "eval_table.csv").string(), rec.test_table);
  if (N >= 2) {
    write_robustness_csv((fs::path(out_dir) / "robustness_curve.csv").string(), rec.test_table);
    write_aurc_csv((fs::path(out_dir) / "aurc.csv").string(), rec.test_table);
  }
  flush_record(true);
  return rec;
}

}  // namespace

RunRecord train(const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (cfg.precision == "f64") return train_impl<double>(cfg, out_dir);
  return train_impl<float>(cfg, out_dir);
}

EvalTable evaluate_checkpoint(const std::string& ckpt_prefix, const TrainConfig& cfg,
                              const std::vector<MultiModalCase>& cases) {
  const NetConfig expect = cfg.net_for_data();
  uint64_t seed = 0;
  int64_t steps = 0;
  if (cfg.precision == "f64") {
    SsNet net = SsNet::load_checkpoint(ckpt_prefix, &seed, &steps);
    if (net.config().n_modalities != expect.n_modalities ||
        !(net.config().input_size == expect.input_size))
      throw std::runtime_error(
          "checkpoint config mismatch: checkpoint expects N=" +
          std::to_string(net.config().n_modalities) + " input " +
          std::to_string(net.config().input_size.d) + "x" +
          std::to_string(net.config().input_size.h) + "x" +
          std::to_string(net.config().input_size.w) + ", data provides N=" +
          std::to_string(expect.n_modalities));
    return evaluate(net, cases);
  }
  SsNetF net = SsNetF::load_checkpoint(ckpt_prefix, &seed, &steps);
  if (net.config().n_modalities != expect.n_modalities ||
      !(net.config().input_size == expect.input_size))
    throw std::runtime_error(
        "checkpoint config mismatch: checkpoint expects N=" +
        std::to_string(net.config().n_modalities) + " input " +
        std::to_string(net.config().input_size.d) + "x" +
        std::to_string(net.config().input_size.h) + "x" +
        std::to_string(net.config().input_size.w) + ", data provides N=" +
        std::to_string(expect.n_modalities));
  return evaluate(net, cases);
}

AblationAxis parse_ablation_axis(const std::string& name) {
  if (name == "k1k2") return AblationAxis::k1k2;
  if (name == "carrier") return AblationAxis::carrier;
  if (name == "path_strategy") return AblationAxis::path_strategy;
  throw std::invalid_argument("unknown ablation axis '" + name +
                              "' (expected k1k2|carrier|path_strategy)");
}

void AblationReport::write_csv(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "setting,seed,mean_dice";
  if (!runs.empty())
    for (const auto& [region, v] : runs.front().aurc_by_region) f << ",aurc_" << region;
  f << "\n";
  for (const auto& r : runs) {
    f << r.setting << "," << r.seed << "," << format_double(r.mean_dice);
    for (const auto& [region, v] : r.aurc_by_region) f << "," << format_double(v);
    f << "\n";
  }
  f << "\nsetting,runs,mean_dice_mean,mean_dice_spread,aurc_mean,aurc_spread\n";
  for (const auto& [setting, dice] : dice_summary) {
    const auto& au = aurc_summary.at(setting);
    int count = 0;
    for (const auto& r : runs) count += r.setting == setting ? 1 : 0;
    f << setting << "," << count << "," << format_double(dice.first) << ","
      << format_double(dice.second) << "," << format_double(au.first) << ","
      << format_double(au.second) << "\n";
  }
}

nlohmann::ordered_json AblationReport::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json rr = nlohmann::ordered_json::array();
  for (const auto& r : runs) {
    nlohmann::ordered_json je;
    je["setting"] = r.setting;
    je["seed"] = r.seed;
    je["mean_dice"] = r.mean_dice;
    je["aurc"] = r.aurc_by_region;
    rr.push_back(je);
  }
  j["runs"] = rr;
  nlohmann::ordered_json sums;
  for (const auto& [setting, dice] : dice_summary) {
    nlohmann::ordered_json js;
    js["mean_dice"] = {{"mean", dice.first}, {"spread", dice.second}};
    js["aurc"] = {{"mean", aurc_summary.at(setting).first},
                  {"spread", aurc_summary.at(setting).second}};
    sums[setting] = js;
  }
  j["summary"] = sums;
  return j;
}

AblationReport ablate(const TrainConfig& base, AblationAxis axis,
                      const std::vector<uint64_t>& seeds, const std::string& out_dir) {
  if (seeds.empty()) throw std::invalid_argument("ablate: need at least one seed");
  std::vector<std::pair<std::string, std::function<void(TrainConfig&)>>> settings;
  switch (axis) {
    case AblationAxis::k1k2:
      settings = {{"both", [](TrainConfig&) {}},
                  {"k1_only", [](TrainConfig& c) { c.distill.dmcd_weight = 0; }},
                  {"k2_only", [](TrainConfig& c) { c.distill.hmsd_weight = 0; }},
                  {"neither", [](TrainConfig& c) {
                     c.distill.hmsd_weight = 0;
                     c.distill.dmcd_weight = 0;
                   }}};
      break;
    case AblationAxis::carrier:
      for (Carrier carrier : {Carrier::shared, Carrier::specific, Carrier::fused}) {
        const std::string cname = carrier == Carrier::shared
                                      ? "shared"
                                      : (carrier == Carrier::specific ? "specific" : "fused");
        settings.push_back({cname + "_hmsd", [carrier](TrainConfig& c) {
                              c.distill.carrier = carrier;
                              c.distill.dmcd_weight = 0;
                            }});
        settings.push_back({cname + "_dmcd", [carrier](TrainConfig& c) {
                              c.distill.carrier = carrier;
                              c.distill.hmsd_weight = 0;
                            }});
        settings.push_back({cname + "_both", [carrier](TrainConfig& c) {
                              c.distill.carrier = carrier;
                            }});
      }
      break;
    case AblationAxis::path_strategy:
      for (PathStrategy s : {PathStrategy::max_criticality, PathStrategy::min_criticality,
                             PathStrategy::random})
        settings.push_back(
            {path_strategy_name(s), [s](TrainConfig& c) { c.path_strategy = s; }});
      break;
  }

  AblationReport report;
  for (const auto& [name, apply] : settings) {
    std::vector<double> dices, aurcs;
    for (uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.data.seed = seed;
      apply(cfg);
      const std::string run_dir =
          (fs::path(out_dir) / name / ("seed_" + std::to_string(seed))).string();
      RunRecord rec = train(cfg, run_dir);
      AblationRun run;
      run.setting = name;
      run.seed = seed;
      run.mean_dice = rec.test_mean_dice;
      run.aurc_by_region = rec.aurc_by_region;
      double am = 0;
      for (const auto& [region, v] : rec.aurc_by_region) am += v;
      if (!rec.aurc_by_region.empty()) am /= static_cast<double>(rec.aurc_by_region.size());
      dices.push_back(rec.test_mean_dice);
      aurcs.push_back(am);
      report.runs.push_back(std::move(run));
    }
    auto mean_spread = [](const std::vector<double>& v) {
      double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double s2 = 0;
      for (double x : v) s2 += (x - m) * (x - m);
      return std::make_pair(m, std::sqrt(s2 / static_cast<double>(v.size())));
    };
    report.dice_summary[name] = mean_spread(dices);
    report.aurc_summary[name] = mean_spread(aurcs);
  }
  fs::create_directories(out_dir);
  report.write_csv((fs::path(out_dir) / "ablation_report.csv").string());
  std::ofstream jf(fs::path(out_dir) / "ablation_report.json", std::ios::binary);
  jf << report.to_json().dump(2) << "\n";
  return report;
}

}  // namespace ccsd
