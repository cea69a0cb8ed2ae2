#include "ccsd/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ccsd/config.hpp"
#include "ccsd/trainer.hpp"

namespace fs = std::filesystem;

namespace ccsd {

namespace {

struct CommonOpts {
  std::string config_file;
  std::string out_dir = "ccsd_out";
  std::vector<std::string> sets;
  int64_t seed = -1;
  bool render_plots = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_plots = false) {
  cmd->add_option("--config", o.config_file, "config file (key = value lines)");
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--set", o.sets, "override a config key, KEY=VALUE (repeatable)");
  cmd->add_option("--seed", o.seed, "override the master seed");
  if (with_plots) cmd->add_flag("--render-plots", o.render_plots, "emit SVG plots");
}

TrainConfig make_config(const CommonOpts& o) {
  Config c = Config::assemble(o.config_file, o.sets);
  if (o.seed >= 0) c.set("seed", std::to_string(o.seed));
  return c.to_train_config();
}

std::string case_filename(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%04d.ccsdvol", id);
  return buf;
}

void render_curve_svgs(const EvalTable& table, const std::string& out_dir) {
  const int W = 420, H = 300, ml = 50, mr = 20, mt = 20, mb = 40;
  for (size_t r = 0; r < table.region_names.size(); ++r) {
    auto curve = robustness_curve(table, static_cast<int>(r));
    const int n = static_cast<int>(curve.counts.size());
    std::ofstream f(fs::path(out_dir) / ("robustness_" + table.region_names[r] + ".svg"),
                    std::ios::binary);
    auto px = [&](int i) {
      return ml + (W - ml - mr) * (n == 1 ? 0.0 : static_cast<double>(i) / (n - 1));
    };
    auto py = [&](double d) { return mt + (H - mt - mb) * (1.0 - d); };
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    f << "<line x1=\"" << ml << "\" y1=\"" << py(0) << "\" x2=\"" << W - mr << "\" y2=\""
      << py(0) << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << ml << "\" y1=\"" << py(0) << "\" x2=\"" << ml << "\" y2=\"" << py(1)
      << "\" stroke=\"black\"/>\n";
    f << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (int i = 0; i < n; ++i) f << px(i) << "," << py(curve.mean_dice[static_cast<size_t>(i)]) << " ";
    f << "\"/>\n";
    for (int i = 0; i < n; ++i) {
      f << "<circle cx=\"" << px(i) << "\" cy=\"" << py(curve.mean_dice[static_cast<size_t>(i)])
        << "\" r=\"3\" fill=\"steelblue\"/>\n";
      f << "<text x=\"" << px(i) << "\" y=\"" << H - mb + 18
        << "\" text-anchor=\"middle\" font-size=\"12\">" << curve.counts[static_cast<size_t>(i)]
        << "</text>\n";
    }
    f << "<text x=\"" << ml << "\" y=\"" << mt - 5 << "\" font-size=\"13\">"
      << table.region_names[r] << " mean Dice vs available modalities (AURC "
      << format_double(aurc(curve)) << ")</text>\n";
    f << "<text x=\"" << (W + ml - mr) / 2 << "\" y=\"" << H - 8
      << "\" text-anchor=\"middle\" font-size=\"12\">available modalities</text>\n";
    f << "</svg>\n";
  }
}

int cmd_gen_data(const CommonOpts& o) {
  TrainConfig cfg = make_config(o);
  fs::create_directories(o.out_dir);
  SplitIndices split = make_split(cfg.data, cfg.fractions);
  auto split_of = [&](int id) {
    for (int i : split.val)
      if (i == id) return "val";
    for (int i : split.test)
      if (i == id) return "test";
    return "train";
  };
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < cfg.data.n_cases; ++i) {
    const uint64_t cs = case_seed(cfg.data.seed, i);
    MultiModalCase c = generate_case(cfg.data, cs, i);
    const std::string name = case_filename(i);
    save_case((fs::path(o.out_dir) / name).string(), c);
    entries.push_back({i, split_of(i), cs, name});
  }
  write_manifest((fs::path(o.out_dir) / "manifest.csv").string(), entries);
  std::cout << "wrote " << cfg.data.n_cases << " cases and manifest.csv to " << o.out_dir
            << "\n";
  return 0;
}

int cmd_train(const CommonOpts& o) {
  TrainConfig cfg = make_config(o);
  RunRecord rec = train(cfg, o.out_dir);
  if (o.render_plots) render_curve_svgs(rec.test_table, o.out_dir);
  std::cout << "training complete: " << rec.steps << " steps, best val mean Dice "
            << format_double(rec.best_val_mean_dice) << ", test mean Dice "
            << format_double(rec.test_mean_dice) << "\noutputs in " << o.out_dir << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt) {
  if (!fs::exists(ckpt + ".bin") || !fs::exists(ckpt + ".meta"))
    throw std::invalid_argument("--ckpt: no checkpoint at '" + ckpt +
                                "' (expected " + ckpt + ".bin and " + ckpt + ".meta)");
  TrainConfig cfg = make_config(o);
  Dataset ds = load_dataset(cfg);
  std::vector<MultiModalCase> cases;
  for (int i : ds.split.test) cases.push_back(ds.cases[static_cast<size_t>(i)]);
  EvalTable table = evaluate_checkpoint(ckpt, cfg, cases);
  fs::create_directories(o.out_dir);
  write_eval_table_csv((fs::path(o.out_dir) / "eval_table.csv").string(), table);
  if (cfg.data.n_modalities >= 2) {
    write_robustness_csv((fs::path(o.out_dir) / "robustness_curve.csv").string(), table);
    write_aurc_csv((fs::path(o.out_dir) / "aurc.csv").string(), table);
  }
  if (o.render_plots) render_curve_svgs(table, o.out_dir);
  std::cout << "evaluated " << cases.size() << " test cases over "
            << table.rows.size() << " modality combinations; CSVs in " << o.out_dir << "\n";
  return 0;
}

int cmd_ablate(const CommonOpts& o, const std::string& axis, const std::string& seeds_arg) {
  TrainConfig cfg = make_config(o);
  std::vector<uint64_t> seeds;
  std::istringstream is(seeds_arg);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) seeds.push_back(std::stoull(tok));
  if (seeds.empty()) throw std::invalid_argument("--seeds: expected a comma-separated list");
  AblationReport rep = ablate(cfg, parse_ablation_axis(axis), seeds, o.out_dir);
  std::cout << "ablation (" << axis << ") over " << seeds.size() << " seed(s):\n";
  for (const auto& [setting, ms] : rep.dice_summary)
    std::cout << "  " << setting << ": mean Dice " << format_double(ms.first) << " +/- "
              << format_double(ms.second) << "\n";
  std::cout << "report in " << o.out_dir << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir, std::string out_dir, bool render) {
  const std::string rr = (fs::path(run_dir) / "run_record.json").string();
  if (!fs::exists(rr))
    throw std::invalid_argument("--run: no completed run at '" + run_dir +
                                "' (missing run_record.json)");
  RunRecord rec = RunRecord::load(rr);
  if (out_dir.empty()) out_dir = run_dir;
  fs::create_directories(out_dir);
  write_eval_table_csv((fs::path(out_dir) / "eval_table.csv").string(), rec.test_table);
  if (rec.test_table.lattice.n_modalities >= 2) {
    write_robustness_csv((fs::path(out_dir) / "robustness_curve.csv").string(), rec.test_table);
    write_aurc_csv((fs::path(out_dir) / "aurc.csv").string(), rec.test_table);
  }
  if (render) render_curve_svgs(rec.test_table, out_dir);
  std::cout << "report written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int cli_run(const std::vector<std::string>& args) {
  CLI::App app{"Compositional self-distillation for missing-modality segmentation"};
  app.require_subcommand(1);

  CommonOpts gen_o, train_o, eval_o, abl_o;
  std::string ckpt, axis = "k1k2", seeds = "1", run_dir, report_out;
  bool report_render = false;

  auto* gen = app.add_subcommand("gen-data", "generate phantom cases and a manifest");
  add_common(gen, gen_o);

  auto* tr = app.add_subcommand("train", "train a model and evaluate the full lattice");
  add_common(tr, train_o, true);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint over all combinations");
  add_common(ev, eval_o, true);
  ev->add_option("--ckpt", ckpt, "checkpoint prefix (expects .bin/.meta)")->required();

  auto* ab = app.add_subcommand("ablate", "run an ablation axis across seeds");
  add_common(ab, abl_o);
  ab->add_option("--axis", axis, "k1k2 | carrier | path_strategy");
  ab->add_option("--seeds", seeds, "comma-separated seed list");

  auto* rp = app.add_subcommand("report", "regenerate tables/curves from a run directory");
  rp->add_option("--run", run_dir, "completed run directory")->required();
  rp->add_option("--out", report_out, "output directory (default: the run directory)");
  rp->add_flag("--render-plots", report_render, "emit SVG plots");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_o);
    if (tr->parsed()) return cmd_train(train_o);
    if (ev->parsed()) return cmd_eval(eval_o, ckpt);
    if (ab->parsed()) return cmd_ablate(abl_o, axis, seeds);
    if (rp->parsed()) return cmd_report(run_dir, report_out, report_render);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_run(args);
}

}  // namespace ccsd
