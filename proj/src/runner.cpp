#include "rflab/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <vector>

#include "rflab/checkpoint.hpp"
#include "rflab/csv.hpp"
#include "rflab/finetune.hpp"
#include "rflab/metrics.hpp"
#include "rflab/numerics.hpp"
#include "rflab/posthoc.hpp"

namespace fs = std::filesystem;

namespace rflab {

namespace {

std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  f << content;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "step,lr,loss_ce,loss_reg,val_acc\n";
  for (const TraceRow& r : trace) {
    out += std::to_string(r.step) + "," + fmt_double(r.lr) + "," + fmt_double(r.loss_ce) + "," +
           fmt_double(r.loss_reg) + ",";
    if (r.evaluated) out += fmt_double(r.val_acc);
    out += "\n";
  }
  return out;
}

std::string pretrain_trace_csv(const std::vector<double>& losses) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i)
    out += std::to_string(i + 1) + "," + fmt_double(losses[i]) + "\n";
  return out;
}

// Everything a seed's cells share: the benchmark, the pre-trained encoders,
// the zero-shot head and the evaluation token pool.
struct SeedContext {
  std::uint64_t seed = 0;
  Benchmark bench;
  PretrainedModel pre;
  std::vector<TokenSeq> class_texts;
  HeadWeights w0;
  ParamSet zs_ref;
  std::vector<TokenSeq> pool;
};

SeedContext make_seed_context(const ExperimentConfig& cfg, std::uint64_t seed,
                              const fs::path& out) {
  SeedContext ctx;
  ctx.seed = seed;
  BenchmarkSpec spec = cfg.benchmark;
  spec.seed = seed;
  ctx.bench = make_benchmark(spec, cfg.model.vocab, cfg.model.token_len);

  fs::path ckpt = out / "checkpoints" / ("pretrain_" + seed_tag(seed) + ".rfl1");
  if (fs::exists(ckpt)) {
    Checkpoint c = load_checkpoint(ckpt.string());
    ctx.pre.arch = cfg.model;
    unpack_pretrained(c.params, ctx.pre.vision, ctx.pre.text);
  } else {
    PretrainConfig pcfg = cfg.pretrain;
    pcfg.seed = seed;
    std::vector<double> losses;
    ctx.pre = contrastive_pretrain(ctx.bench, cfg.model, pcfg, &losses);
    nlohmann::json meta = {{"method", "pretrain"}, {"seed", seed}, {"step", pcfg.steps}};
    fs::create_directories(ckpt.parent_path());
    save_checkpoint(ckpt.string(), pack_pretrained(ctx.pre.vision, ctx.pre.text), meta);
    write_file(out / "traces" / ("pretrain_" + seed_tag(seed) + ".csv"),
               pretrain_trace_csv(losses));
  }

  for (std::size_t k = 0; k < cfg.benchmark.classes; ++k)
    ctx.class_texts.push_back(class_token_seq(k, cfg.model.token_len, cfg.model.vocab));
  ctx.w0 = zero_shot_head(ctx.pre.text, ctx.class_texts);
  ctx.zs_ref = pack_trainable(ctx.pre.vision, ctx.w0);

  Rng pool_rng = Rng::stream(seed, "eval_token_pool");
  ctx.pool = sample_random_tokens(pool_rng, cfg.eval.token_pool, cfg.model.token_len,
                                  cfg.model.vocab);
  return ctx;
}

DenseArray probs_from_logits(const DenseArray& logits) {
  DenseArray p = DenseArray::zeros(logits.shape);
  std::vector<double> row(logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    for (std::size_t k = 0; k < logits.cols(); ++k) row[k] = logits(i, k);
    std::vector<double> sm = softmax(row);
    for (std::size_t k = 0; k < logits.cols(); ++k) p(i, k) = sm[k];
  }
  return p;
}

DomainMetrics domain_metrics(const std::string& name, const VisionParams& vision,
                             const HeadWeights& head, const VisionParams& vision0,
                             const Dataset& ds, std::size_t bins) {
  DomainMetrics m;
  m.name = name;
  DenseArray u = head_logits(head, vision_forward(vision, ds.x));
  m.accuracy = accuracy(u, ds.labels);
  m.ece = ece(probs_from_logits(u), ds.labels, bins);
  m.nll = nll_from_logits(u, ds.labels);
  m.feature_distortion = feature_distortion(vision, vision0, ds.x);
  return m;
}

MetricsReport evaluate_model(const SeedContext& ctx, const ExperimentConfig& cfg,
                             const VisionParams& vision, const HeadWeights& head,
                             const std::string& method, const std::string& hash) {
  MetricsReport r;
  r.method = method;
  r.seed = ctx.seed;
  r.config_hash = hash;
  r.domains.push_back(domain_metrics("reference", vision, head, ctx.pre.vision, ctx.bench.ref_test,
                                     cfg.eval.ece_bins));
  double shift_sum = 0.0;
  for (std::size_t s = 0; s < ctx.bench.shift_tests.size(); ++s) {
    DomainMetrics m = domain_metrics("shift" + std::to_string(s + 1), vision, head,
                                     ctx.pre.vision, ctx.bench.shift_tests[s], cfg.eval.ece_bins);
    shift_sum += m.accuracy;
    r.domains.push_back(m);
  }
  r.shift_acc_mean = shift_sum / double(ctx.bench.shift_tests.size());
  const Dataset& gap_inputs =
      cfg.eval.energy_inputs == "reference_val" ? ctx.bench.ref_val : ctx.bench.ref_test;
  r.energy_gap = energy_gap(vision, ctx.pre.vision, ctx.pre.text, gap_inputs.x, ctx.pool);
  double ref_acc = r.domains[0].accuracy;
  if (!(ref_acc > 0.0)) throw std::runtime_error("evaluate: zero reference accuracy");
  r.rel_shift_acc = r.shift_acc_mean / ref_acc;
  if (!(r.rel_shift_acc > 0.0 && r.rel_shift_acc <= 1.5))
    throw std::runtime_error("evaluate: implausible relative shift accuracy " +
                             fmt_double(r.rel_shift_acc));
  return r;
}

void write_report_json(const fs::path& out, const MetricsReport& r) {
  write_file(out / "reports" / (r.method + "_" + seed_tag(r.seed) + ".json"),
             report_to_json(r).dump(2) + "\n");
}

std::vector<double> domain_accs(const SeedContext& ctx, const ParamSet& params) {
  VisionParams vision;
  HeadWeights head;
  unpack_trainable(params, vision, head);
  std::vector<double> accs;
  accs.push_back(
      accuracy(head_logits(head, vision_forward(vision, ctx.bench.ref_test.x)), ctx.bench.ref_test.labels));
  for (const Dataset& ds : ctx.bench.shift_tests)
    accs.push_back(accuracy(head_logits(head, vision_forward(vision, ds.x)), ds.labels));
  return accs;
}

std::string sweep_csv_header(std::size_t shifts) {
  std::string h = "lambda_or_reg,ref_acc,shift_acc_mean";
  for (std::size_t s = 1; s <= shifts; ++s) h += ",shift" + std::to_string(s) + "_acc";
  return h + "\n";
}

std::string sweep_csv_row(double knob, const std::vector<double>& accs) {
  double shift_mean = 0.0;
  for (std::size_t s = 1; s < accs.size(); ++s) shift_mean += accs[s] / double(accs.size() - 1);
  std::string row = fmt_double(knob) + "," + fmt_double(accs[0]) + "," + fmt_double(shift_mean);
  for (std::size_t s = 1; s < accs.size(); ++s) row += "," + fmt_double(accs[s]);
  return row + "\n";
}

FinetuneConfig cell_finetune_config(const ExperimentConfig& cfg, const Method& m,
                                    std::uint64_t seed) {
  FinetuneConfig f = cfg.finetune;
  f.seed = seed;
  f.lambda = cfg.lambda_for(m.variant);
  return f;
}

void export_benchmark(const SeedContext& ctx, const fs::path& out) {
  fs::path dir = out / "datasets" / seed_tag(ctx.seed);
  fs::create_directories(dir);
  auto dump = [&](const std::string& name, const Dataset& ds) {
    std::ofstream f(dir / (name + ".csv"), std::ios::binary | std::ios::trunc);
    write_dataset_csv(f, ds);
  };
  dump("ref_train", ctx.bench.ref_train);
  dump("ref_val", ctx.bench.ref_val);
  dump("ref_test", ctx.bench.ref_test);
  for (std::size_t s = 0; s < ctx.bench.shift_tests.size(); ++s)
    dump("shift_test" + std::to_string(s + 1), ctx.bench.shift_tests[s]);
  dump("pretrain", ctx.bench.pretrain_inputs);
}

struct CellError {
  std::uint64_t seed;
  std::string cell;
  std::string message;
};

void run_posthoc_for_seed(const ExperimentConfig& cfg, const SeedContext& ctx,
                          const std::map<std::string, TrainedModel>& trained, const fs::path& out,
                          std::vector<CellError>& errors) {
  std::size_t shifts = ctx.bench.shift_tests.size();

  for (const std::string& base : cfg.posthoc.wise_methods) {
    auto it = trained.find(base);
    if (it == trained.end()) continue;
    try {
      std::string csv = sweep_csv_header(shifts);
      for (double lam : cfg.posthoc.wise_lambdas) {
        ParamSet p = wise(it->second.zero_shot_ref, it->second.params, lam);
        csv += sweep_csv_row(lam, domain_accs(ctx, p));
      }
      write_file(out / "posthoc" / ("wise_" + base + "_" + seed_tag(ctx.seed) + ".csv"), csv);
    } catch (const std::exception& e) {
      errors.push_back({ctx.seed, "wise_" + base, e.what()});
    }
  }

  for (const std::string& base : cfg.posthoc.tpgm_methods) {
    auto it = trained.find(base);
    if (it == trained.end()) continue;
    try {
      std::string csv = sweep_csv_header(shifts);
      for (double reg : cfg.posthoc.tpgm_regs) {
        GammaVector gamma = tpgm_optimize(it->second.zero_shot_ref, it->second.params,
                                          ctx.bench.ref_val, cfg.posthoc.tpgm_steps,
                                          cfg.posthoc.tpgm_lr, reg);
        ParamSet p = tpgm_project(it->second.zero_shot_ref, it->second.params, gamma);
        csv += sweep_csv_row(reg, domain_accs(ctx, p));
      }
      write_file(out / "posthoc" / ("tpgm_" + base + "_" + seed_tag(ctx.seed) + ".csv"), csv);
    } catch (const std::exception& e) {
      errors.push_back({ctx.seed, "tpgm_" + base, e.what()});
    }
  }

  // An empty candidate grid disables the selection stage.
  if (cfg.posthoc.soup_lr_factors.empty() || cfg.posthoc.soup_step_counts.empty()) return;

  try {
    std::vector<ParamSet> pool;
    std::vector<double> val_accs;
    for (double f : cfg.posthoc.soup_lr_factors)
      for (std::size_t st : cfg.posthoc.soup_step_counts) {
        Method m{Variant::FT, false};
        FinetuneConfig fc = cell_finetune_config(cfg, m, ctx.seed);
        fc.peak_lr = cfg.finetune.peak_lr * f;
        fc.steps = st;
        TrainedModel tm = finetune(ctx.pre, ctx.bench, m, fc);
        double best_val = -1.0;
        for (const TraceRow& r : tm.trace)
          if (r.evaluated && r.val_acc > best_val) best_val = r.val_acc;
        pool.push_back(std::move(tm.params));
        val_accs.push_back(best_val);
      }

    auto val_accuracy = [&](const ParamSet& p) {
      VisionParams vision;
      HeadWeights head;
      unpack_trainable(p, vision, head);
      return accuracy(head_logits(head, vision_forward(vision, ctx.bench.ref_val.x)),
                      ctx.bench.ref_val.labels);
    };

    std::size_t best_idx = 0;
    for (std::size_t i = 1; i < val_accs.size(); ++i)
      if (val_accs[i] > val_accs[best_idx]) best_idx = i;

    std::vector<std::size_t> soup_members;
    ParamSet soup = greedy_soup(pool, ctx.bench.ref_val, &soup_members);
    std::vector<std::size_t> members =
        greedy_ensemble(pool, ctx.bench.ref_val, cfg.posthoc.ensemble_max);

    std::string csv = "kind,members,val_acc,ref_acc,shift_acc_mean";
    for (std::size_t s = 1; s <= shifts; ++s) csv += ",shift" + std::to_string(s) + "_acc";
    csv += "\n";
    auto param_row = [&](const std::string& kind, std::size_t nmembers, const ParamSet& p) {
      std::vector<double> accs = domain_accs(ctx, p);
      double shift_mean = 0.0;
      for (std::size_t s = 1; s < accs.size(); ++s) shift_mean += accs[s] / double(accs.size() - 1);
      std::string row = kind + "," + std::to_string(nmembers) + "," + fmt_double(val_accuracy(p)) +
                        "," + fmt_double(accs[0]) + "," + fmt_double(shift_mean);
      for (std::size_t s = 1; s < accs.size(); ++s) row += "," + fmt_double(accs[s]);
      return row + "\n";
    };
    csv += param_row("best_single", 1, pool[best_idx]);
    csv += param_row("soup", soup_members.size(), soup);

    // Ensemble metrics come from averaged outputs rather than averaged weights.
    {
      DenseArray val_probs = ensemble_probs(pool, members, ctx.bench.ref_val.x);
      double vacc = accuracy(val_probs, ctx.bench.ref_val.labels);
      std::vector<double> accs;
      accs.push_back(accuracy(ensemble_probs(pool, members, ctx.bench.ref_test.x),
                              ctx.bench.ref_test.labels));
      for (const Dataset& ds : ctx.bench.shift_tests)
        accs.push_back(accuracy(ensemble_probs(pool, members, ds.x), ds.labels));
      double shift_mean = 0.0;
      for (std::size_t s = 1; s < accs.size(); ++s) shift_mean += accs[s] / double(accs.size() - 1);
      std::string row = "ensemble," + std::to_string(members.size()) + "," + fmt_double(vacc) +
                        "," + fmt_double(accs[0]) + "," + fmt_double(shift_mean);
      for (std::size_t s = 1; s < accs.size(); ++s) row += "," + fmt_double(accs[s]);
      csv += row + "\n";
    }
    write_file(out / "posthoc" / ("selection_" + seed_tag(ctx.seed) + ".csv"), csv);
  } catch (const std::exception& e) {
    errors.push_back({ctx.seed, "selection", e.what()});
  }
}

}  // namespace

void run_sweep(const ExperimentConfig& cfg, const std::string& out_dir, const SweepOptions& opts) {
  fs::path out(out_dir);
  fs::create_directories(out);
  nlohmann::json cj = config_to_json(cfg);
  cj.erase("output_dir");  // the hash names the experiment, not its location
  std::string hash = config_hash(cj);

  std::vector<CellError> errors;
  for (std::uint64_t seed : cfg.seeds) {
    SeedContext ctx;
    try {
      ctx = make_seed_context(cfg, seed, out);
    } catch (const std::exception& e) {
      errors.push_back({seed, "pretrain", e.what()});
      continue;
    }
    if (opts.export_data) export_benchmark(ctx, out);

    try {
      MetricsReport zs = evaluate_model(ctx, cfg, ctx.pre.vision, ctx.w0, "ZeroShot", hash);
      write_report_json(out, zs);
    } catch (const std::exception& e) {
      errors.push_back({seed, "ZeroShot", e.what()});
    }

    std::map<std::string, TrainedModel> trained;
    for (const std::string& name : cfg.methods) {
      try {
        Method m = parse_method(name);
        FinetuneConfig fc = cell_finetune_config(cfg, m, seed);
        TrainedModel tm = finetune(ctx.pre, ctx.bench, m, fc);

        nlohmann::json meta = {{"method", name}, {"seed", seed}, {"step", tm.selected_step}};
        save_checkpoint((out / "checkpoints" / (name + "_" + seed_tag(seed) + ".rfl1")).string(),
                        tm.params, meta);
        write_file(out / "traces" / (name + "_" + seed_tag(seed) + ".csv"), trace_csv(tm.trace));

        VisionParams vision;
        HeadWeights head;
        unpack_trainable(tm.params, vision, head);
        MetricsReport r = evaluate_model(ctx, cfg, vision, head, name, hash);
        write_report_json(out, r);
        trained.emplace(name, std::move(tm));
      } catch (const std::exception& e) {
        errors.push_back({seed, name, e.what()});
      }
    }

    run_posthoc_for_seed(cfg, ctx, trained, out, errors);
  }

  if (!errors.empty()) {
    std::string csv = "seed,cell,message\n";
    for (const CellError& e : errors) {
      std::string msg = e.message;
      for (char& ch : msg)
        if (ch == ',' || ch == '\n') ch = ';';
      csv += std::to_string(e.seed) + "," + e.cell + "," + msg + "\n";
    }
    write_file(out / "errors.csv", csv);
  }

  write_report(out_dir);
}

namespace {

struct Stats {
  double mean = 0.0;
  double std = 0.0;
};

Stats mean_std(const std::vector<double>& xs) {
  Stats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x / double(xs.size());
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double x : xs) acc += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(acc / double(xs.size() - 1));
  }
  return s;
}

}  // namespace

void write_report(const std::string& out_dir) {
  fs::path out(out_dir);
  fs::path reports_dir = out / "reports";
  std::vector<fs::path> files;
  if (fs::exists(reports_dir))
    for (const auto& entry : fs::directory_iterator(reports_dir))
      if (entry.path().extension() == ".json") files.push_back(entry.path());
  if (files.empty())
    throw std::runtime_error("report: no metrics reports in " + reports_dir.string());
  std::sort(files.begin(), files.end());

  std::vector<MetricsReport> reports;
  for (const fs::path& p : files) {
    std::ifstream f(p);
    nlohmann::json j = nlohmann::json::parse(f);
    reports.push_back(report_from_json(j));
  }
  std::stable_sort(reports.begin(), reports.end(), [](const MetricsReport& a, const MetricsReport& b) {
    if (a.method != b.method) return a.method < b.method;
    return a.seed < b.seed;
  });

  {
    std::string csv = "method,seed,ref_acc,shift_acc_mean\n";
    for (const MetricsReport& r : reports)
      csv += r.method + "," + std::to_string(r.seed) + "," + fmt_double(r.domains[0].accuracy) +
             "," + fmt_double(r.shift_acc_mean) + "\n";
    write_file(out / "tables" / "table_tradeoff.csv", csv);
  }
  {
    std::string csv = "method,seed,energy_gap,ref_acc,shift_acc_mean,rel_shift_acc\n";
    for (const MetricsReport& r : reports)
      csv += r.method + "," + std::to_string(r.seed) + "," + fmt_double(r.energy_gap) + "," +
             fmt_double(r.domains[0].accuracy) + "," + fmt_double(r.shift_acc_mean) + "," +
             fmt_double(r.rel_shift_acc) + "\n";
    write_file(out / "tables" / "table_energy_gap.csv", csv);
  }

  // Per (method, domain) aggregation across seeds, plus a synthetic
  // shift_mean domain averaging the shifted ones per seed.
  std::vector<std::string> method_order;
  std::map<std::string, std::vector<const MetricsReport*>> by_method;
  for (const MetricsReport& r : reports) {
    if (!by_method.count(r.method)) method_order.push_back(r.method);
    by_method[r.method].push_back(&r);
  }

  struct Cell {
    Stats acc, ece_s, nll_s, dist;
  };
  std::map<std::string, std::map<std::string, Cell>> table;  // method -> domain -> stats
  std::vector<std::string> domain_order;
  for (const std::string& m : method_order) {
    const auto& rs = by_method[m];
    std::map<std::string, std::vector<double>> acc, ec, nl, di;
    for (const MetricsReport* r : rs) {
      double sa = 0.0, se = 0.0, sn = 0.0, sd = 0.0;
      std::size_t shifts = 0;
      for (const DomainMetrics& d : r->domains) {
        acc[d.name].push_back(d.accuracy);
        ec[d.name].push_back(d.ece);
        nl[d.name].push_back(d.nll);
        di[d.name].push_back(d.feature_distortion);
        if (d.name != "reference") {
          sa += d.accuracy;
          se += d.ece;
          sn += d.nll;
          sd += d.feature_distortion;
          ++shifts;
        }
      }
      if (shifts > 0) {
        acc["shift_mean"].push_back(sa / double(shifts));
        ec["shift_mean"].push_back(se / double(shifts));
        nl["shift_mean"].push_back(sn / double(shifts));
        di["shift_mean"].push_back(sd / double(shifts));
      }
    }
    if (domain_order.empty())
      for (const auto& [name, v] : acc) domain_order.push_back(name);
    for (const auto& [name, v] : acc) {
      Cell c{mean_std(v), mean_std(ec[name]), mean_std(nl[name]), mean_std(di[name])};
      table[m][name] = c;
    }
  }
  // Stable presentation order: reference, shift1..S, shift_mean.
  std::sort(domain_order.begin(), domain_order.end(), [](const std::string& a, const std::string& b) {
    auto rank = [](const std::string& s) {
      if (s == "reference") return std::string("0");
      if (s == "shift_mean") return std::string("2");
      return "1" + s;
    };
    return rank(a) < rank(b);
  });

  {
    std::string csv =
        "method,domain,acc_mean,acc_std,ece_mean,ece_std,nll_mean,nll_std,distortion_mean,"
        "distortion_std\n";
    for (const std::string& m : method_order)
      for (const std::string& d : domain_order) {
        if (!table[m].count(d)) continue;
        const Cell& c = table[m][d];
        csv += m + "," + d + "," + fmt_double(c.acc.mean) + "," + fmt_double(c.acc.std) + "," +
               fmt_double(c.ece_s.mean) + "," + fmt_double(c.ece_s.std) + "," +
               fmt_double(c.nll_s.mean) + "," + fmt_double(c.nll_s.std) + "," +
               fmt_double(c.dist.mean) + "," + fmt_double(c.dist.std) + "\n";
      }
    write_file(out / "tables" / "table_methods.csv", csv);
  }

  // Consolidated summary with best / second-best marks per (domain, metric).
  nlohmann::json summary;
  for (const std::string& m : method_order)
    for (const std::string& d : domain_order) {
      if (!table[m].count(d)) continue;
      const Cell& c = table[m][d];
      summary["methods"][m][d] = {
          {"accuracy", {{"mean", c.acc.mean}, {"std", c.acc.std}}},
          {"ece", {{"mean", c.ece_s.mean}, {"std", c.ece_s.std}}},
          {"nll", {{"mean", c.nll_s.mean}, {"std", c.nll_s.std}}},
          {"feature_distortion", {{"mean", c.dist.mean}, {"std", c.dist.std}}}};
    }
  const char* metrics_names[] = {"accuracy", "ece", "nll"};
  for (const std::string& d : domain_order)
    for (const char* metric : metrics_names) {
      std::vector<std::pair<double, std::string>> vals;
      for (const std::string& m : method_order) {
        if (!table[m].count(d)) continue;
        const Cell& c = table[m][d];
        double v = std::string(metric) == "accuracy" ? c.acc.mean
                   : std::string(metric) == "ece"    ? c.ece_s.mean
                                                     : c.nll_s.mean;
        vals.push_back({v, m});
      }
      if (vals.size() < 2) continue;
      bool higher_better = std::string(metric) == "accuracy";
      std::stable_sort(vals.begin(), vals.end(), [&](const auto& a, const auto& b) {
        return higher_better ? a.first > b.first : a.first < b.first;
      });
      summary["marks"][d + ":" + metric] = {{"best", vals[0].second}, {"second", vals[1].second}};
    }

  // Seed-averaged post-hoc sweeps, grouped per (mode, base method).
  fs::path posthoc_dir = out / "posthoc";
  if (fs::exists(posthoc_dir)) {
    std::map<std::string, std::vector<fs::path>> groups;
    for (const auto& entry : fs::directory_iterator(posthoc_dir)) {
      std::string name = entry.path().filename().string();
      auto pos = name.find("_seed");
      if (pos == std::string::npos || entry.path().extension() != ".csv") continue;
      groups[name.substr(0, pos)].push_back(entry.path());
    }
    for (auto& [group, paths] : groups) {
      if (group.rfind("selection", 0) == 0) continue;  // member counts do not average
      std::sort(paths.begin(), paths.end());
      std::vector<CsvTable> tables_in;
      for (const fs::path& p : paths) tables_in.push_back(read_csv(p.string()));
      const CsvTable& first = tables_in[0];
      std::string csv;
      for (std::size_t c = 0; c < first.header.size(); ++c)
        csv += (c ? "," : "") + first.header[c];
      csv += "\n";
      for (std::size_t rix = 0; rix < first.rows.size(); ++rix) {
        csv += first.rows[rix][0];
        for (std::size_t c = 1; c < first.header.size(); ++c) {
          double acc = 0.0;
          for (const CsvTable& t : tables_in) acc += std::stod(t.rows[rix][c]);
          csv += "," + fmt_double(acc / double(tables_in.size()));
        }
        csv += "\n";
      }
      write_file(out / "tables" / ("posthoc_" + group + "_mean.csv"), csv);
      summary["posthoc"][group] = {{"seeds", paths.size()}};
    }
  }

  write_file(out / "tables" / "summary.json", summary.dump(2) + "\n");
}

namespace {

int guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

}  // namespace rflab

#include <CLI11.hpp>

namespace rflab {

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"robust fine-tuning laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_override, method_name_arg;
  std::uint64_t seed = 1;
  bool export_data = false;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "experiment config JSON");
    if (needs_config) opt->required();
    sub->add_option("--out", out_override, "output directory (overrides config)");
  };

  CLI::App* cmd_pretrain = app.add_subcommand("pretrain", "contrastive pre-training for one seed");
  add_common(cmd_pretrain, true);
  cmd_pretrain->add_option("--seed", seed, "run seed")->required();

  CLI::App* cmd_finetune = app.add_subcommand("finetune", "fine-tune one method for one seed");
  add_common(cmd_finetune, true);
  cmd_finetune->add_option("--seed", seed, "run seed")->required();
  cmd_finetune->add_option("--method", method_name_arg, "method name")->required();

  CLI::App* cmd_evaluate = app.add_subcommand("evaluate", "metrics report for one trained cell");
  add_common(cmd_evaluate, true);
  cmd_evaluate->add_option("--seed", seed, "run seed")->required();
  cmd_evaluate->add_option("--method", method_name_arg, "method name or ZeroShot")->required();

  CLI::App* cmd_posthoc = app.add_subcommand("posthoc", "post-hoc sweeps for one seed");
  add_common(cmd_posthoc, true);
  cmd_posthoc->add_option("--seed", seed, "run seed")->required();

  CLI::App* cmd_sweep = app.add_subcommand("sweep", "full experiment matrix");
  add_common(cmd_sweep, true);
  cmd_sweep->add_flag("--export-data", export_data, "write benchmark datasets as CSV");

  CLI::App* cmd_report = app.add_subcommand("report", "re-aggregate tables from reports");
  add_common(cmd_report, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto load = [&]() {
    ExperimentConfig cfg = load_config_file(config_path);
    return cfg;
  };
  auto out_dir = [&](const ExperimentConfig& cfg) {
    return out_override.empty() ? cfg.output_dir : out_override;
  };

  if (cmd_sweep->parsed()) {
    return guarded([&] {
      ExperimentConfig cfg = load();
      run_sweep(cfg, out_dir(cfg), SweepOptions{export_data});
    });
  }
  if (cmd_pretrain->parsed()) {
    return guarded([&] {
      ExperimentConfig cfg = load();
      make_seed_context(cfg, seed, out_dir(cfg));
    });
  }
  if (cmd_finetune->parsed()) {
    return guarded([&] {
      ExperimentConfig cfg = load();
      Method m = parse_method(method_name_arg);
      fs::path out(out_dir(cfg));
      SeedContext ctx = make_seed_context(cfg, seed, out);
      FinetuneConfig fc = cell_finetune_config(cfg, m, seed);
      TrainedModel tm = finetune(ctx.pre, ctx.bench, m, fc);
      nlohmann::json meta = {{"method", method_name_arg}, {"seed", seed}, {"step", tm.selected_step}};
      save_checkpoint((out / "checkpoints" / (method_name_arg + "_" + seed_tag(seed) + ".rfl1")).string(),
                      tm.params, meta);
      write_file(out / "traces" / (method_name_arg + "_" + seed_tag(seed) + ".csv"),
                 trace_csv(tm.trace));
    });
  }
  if (cmd_evaluate->parsed()) {
    return guarded([&] {
      ExperimentConfig cfg = load();
      fs::path out(out_dir(cfg));
      SeedContext ctx = make_seed_context(cfg, seed, out);
      nlohmann::json cj = config_to_json(cfg);
      cj.erase("output_dir");
      std::string hash = config_hash(cj);
      if (method_name_arg == "ZeroShot") {
        write_report_json(out, evaluate_model(ctx, cfg, ctx.pre.vision, ctx.w0, "ZeroShot", hash));
        return;
      }
      fs::path ckpt = out / "checkpoints" / (method_name_arg + "_" + seed_tag(seed) + ".rfl1");
      Checkpoint c = load_checkpoint(ckpt.string());
      VisionParams vision;
      HeadWeights head;
      unpack_trainable(c.params, vision, head);
      write_report_json(out, evaluate_model(ctx, cfg, vision, head, method_name_arg, hash));
    });
  }
  if (cmd_posthoc->parsed()) {
    return guarded([&] {
      ExperimentConfig cfg = load();
      fs::path out(out_dir(cfg));
      SeedContext ctx = make_seed_context(cfg, seed, out);
      std::map<std::string, TrainedModel> trained;
      std::vector<std::string> bases = cfg.posthoc.wise_methods;
      bases.insert(bases.end(), cfg.posthoc.tpgm_methods.begin(), cfg.posthoc.tpgm_methods.end());
      for (const std::string& base : bases) {
        if (trained.count(base)) continue;
        Method m = parse_method(base);
        FinetuneConfig fc = cell_finetune_config(cfg, m, seed);
        fs::path ckpt = out / "checkpoints" / (base + "_" + seed_tag(seed) + ".rfl1");
        TrainedModel tm;
        if (fs::exists(ckpt)) {
          Checkpoint c = load_checkpoint(ckpt.string());
          tm.params = c.params;
          tm.zero_shot_ref = ctx.zs_ref;
          tm.method = m;
          tm.config = fc;
        } else {
          tm = finetune(ctx.pre, ctx.bench, m, fc);
        }
        trained.emplace(base, std::move(tm));
      }
      std::vector<CellError> errors;
      run_posthoc_for_seed(cfg, ctx, trained, out, errors);
      if (!errors.empty())
        throw std::runtime_error("posthoc: " + errors[0].cell + ": " + errors[0].message);
    });
  }
  if (cmd_report->parsed()) {
    return guarded([&] {
      std::string dir = out_override;
      if (dir.empty()) {
        if (config_path.empty()) throw ConfigError("report: need --out or --config");
        dir = load().output_dir;
      }
      write_report(dir);
    });
  }
  return 1;
}

}  // namespace rflab
