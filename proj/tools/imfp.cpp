// SPDX-License-Identifier: Apache-2.0
//
// imfp: command-line driver for the fingerprint beam-alignment pipeline.
// Stages exchange data only through files in the output directory.

#include <CLI11.hpp>
#include <fmt/core.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "imfp/experiment.hpp"

namespace fs = std::filesystem;
using namespace imfp;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
  unsigned jobs = 1;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "root seed (overrides the configuration)");
  app->add_option("--out", o.out, "output directory (overrides the configuration)");
  app->add_option("--set", o.sets, "override a field: dotted.path=value")->take_all();
  app->add_option("--jobs", o.jobs, "worker threads (0 = all cores)");
}

struct Context {
  ExperimentConfig cfg;
  fs::path out;
  unsigned jobs = 1;
};

Context make_context(const CommonOptions& o) {
  std::vector<std::string> sets = o.sets;
  if (o.seed) sets.push_back(fmt::format("seed={}", *o.seed));
  if (!o.out.empty()) sets.push_back("output_dir=" + json(o.out).dump());
  Context ctx{load_config_file(o.config, sets), {}, o.jobs};
  ctx.out = ctx.cfg.output_dir;
  fs::create_directories(ctx.out);
  write_file_atomic(ctx.out / "schema.json", output_schema().dump(2) + "\n");
  // The echoed configuration is location-independent, like the config hash.
  json echoed = ctx.cfg.doc;
  echoed.erase("output_dir");
  write_file_atomic(ctx.out / "config.json", echoed.dump(2) + "\n");
  return ctx;
}

const LocationBin& find_bin(const ExperimentConfig& c, std::optional<int> id) {
  if (!id) return c.bins.front();
  for (const auto& b : c.bins) {
    if (b.bin_id == *id) return b;
  }
  throw Error(fmt::format("bin {} is not defined in the configuration", *id));
}

json provenance(const ExperimentConfig& c) { return {{"config_hash", c.hash()}, {"root_seed", c.seed}}; }

fs::path channels_path(const Context& ctx, const LocationBin& bin, const std::string& given) {
  return given.empty() ? ctx.out / fmt::format("channels_bin{}.jsonl", bin.bin_id) : fs::path(given);
}

std::vector<ChannelInstance> load_channels(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(fmt::format("cannot open channel file '{}'", p.string()));
  return read_channels_jsonl(in);
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open '{}'", p.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

NoiseSetting db_setting(const ExperimentConfig& c) {
  return c.db_noiseless ? NoiseSetting{true, 0.0} : NoiseSetting{false, c.db_eirp_dbm};
}

/// db_index.json lists every bin database in the output directory.
void update_db_index(const Context& ctx, const std::string& pair_space, const LocationBin& bin, const std::string& type,
                     std::size_t n_obs) {
  const fs::path path = ctx.out / "db_index.json";
  json index = {{"codebook_hash", pair_space}, {"bins", json::object()}};
  if (fs::exists(path)) {
    const json old = json::parse(read_all(path));
    if (old.value("codebook_hash", "") == index["codebook_hash"]) index["bins"] = old.value("bins", json::object());
  }
  json entry = to_json(bin);
  entry["observations"] = n_obs;
  if (type != "B") entry["type_a"] = {fmt::format("db_a_bin{}.json", bin.bin_id), fmt::format("db_a_bin{}.bin", bin.bin_id)};
  if (type != "A") entry["type_b"] = fmt::format("db_b_bin{}.json", bin.bin_id);
  entry.update(provenance(ctx.cfg));
  index["bins"][std::to_string(bin.bin_id)] = entry;
  write_file_atomic(path, index.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

void cmd_gen_channels(const CommonOptions& o, std::optional<std::size_t> count, std::optional<int> bin_id) {
  const Context ctx = make_context(o);
  std::vector<LocationBin> bins;
  if (bin_id) bins.push_back(find_bin(ctx.cfg, bin_id));
  else bins = ctx.cfg.bins;
  for (const auto& bin : bins) {
    const auto data =
        generate_channels(ctx.cfg, ctx.cfg.traffic, bin, count.value_or(ctx.cfg.instances_per_bin), ctx.jobs);
    std::ostringstream os;
    json extra = provenance(ctx.cfg);
    extra["bin_id"] = bin.bin_id;
    write_channels_jsonl(os, data, extra);
    const auto path = channels_path(ctx, bin, "");
    write_file_atomic(path, os.str());
    fmt::print("wrote {} instances to {}\n", data.size(), path.string());
  }
}

void cmd_sweep(const CommonOptions& o, const std::string& channels, std::size_t index, std::optional<double> eirp,
               bool reference, std::optional<int> bin_id) {
  const Context ctx = make_context(o);
  const World w = make_world(ctx.cfg);
  const auto& bin = find_bin(ctx.cfg, bin_id);
  const auto data = load_channels(channels_path(ctx, bin, channels));
  if (index >= data.size()) throw Error(fmt::format("instance {} out of range ({} instances)", index, data.size()));
  const NoiseSetting setting = eirp ? NoiseSetting{false, *eirp} : NoiseSetting{true, 0.0};
  const TrainingConfig trn = training_for(ctx.cfg, setting);
  const std::uint64_t seed = derive_seed(stream_seed(ctx.cfg.seed, Stream::measurement), index);
  SweepTable t = reference ? exhaustive_sweep(data[index], w.rsu, w.cv, ctx.cfg.pulse, trn, seed, ctx.jobs)
                           : fast_sweep(BeamspaceChannel(data[index], w.rsu, w.cv, ctx.cfg.pulse), trn, seed);
  std::ostringstream os;
  write_sweep_csv(os, t,
                  {fmt::format("config_hash={} seed={}", ctx.cfg.hash(), ctx.cfg.seed),
                   fmt::format("instance={} eirp_dbm={} route={}", index, format_num(setting.label_eirp()),
                               reference ? "reference" : "beamspace")});
  const auto path = ctx.out / fmt::format("sweep_bin{}_{}.csv", bin.bin_id, index);
  write_file_atomic(path, os.str());
  fmt::print("wrote {} pairs to {}\n", t.size(), path.string());
}

void cmd_build_db(const CommonOptions& o, const std::string& channels, const std::string& type,
                  std::optional<int> bin_id) {
  const Context ctx = make_context(o);
  const World w = make_world(ctx.cfg);
  const auto& bin = find_bin(ctx.cfg, bin_id);
  const auto data = load_channels(channels_path(ctx, bin, channels));
  const auto obs = observe_all(ctx.cfg, w, data, db_setting(ctx.cfg), stream_seed(ctx.cfg.seed, Stream::database),
                               ctx.jobs);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  const FingerprintDbA dba = db_from_observations(ctx.cfg, w, bin, obs, all);
  if (type == "A" || type == "both") {
    json j = bin_a_json(dba, bin.bin_id);
    j.update(provenance(ctx.cfg));
    write_file_atomic(ctx.out / fmt::format("db_a_bin{}.json", bin.bin_id), j.dump() + "\n");
    write_file_atomic(ctx.out / fmt::format("db_a_bin{}.bin", bin.bin_id),
                      encode_bin_a(dba, bin.bin_id, provenance(ctx.cfg)));
  }
  if (type == "B" || type == "both") {
    json j = bin_b_json(summarize_a_to_b(dba), bin.bin_id);
    j.update(provenance(ctx.cfg));
    write_file_atomic(ctx.out / fmt::format("db_b_bin{}.json", bin.bin_id), j.dump() + "\n");
  }
  update_db_index(ctx, w.pair_space, bin, type, data.size());
  fmt::print("built type {} fingerprints for bin {} from {} instances\n", type, bin.bin_id, data.size());
}

void cmd_select(const CommonOptions& o, const std::string& db_path, const std::string& method, std::size_t n_b,
                std::optional<double> d_l, std::optional<int> bin_id) {
  const Context ctx = make_context(o);
  const World w = make_world(ctx.cfg);
  const auto& bin = find_bin(ctx.cfg, bin_id);
  const Method m = method_from_string(method);
  RankedCandidates rc;
  if (m == Method::position_only) {
    if (!d_l) throw Error("position_only selection needs --d-l");
    const auto p = position_only_select(positions_scene(ctx.cfg, *d_l), w.rsu, w.cv);
    rc.bin_id = bin.bin_id;
    rc.method = m;
    rc.pairs = {p.pair_id};
    rc.scores = {1.0};
    rc.tiers = {Tier::correlated};
  } else {
    if (db_path.empty()) throw Error("selection needs --db");
    const fs::path p(db_path);
    FingerprintDbA dba;
    FingerprintDbB dbb;
    dba.codebook_hash = dbb.codebook_hash = w.pair_space;
    try {
      if (p.extension() == ".bin") {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw Error(fmt::format("cannot open '{}'", p.string()));
        decode_bin_a(dba, in);
        dbb = summarize_a_to_b(dba);
      } else {
        const json j = json::parse(read_all(p));
        if (j.contains("observations")) {
          load_bin_a(dba, j);
          dbb = summarize_a_to_b(dba);
        } else {
          load_bin_b(dbb, j);
          if (m == Method::minmisprob) throw Error("minmisprob needs a type A database");
        }
      }
    } catch (const Error& e) {
      throw Error(fmt::format("refusing database '{}': {}", p.string(), e.what()));
    }
    if (dbb.num_pairs != w.num_pairs()) throw Error("refusing database: pair count differs from the configuration");
    rc = m == Method::avgpow ? avgpow_select(dbb, bin.bin_id, n_b) : minmisprob_select(dba, bin.bin_id, n_b);
  }
  json j = to_json(rc);
  j.update(provenance(ctx.cfg));
  j["codebook_hash"] = w.pair_space;
  const auto path = ctx.out / fmt::format("candidates_bin{}_{}.json", bin.bin_id, method);
  write_file_atomic(path, j.dump(2) + "\n");
  fmt::print("wrote {} candidates to {}\n", rc.pairs.size(), path.string());
}

void cmd_evaluate(const CommonOptions& o, const std::string& channels, std::optional<int> bin_id) {
  const Context ctx = make_context(o);
  const World w = make_world(ctx.cfg);
  const auto& bin = find_bin(ctx.cfg, bin_id);
  const auto data = load_channels(channels_path(ctx, bin, channels));
  const EvalData ev = evaluate_cv(ctx.cfg, w, bin, data, {}, ctx.jobs);
  const auto cells = ppl_cells(ctx.cfg, ev);
  const auto tag = fmt::format("bin{}", bin.bin_id);

  json report = eval_json(ctx.cfg, cells);
  report["bin_id"] = bin.bin_id;
  json targets = json::array();
  for (std::size_t s = 0; s < ev.settings.size(); ++s) {
    for (std::size_t m = 0; m < ev.methods.size(); ++m) {
      const auto nb = budget_for_target(ev, s, m, ctx.cfg.ppl_target_c_db, ctx.cfg.ppl_target);
      targets.push_back({{"method", ev.methods[m]},
                         {"eirp_dbm", ev.settings[s].noiseless ? json(nullptr) : json(ev.settings[s].eirp_dbm)},
                         {"c_db", ctx.cfg.ppl_target_c_db},
                         {"target", ctx.cfg.ppl_target},
                         {"n_b", nb ? json(*nb) : json(nullptr)}});
    }
  }
  report["budget_for_target"] = std::move(targets);

  // Reported, not asserted: both depend on the channel surrogate.
  std::vector<double> spread;
  for (const auto& ch : data) {
    if (ch.rays.size() < 2) continue;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& r : ch.rays) {
      lo = std::min(lo, std::norm(r.gain));
      hi = std::max(hi, std::norm(r.gain));
    }
    spread.push_back(linear_to_db(hi / lo));
  }
  std::sort(spread.begin(), spread.end());
  report["channels"] = {
      {"instances", data.size()},
      {"distinct_ever_best_pairs", std::set<std::size_t>(ev.best_pair.begin(), ev.best_pair.end()).size()},
      {"los_blocked_fraction",
       data.empty() ? 0.0
                    : static_cast<double>(std::count(ev.los_blocked.begin(), ev.los_blocked.end(), true)) /
                          static_cast<double>(data.size())},
      {"ray_power_spread_db_median", spread.empty() ? json(nullptr) : json(spread[spread.size() / 2])}};

  write_file_atomic(ctx.out / fmt::format("eval_ppl_{}.csv", tag), ppl_csv(ctx.cfg, cells));
  write_file_atomic(ctx.out / fmt::format("eval_rate_{}.csv", tag), rate_csv(ctx.cfg, ev));
  write_file_atomic(ctx.out / fmt::format("eval_{}.json", tag), report.dump(2) + "\n");
  write_file_atomic(ctx.out / fmt::format("plot_ppl_vs_nb_{}.csv", tag), plot_ppl_csv(ctx.cfg, cells, false));
  write_file_atomic(ctx.out / fmt::format("plot_ppl_vs_nb_noisy_{}.csv", tag), plot_ppl_csv(ctx.cfg, cells, true));
  write_file_atomic(ctx.out / fmt::format("plot_rate_vs_nb_{}.csv", tag), rate_csv(ctx.cfg, ev));
  fmt::print("evaluated {} instances of bin {} ({} folds)\n", data.size(), bin.bin_id, ctx.cfg.folds);
}

void cmd_overhead(const CommonOptions& o) {
  const Context ctx = make_context(o);
  const auto rows = overhead_table(ctx.cfg);
  const std::string csv = overhead_csv(ctx.cfg, rows);
  write_file_atomic(ctx.out / "overhead.csv", csv);
  write_file_atomic(ctx.out / "plot_overhead_vs_na.csv", csv);
  fmt::print("{:>6} {:>6} {:>12} {:>5} {:>10} {:>9}\n", "n_a", "v", "t_11ad_us", "n_fp", "t_fp_us", "t_b_ms");
  for (const auto& r : rows) {
    fmt::print("{:>6} {:>6} {:>12.1f} {:>5} {:>10.1f} {:>9.2f}\n", r.n_a, r.speed, r.t_11ad * 1e6, r.n_fp,
               r.t_fp * 1e6, r.t_b * 1e3);
  }
}

void cmd_online(const CommonOptions& o, const std::string& channels, std::optional<std::size_t> runs,
                std::optional<int> bin_id) {
  const Context ctx = make_context(o);
  const World w = make_world(ctx.cfg);
  const auto& bin = find_bin(ctx.cfg, bin_id);
  const auto data = load_channels(channels_path(ctx, bin, channels));
  const auto res = run_online(ctx.cfg, w, bin, data, runs.value_or(ctx.cfg.online_runs), ctx.jobs);
  write_file_atomic(ctx.out / fmt::format("online_trajectory_bin{}.csv", bin.bin_id),
                    online_trajectory_csv(ctx.cfg, res, ctx.cfg.trajectory_runs));
  write_file_atomic(ctx.out / fmt::format("online_summary_bin{}.csv", bin.bin_id), online_summary_csv(ctx.cfg, res));
  fmt::print("ran {} online replications over {} vehicles\n", res.loss_db.front().size(), res.horizon);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fingerprint-based mmWave beam alignment pipeline"};
  app.require_subcommand(1);

  CommonOptions common;
  std::optional<int> bin;
  std::string channels;

  auto* gen = app.add_subcommand("gen-channels", "generate channel instances (JSON lines)");
  add_common(gen, common);
  std::optional<std::size_t> count;
  gen->add_option("--count", count, "instances per bin (default: instances_per_bin)");
  gen->add_option("--bin", bin, "bin id (default: every configured bin)");

  auto* sweep = app.add_subcommand("sweep", "exhaustive sweep of one instance (CSV)");
  add_common(sweep, common);
  std::size_t index = 0;
  std::optional<double> eirp;
  bool reference = false;
  sweep->add_option("--channels", channels, "channel file");
  sweep->add_option("--index", index, "instance index");
  sweep->add_option("--eirp", eirp, "EIRP in dBm (default: noiseless)");
  sweep->add_flag("--reference", reference, "use the per-pair tap-domain route");
  sweep->add_option("--bin", bin, "bin id");

  auto* build = app.add_subcommand("build-db", "build fingerprint databases");
  add_common(build, common);
  std::string type = "both";
  build->add_option("--channels", channels, "channel file");
  build->add_option("--type", type, "A, B or both")->check(CLI::IsMember({"A", "B", "both"}));
  build->add_option("--bin", bin, "bin id");

  auto* select = app.add_subcommand("select", "rank candidate beam pairs");
  add_common(select, common);
  std::string db_path;
  std::string method = "minmisprob";
  std::size_t n_b = 10;
  std::optional<double> d_l;
  select->add_option("--db", db_path, "database file (.json type A/B or .bin type A)");
  select->add_option("--method", method, "avgpow, minmisprob or position_only");
  select->add_option("--n-b", n_b, "number of candidates");
  select->add_option("--d-l", d_l, "CV longitudinal position for position_only, m");
  select->add_option("--bin", bin, "bin id");

  auto* evaluate = app.add_subcommand("evaluate", "cross-validated power-loss and rate evaluation");
  add_common(evaluate, common);
  evaluate->add_option("--channels", channels, "channel file");
  evaluate->add_option("--bin", bin, "bin id");

  auto* overhead = app.add_subcommand("overhead", "training overhead and beam coherence table");
  add_common(overhead, common);

  auto* online = app.add_subcommand("online", "online database collection runs");
  add_common(online, common);
  std::optional<std::size_t> runs;
  online->add_option("--channels", channels, "channel file");
  online->add_option("--runs", runs, "replications (default: online.runs)");
  online->add_option("--bin", bin, "bin id");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) cmd_gen_channels(common, count, bin);
    else if (*sweep) cmd_sweep(common, channels, index, eirp, reference, bin);
    else if (*build) cmd_build_db(common, channels, type, bin);
    else if (*select) cmd_select(common, db_path, method, n_b, d_l, bin);
    else if (*evaluate) cmd_evaluate(common, channels, bin);
    else if (*overhead) cmd_overhead(common);
    else if (*online) cmd_online(common, channels, runs, bin);
  } catch (const std::exception& e) {
    fmt::print(stderr, "imfp: error: {}\n", e.what());
    return 1;
  }
  return 0;
}
