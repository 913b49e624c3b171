// dtsp: data generation, training, rollout, offset sweeps and evaluation
// for Decision-Transformer TSP policies.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dtsp/dtsp.hpp"

namespace fs = std::filesystem;
using namespace dtsp;

namespace {

unsigned default_workers() { return std::max(1U, std::thread::hardware_concurrency()); }

struct ConfigFlags {
  std::string config;
  std::string preset;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON config file (default: $DTSP_CONFIG)");
    cmd->add_option("--preset", preset, "Named preset: full-n20, full-n50, full-n100, desk-n10, desk-n5");
  }

  RunConfig resolve() const {
    std::optional<fs::path> file;
    if (!config.empty()) file = config;
    else if (const char* env = std::getenv("DTSP_CONFIG"); env != nullptr && *env != '\0') file = env;
    return resolve_config(file, preset.empty() ? std::nullopt : std::optional<std::string>(preset));
  }
};

std::string tour_json(const Tour& tour) { return nlohmann::json(tour).dump(); }

std::string prediction_line(const std::string& id, const std::string& mode, const Tour& tour, double cost, const std::vector<double>& rtg_pred) {
  std::string s = "{\"id\":" + nlohmann::json(id).dump() + ",\"mode\":" + nlohmann::json(mode).dump() + ",\"tour\":" + tour_json(tour) +
                  ",\"cost\":" + io::format_double(cost) + ",\"rtg_pred\":[";
  for (std::size_t i = 0; i < rtg_pred.size(); ++i) s += (i ? "," : "") + io::format_double(rtg_pred[i]);
  return s + "]}";
}

/// Runs `work(i)` for i in [0, count) on `workers` threads, then emits the
/// results in index order.
template <typename Work>
std::vector<std::string> ordered_map(std::size_t count, unsigned workers, Work work) {
  std::vector<std::string> out(count);
  auto run = [&](unsigned w) {
    for (std::size_t i = w; i < count; i += workers) out[i] = work(i);
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  return out;
}

std::vector<ScoredTour> read_predictions(const fs::path& path) {
  io::LineReader reader(path);
  std::vector<ScoredTour> out;
  std::string line;
  bool complete = false;
  while (reader.next(line, complete)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("cost").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, path.string() + " line " + std::to_string(reader.line_no()) + ": " + e.what());
    }
  }
  return out;
}

std::vector<double> parse_offsets(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArg, "bad offset '" + item + "'");
    }
  }
  if (out.empty()) fail(ErrorCode::InvalidArg, "offset list is empty");
  return out;
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

RtgMode parse_mode(const std::string& mode, double value) {
  if (mode == "predicted") return RtgMode::predicted();
  if (mode == "offset") return RtgMode::predicted_offset(value);
  if (mode == "fixed") return RtgMode::fixed(value);
  if (mode == "bc_zero") return RtgMode::bc_zero();
  fail(ErrorCode::InvalidArg, "unknown mode '" + mode + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decision-Transformer TSP toolkit"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate and solve random instances into a dataset file");
  ConfigFlags gen_cfg;
  gen_cfg.add(gen);
  int gen_n = 0;
  std::int64_t gen_count = 0;
  std::string gen_method, gen_out;
  std::uint64_t gen_seed = 0;
  unsigned gen_workers = default_workers();
  std::optional<double> sa_tmax, sa_tmin;
  std::optional<std::int64_t> sa_steps;
  gen->add_option("--n", gen_n, "Nodes per instance (>= 3)")->required()->check(CLI::Range(3, 100000));
  gen->add_option("--count", gen_count, "Number of records")->required()->check(CLI::NonNegativeNumber);
  gen->add_option("--method", gen_method, "Heuristic: nn, ni, fi, sa")->required()->check(CLI::IsMember({"nn", "ni", "fi", "sa"}));
  gen->add_option("--seed", gen_seed, "Generation seed")->required();
  gen->add_option("--out", gen_out, "Output dataset (.jsonl or .jsonl.gz)")->required();
  gen->add_option("--workers", gen_workers, "Worker threads")->capture_default_str();
  gen->add_option("--sa-tmax", sa_tmax, "SA starting temperature (preset default 2.5)");
  gen->add_option("--sa-tmin", sa_tmin, "SA ending temperature (preset default 0.025)");
  gen->add_option("--sa-steps", sa_steps, "SA iterations (full-n20: 50000, desk: 20000)");

  // solve
  auto* sol = app.add_subcommand("solve", "Run a heuristic or the exact solver on a dataset's instances");
  std::string sol_data, sol_method, sol_out;
  std::uint64_t sol_seed = 0;
  ConfigFlags sol_cfg;
  sol_cfg.add(sol);
  sol->add_option("--data", sol_data, "Dataset file")->required();
  sol->add_option("--method", sol_method, "nn, ni, fi, sa or exact")->required()->check(CLI::IsMember({"nn", "ni", "fi", "sa", "exact"}));
  sol->add_option("--seed", sol_seed, "SA seed");
  sol->add_option("--out", sol_out, "Output predictions JSONL")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a policy; keeps the checkpoint with minimum validation loss");
  ConfigFlags tr_cfg;
  tr_cfg.add(tr);
  std::string tr_train, tr_val, tr_out;
  std::optional<double> o_lr, o_c, o_alpha, o_wd, o_clip;
  std::optional<int> o_batch, o_epochs, o_dmodel, o_heads, o_enc, o_dec, o_micro;
  std::optional<std::uint64_t> o_seed;
  std::optional<std::string> o_opt;
  bool o_bc = false, o_augment = false, o_final = false, o_no_clip = false;
  tr->add_option("--train", tr_train, "Training dataset")->required();
  tr->add_option("--val", tr_val, "Validation dataset")->required();
  tr->add_option("--out-dir", tr_out, "Directory for best.ckpt and train_report.jsonl")->required();
  tr->add_option("--seed", o_seed, "Training seed")->required();
  tr->add_option("--lr", o_lr, "Learning rate (full-size recipe: 0.0025)");
  tr->add_option("--batch-size", o_batch, "Batch size (full-size recipe: 1000)");
  tr->add_option("--epochs", o_epochs, "Maximum epochs (full-size recipe: 2000)");
  tr->add_option("--c", o_c, "Loss balance c (full-size recipe: 0.5)");
  tr->add_option("--alpha", o_alpha, "Expectile level (full-size recipe: 0.99)");
  tr->add_option("--weight-decay", o_wd, "Decoupled weight decay (full-size recipe: 0.0)");
  tr->add_option("--optimizer", o_opt, "adamw or schedule_free_adamw (full-size recipe: schedule-free)");
  tr->add_option("--grad-clip", o_clip, "Global gradient-norm clip (default 1.0)");
  tr->add_flag("--no-grad-clip", o_no_clip, "Disable gradient clipping");
  tr->add_option("--d-model", o_dmodel, "Embedding width (full-size recipe: 128)");
  tr->add_option("--heads", o_heads, "Attention heads (full-size recipe: 8)");
  tr->add_option("--enc-layers", o_enc, "Encoder layers (full-size recipe: 2)");
  tr->add_option("--dec-layers", o_dec, "Decoder layers (full-size recipe: 2)");
  tr->add_option("--micro-batch", o_micro, "Records per forward/backward chunk");
  tr->add_flag("--bc", o_bc, "Behaviour cloning: RTG forced to 0, expectile term dropped");
  tr->add_flag("--augment", o_augment, "Random unit-square symmetries per record");
  tr->add_flag("--include-final-action", o_final, "Include the forced depot return in the action loss");

  // rollout
  auto* ro = app.add_subcommand("rollout", "Construct tours with a trained policy");
  std::string ro_ckpt, ro_data, ro_out, ro_mode = "predicted";
  double ro_value = 0.0;
  bool ro_sample = false;
  std::optional<std::uint64_t> ro_seed;
  unsigned ro_workers = default_workers();
  ro->add_option("--ckpt", ro_ckpt, "Checkpoint")->required();
  ro->add_option("--data", ro_data, "Dataset with instances")->required();
  ro->add_option("--out", ro_out, "Output predictions JSONL")->required();
  ro->add_option("--mode", ro_mode, "predicted, offset, fixed or bc_zero")->capture_default_str()->check(CLI::IsMember({"predicted", "offset", "fixed", "bc_zero"}));
  ro->add_option("--value", ro_value, "Offset (mode offset) or constant RTG (mode fixed)")->capture_default_str();
  ro->add_flag("--sample", ro_sample, "Sample actions instead of greedy argmax (requires --seed)");
  ro->add_option("--seed", ro_seed, "Sampling seed");
  ro->add_option("--workers", ro_workers, "Worker threads")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Optimality-gap report for prediction files against a dataset");
  std::string ev_data, ev_out;
  std::vector<std::string> ev_preds;
  bool ev_original = false;
  ev->add_option("--data", ev_data, "Dataset with reference optima")->required();
  ev->add_option("--pred", ev_preds, "Predictions as LABEL=PATH (repeatable)");
  ev->add_flag("--include-original", ev_original, "Add the dataset's own heuristic tours as 'Original'");
  ev->add_option("--out", ev_out, "Report JSON")->required();

  // sweep
  auto* sw = app.add_subcommand("sweep", "Mean cost/gap under a list of offsets added to predicted RTG");
  std::string sw_ckpt, sw_data, sw_out, sw_offsets;
  sw->add_option("--ckpt", sw_ckpt, "Checkpoint")->required();
  sw->add_option("--data", sw_data, "Dataset with instances")->required();
  sw->add_option("--offsets", sw_offsets, "Comma-separated offsets, e.g. -0.1,0,0.1")->required();
  sw->add_option("--out", sw_out, "Report JSON")->required();

  // validate
  auto* va = app.add_subcommand("validate", "Validation loss of a checkpoint on a dataset");
  std::string va_ckpt, va_data;
  va->add_option("--ckpt", va_ckpt, "Checkpoint")->required();
  va->add_option("--data", va_data, "Dataset")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      const RunConfig rc = gen_cfg.resolve();
      BuildOptions opts;
      opts.n = gen_n;
      opts.count = gen_count;
      opts.method = gen_method;
      opts.seed = gen_seed;
      opts.workers = gen_workers;
      if (gen_method == "sa") {
        SaConfig sa = rc.sa;
        if (sa_tmax) sa.t_max = *sa_tmax;
        if (sa_tmin) sa.t_min = *sa_tmin;
        if (sa_steps) sa.steps = *sa_steps;
        sa.validate();
        opts.sa_cfg = sa;
        std::cerr << "sa: t_max=" << sa.t_max << " t_min=" << sa.t_min << " steps=" << sa.steps << "\n";
      }
      const auto meta = build_dataset(gen_out, opts);
      std::cerr << "wrote " << meta.count << " records to " << gen_out << " (mean_rtg " << meta.mean_rtg << ")\n";
    } else if (sol->parsed()) {
      const RunConfig rc = sol_cfg.resolve();
      const Dataset ds = load_dataset(sol_data);
      io::AtomicWriter out(sol_out);
      for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& inst = ds.records[i].instance;
        Tour tour;
        if (sol_method == "exact") {
          tour = solve_exact(inst);
        } else {
          SaConfig sa = rc.sa;
          sa.seed = derive_seed(sol_seed, i);
          tour = solve(parse_method(sol_method), inst, sa);
        }
        out.write_line(prediction_line(inst.id(), sol_method, tour, tour_cost(inst, tour), {}));
      }
      out.commit();
    } else if (tr->parsed()) {
      RunConfig rc = tr_cfg.resolve();
      TrainConfig& tc = rc.train;
      ModelConfig& mc = rc.model;
      if (o_lr) tc.lr = *o_lr;
      if (o_batch) tc.batch_size = *o_batch;
      if (o_epochs) tc.max_epochs = *o_epochs;
      if (o_c) tc.c = *o_c;
      if (o_alpha) tc.alpha = *o_alpha;
      if (o_wd) tc.weight_decay = *o_wd;
      if (o_opt) tc.optimizer = *o_opt;
      if (o_clip) tc.grad_clip = *o_clip;
      if (o_no_clip) tc.grad_clip = 0.0;
      if (o_micro) tc.micro_batch = *o_micro;
      if (o_seed) tc.seed = *o_seed;
      if (o_bc) tc.bc_mode = true;
      if (o_augment) tc.augment = true;
      if (o_final) tc.include_final_action = true;
      if (o_dmodel) mc.d_model = *o_dmodel;
      if (o_heads) mc.n_heads = *o_heads;
      if (o_enc) mc.enc_layers = *o_enc;
      if (o_dec) mc.dec_layers = *o_dec;
      tc.checkpoint_dir = tr_out;
      const Dataset train_ds = load_dataset(tr_train);
      const Dataset val_ds = load_dataset(tr_val);
      const auto result = train(train_ds, val_ds, mc, tc, [](const EpochStats& e, bool best) {
        std::cout << "epoch " << e.epoch << " ce " << e.train.ce << " expectile " << e.train.expectile << " total " << e.train.total
                  << " val " << e.val_total << (best ? " *" : "") << " (" << e.seconds << "s)" << std::endl;
      });
      std::cout << "best epoch " << result.report.best_epoch << " val " << result.report.best_val << "\n";
      if (tc.max_epochs == 0) save_checkpoint(fs::path(tr_out) / "best.ckpt", result.best);
    } else if (ro->parsed()) {
      if (ro_sample && !ro_seed) fail(ErrorCode::InvalidArg, "--sample requires --seed");
      const Checkpoint ck = load_checkpoint(ro_ckpt);
      const Dataset ds = load_dataset(ro_data);
      RtgMode mode = parse_mode(ro_mode, ro_value);
      mode.sample = ro_sample;
      const DecisionTransformer<float> model(ck.model, ck.params);
      std::atomic<std::size_t> done{0};
      const auto lines = ordered_map(ds.records.size(), std::max(1U, ro_workers), [&](std::size_t i) {
        RtgMode m = mode;
        m.seed = derive_seed(ro_seed.value_or(0), i);
        const auto& inst = ds.records[i].instance;
        const auto res = rollout(model, inst, m);
        const std::size_t k = ++done;
        if (k % 100 == 0) std::cerr << "rolled out " << k << "/" << ds.records.size() << "\n";
        return prediction_line(inst.id(), mode.name(), res.tour, tour_cost(inst, res.tour), res.rtg_pred);
      });
      io::AtomicWriter out(ro_out);
      for (const auto& line : lines) out.write_line(line);
      out.commit();
    } else if (ev->parsed()) {
      const Dataset ds = load_dataset(ev_data);
      std::vector<Reference> refs;
      for (const auto& r : ds.records) refs.push_back({r.instance.id(), r.opt_cost});
      std::vector<GapReport> reports;
      const std::string group = upper(ds.meta.method);
      if (ev_original) {
        std::vector<ScoredTour> own;
        for (std::size_t i = 0; i < ds.records.size(); ++i) own.push_back({ds.records[i].instance.id(), ds.cost(i)});
        reports.push_back(evaluate("Original", ds.meta.n, own, refs));
        reports.back().data = group;
      }
      for (const auto& spec : ev_preds) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) fail(ErrorCode::InvalidArg, "--pred expects LABEL=PATH, got '" + spec + "'");
        reports.push_back(evaluate(spec.substr(0, eq), ds.meta.n, read_predictions(spec.substr(eq + 1)), refs));
        reports.back().data = group;
      }
      if (reports.empty()) fail(ErrorCode::InvalidArg, "nothing to evaluate: pass --pred or --include-original");
      const auto table = compare(reports);
      nlohmann::json j;
      j["reports"] = nlohmann::json::array();
      for (const auto& r : reports) j["reports"].push_back(to_json(r));
      j["table"] = table.json();
      io::write_file_atomic(ev_out, j.dump(2) + "\n");
      std::cout << table.text();
    } else if (sw->parsed()) {
      const auto offsets = parse_offsets(sw_offsets);
      const Checkpoint ck = load_checkpoint(sw_ckpt);
      const Dataset ds = load_dataset(sw_data);
      std::vector<Instance> instances;
      std::vector<double> optima;
      bool have_optima = true;
      for (const auto& r : ds.records) {
        instances.push_back(r.instance);
        if (r.opt_cost) optima.push_back(*r.opt_cost);
        else have_optima = false;
      }
      const DecisionTransformer<float> model(ck.model, ck.params);
      const auto sweep = offset_sweep(model, instances, offsets, have_optima ? std::optional(optima) : std::nullopt);
      nlohmann::json j;
      j["data"] = upper(ds.meta.method);
      j["n"] = ds.meta.n;
      j["count"] = ds.records.size();
      j["argmin_offset"] = sweep.rows[sweep.argmin].offset;
      j["rows"] = nlohmann::json::array();
      std::cout << "offset      mean_cost  mean_gap(%)\n";
      for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
        const auto& row = sweep.rows[i];
        nlohmann::json r = {{"offset", row.offset}, {"mean_cost", row.mean_cost}, {"std_cost", row.std_cost}, {"argmin", i == sweep.argmin}};
        r["mean_gap"] = row.mean_gap ? nlohmann::json(*row.mean_gap) : nlohmann::json(nullptr);
        r["std_gap"] = row.std_gap ? nlohmann::json(*row.std_gap) : nlohmann::json(nullptr);
        j["rows"].push_back(r);
        char buf[128];
        std::snprintf(buf, sizeof buf, "%8.3f  %10.4f  %11s%s\n", row.offset, row.mean_cost,
                      row.mean_gap ? format_fixed2(*row.mean_gap).c_str() : "-", i == sweep.argmin ? "  <- argmin" : "");
        std::cout << buf;
      }
      io::write_file_atomic(sw_out, j.dump(2) + "\n");
    } else if (va->parsed()) {
      const Checkpoint ck = load_checkpoint(va_ckpt);
      std::cout << io::format_double(validate(ck, load_dataset(va_data))) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::UnknownMethod ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
