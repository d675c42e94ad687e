#include "stkd/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "stkd/checkpoint.hpp"
#include "stkd/errors.hpp"
#include "stkd/projection.hpp"
#include "stkd/reference.hpp"

namespace stkd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFile = "checkpoint.json";

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("missing artifact: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataFormatError("malformed JSON artifact: " + path.string());
  return j;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hash_string(ss.str());
}

void require(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw MissingArtifactError("missing artifact: " + path.string() + " (" + hint + ")");
}

// Resolved config next to a command's outputs, and a one-line note in the log.
void record_config(const RunConfig& c, const fs::path& dir, const std::string& command, std::ostream& log) {
  fs::create_directories(dir);
  write_json(dir / "config.json", {{"command", command}, {"config_hash", config_hash(c)}, {"config", to_json(c)}});
  log << "[" << command << "] config " << config_hash(c) << " -> " << (dir / "config.json").string() << '\n';
}

std::string pct_label(double fraction) { return std::to_string(std::llround(fraction * 100.0)); }

Checkpoint load_role(const fs::path& run, const std::string& role, const std::string& hint) {
  const fs::path p = run / role / kCheckpointFile;
  require(p, hint);
  return load_checkpoint(p);
}

struct NamedCheckpoint {
  std::string label;
  Checkpoint ckpt;
};

std::vector<NamedCheckpoint> collect_checkpoints(const fs::path& run, const CommandOptions& o) {
  std::vector<NamedCheckpoint> out;
  if (o.checkpoint) {
    const fs::path p(*o.checkpoint);
    require(p, "checkpoint given on the command line");
    std::string label = p.parent_path().filename().string();
    if (label.empty()) label = p.stem().string();
    out.push_back({label, load_checkpoint(p)});
    return out;
  }
  if (fs::exists(run)) {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(run)) {
      if (e.is_directory() && fs::exists(e.path() / kCheckpointFile)) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) out.push_back({d.filename().string(), load_checkpoint(d / kCheckpointFile)});
  }
  if (out.empty()) throw MissingArtifactError("no checkpoints under " + run.string() + " (run train-teacher first)");
  return out;
}

RunConfig with_preset(const RunConfig& c, LossKind kind, double target) {
  json j = to_json(c);
  j["loss"]["kind"] = to_string(kind);
  j["prune"]["target"] = target;
  if (!c.preset.empty()) j.merge_patch(preset_patch(c.preset, kind, target));
  RunConfig out = run_config_from_json(j);
  out.validate();
  return out;
}

void log_epochs(std::ostream& log, const std::string& tag, const std::vector<EpochRecord>& history) {
  for (const auto& r : history) {
    log << "[" << tag << "] epoch " << r.epoch + 1 << " lr=" << r.learning_rate << " loss=" << r.train_loss
        << " val_rmse=" << r.val_rmse;
    if (r.routing) log << " teacher_ratio=" << r.teacher_ratio();
    log << '\n';
  }
}

}  // namespace

fs::path run_directory(const RunConfig& c) { return c.run_dir(); }

PreparedData load_prepared(const RunConfig& c) {
  const fs::path data = run_directory(c) / "data";
  require(data / "manifest.json", "run prepare first");
  require(data / "speeds.csv", "run prepare first");
  require(data / "adjacency.csv", "run prepare first");
  PreparedData p;
  p.speeds = load_speed_csv(data / "speeds.csv");
  p.speeds.interval_minutes = c.dataset.interval_minutes;
  const json manifest = read_json(data / "manifest.json");
  p.adjacency.weights = load_distance_csv(data / "adjacency.csv");
  p.adjacency.sigma_sq = manifest.at("sigma_sq").get<double>();
  p.adjacency.epsilon = manifest.at("epsilon").get<double>();
  p.splits = window(p.speeds, c.dataset.history, c.dataset.horizon, c.dataset.split);
  p.graph = GraphKernel(scaled_laplacian(p.adjacency), c.models.spatial_order);
  return p;
}

int cmd_prepare(const RunConfig& c, std::ostream& log) {
  const fs::path dir = run_directory(c) / "data";
  record_config(c, dir, "prepare", log);
  SpeedMatrix speeds;
  RowMatrix distances;
  WeightedAdjacency adjacency;
  if (c.dataset.source == "synthetic") {
    SyntheticData syn = generate_synthetic(c.dataset.synthetic);
    speeds = std::move(syn.speeds);
    distances = std::move(syn.distances);
    adjacency = c.dataset.sigma_sq ? build_adjacency(distances, *c.dataset.sigma_sq, c.dataset.epsilon)
                                   : std::move(syn.adjacency);
  } else {
    require(c.dataset.speeds, "dataset.speeds");
    require(c.dataset.distances, "dataset.distances");
    speeds = load_speed_csv(c.dataset.speeds, c.dataset.delimiter, c.dataset.header);
    speeds.interval_minutes = c.dataset.interval_minutes;
    distances = load_distance_csv(c.dataset.distances, c.dataset.delimiter, c.dataset.header);
    if (distances.rows() != speeds.stations()) {
      throw ValidationError("distance matrix covers " + std::to_string(distances.rows()) + " stations, speeds have " +
                            std::to_string(speeds.stations()));
    }
    const double sigma = c.dataset.sigma_sq ? *c.dataset.sigma_sq : default_sigma_sq(distances);
    adjacency = build_adjacency(distances, sigma, c.dataset.epsilon);
  }
  if (c.dataset.clean) speeds = clean_speeds(speeds);
  const DatasetSplits splits = window(speeds, c.dataset.history, c.dataset.horizon, c.dataset.split);
  const ScaledLaplacian lap = scaled_laplacian(adjacency);

  write_matrix_csv(dir / "speeds.csv", speeds.values);
  write_matrix_csv(dir / "distances.csv", distances);
  write_matrix_csv(dir / "adjacency.csv", adjacency.weights);
  {
    std::ofstream out(dir / "splits.csv");
    out << "split,sample,start_row\n";
    const std::pair<const char*, const WindowedDataset*> parts[] = {
        {"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}};
    for (const auto& [name, ds] : parts) {
      for (std::size_t i = 0; i < ds->start_rows.size(); ++i) out << name << ',' << i << ',' << ds->start_rows[i] << '\n';
    }
    for (std::size_t i = 0; i < splits.purged_starts.size(); ++i) out << "purged," << i << ',' << splits.purged_starts[i] << '\n';
  }
  json files = json::object();
  for (const char* f : {"speeds.csv", "distances.csv", "adjacency.csv", "splits.csv"}) files[f] = file_digest(dir / f);
  const json manifest = {
      {"dataset", c.dataset.name},
      {"source", c.dataset.source},
      {"nodes", speeds.stations()},
      {"timesteps", speeds.timesteps()},
      {"interval_minutes", c.dataset.interval_minutes},
      {"history", c.dataset.history},
      {"horizon", c.dataset.horizon},
      {"sigma_sq", adjacency.sigma_sq},
      {"epsilon", adjacency.epsilon},
      {"lambda_max", lap.lambda_max},
      {"normalization", {{"mean", splits.train.stats.mean}, {"std", splits.train.stats.std}}},
      {"samples",
       {{"train", splits.train.samples()},
        {"val", splits.val.samples()},
        {"test", splits.test.samples()},
        {"purged", splits.purged_starts.size()}}},
      {"files", files}};
  write_json(dir / "manifest.json", manifest);
  log << "[prepare] " << speeds.stations() << " nodes, " << speeds.timesteps() << " rows; samples train/val/test = "
      << splits.train.samples() << '/' << splits.val.samples() << '/' << splits.test.samples() << " ("
      << splits.purged_starts.size() << " purged at split boundaries)\n";
  return kExitOk;
}

int cmd_train_teacher(const RunConfig& c, const CommandOptions& o, std::ostream& log) {
  if (o.role != "teacher" && o.role != "base") throw ConfigError("--role must be teacher or base");
  const PreparedData data = load_prepared(c);
  const fs::path dir = run_directory(c) / o.role;
  record_config(c, dir, "train-teacher", log);
  const auto& blocks = o.role == "teacher" ? c.models.teacher : c.models.base;
  const ModelConfig mc = c.models.resolve(blocks, data.speeds.stations(), c.dataset.history);
  StgcnModel model(mc, c.teacher_train.seed);
  log << "[train-teacher] " << o.role << " with " << model.parameter_count() << " parameters\n";
  TrainResult res = train_teacher(std::move(model), data.splits, data.graph, c.teacher_train);
  log_epochs(log, o.role, res.history);
  Checkpoint ckpt{o.role, std::move(res.model), data.splits.train.stats,
                  {{"best_epoch", res.best_epoch + 1}, {"best_val_rmse", res.best_val_rmse}, {"loss", "target"}}};
  save_checkpoint(dir / kCheckpointFile, ckpt);
  write_history_csv(dir / "history.csv", res.history);
  return kExitOk;
}

int cmd_distill(const RunConfig& c, std::ostream& log) {
  const PreparedData data = load_prepared(c);
  const fs::path run = run_directory(c);
  const Checkpoint teacher = load_role(run, "teacher", "run train-teacher first");
  const fs::path dir = run / ("student-" + to_string(c.loss_kind));
  record_config(c, dir, "distill", log);
  const ModelConfig mc = c.models.resolve(c.models.student, data.speeds.stations(), c.dataset.history);
  StgcnModel student(mc, c.student_train.seed);
  log << "[distill] loss=" << to_string(c.loss_kind) << " alpha1=" << c.loss.alpha1 << " alpha2=" << c.loss.alpha2
      << " alpha3=" << c.loss.alpha3 << " beta=" << c.loss.beta << '\n';
  TrainResult res =
      train_student_kd(std::move(student), teacher.model, data.splits, data.graph, c.student_train, c.loss, c.loss_kind);
  log_epochs(log, "distill", res.history);
  const bool routing = std::any_of(res.history.begin(), res.history.end(), [](const EpochRecord& r) { return r.routing; });
  json meta = {{"best_epoch", res.best_epoch + 1}, {"best_val_rmse", res.best_val_rmse}, {"loss", to_string(c.loss_kind)}};
  if (routing) {
    meta["teacher_ratio"] = res.overall_teacher_ratio();
    log << "[distill] teacher_ratio over training = " << res.overall_teacher_ratio() << '\n';
  }
  save_checkpoint(dir / kCheckpointFile, Checkpoint{"student", std::move(res.model), data.splits.train.stats, meta});
  write_history_csv(dir / "history.csv", res.history);
  return kExitOk;
}

int cmd_prune(const RunConfig& c, const CommandOptions& o, std::ostream& log) {
  const PreparedData data = load_prepared(c);
  const fs::path run = run_directory(c);
  const Checkpoint base = load_role(run, "base", "run train-teacher --role base first");
  std::optional<Checkpoint> teacher;
  if (!o.traditional) teacher = load_role(run, "teacher", "run train-teacher first");
  const std::string label = (o.traditional ? "traditional-" : "prune-") + pct_label(c.prune.schedule.target_sparsity);
  const fs::path dir = run / label;
  record_config(c, dir, "prune", log);

  PruneResult res;
  if (o.traditional) {
    res = traditional_prune_baseline(base.model, data.splits, data.graph, c.prune.train, c.prune.schedule,
                                     c.prune.finetune_epochs);
  } else {
    PruneOptions opts;
    opts.finetune_epochs = c.prune.finetune_epochs;
    opts.finetune_loss = c.prune.finetune_loss;
    res = distill_prune(teacher->model, base.model, data.splits, data.graph, c.prune.train, c.prune.schedule,
                         c.prune.weights, opts);
  }
  for (const auto& e : res.events) {
    log << "[prune] event " << e.event << " epoch " << e.epoch + 1 << " sparsity=" << e.overall_sparsity
        << " mean_kdis=" << e.mean_kdis << '\n';
  }
  log_epochs(log, "finetune", res.finetune_epochs);

  const std::size_t total = res.model.parameter_count();
  const std::size_t kept = total - res.masks.masked();
  const std::size_t teacher_params = parameter_count(
      c.models.resolve(c.models.teacher, data.speeds.stations(), c.dataset.history));
  json layers = json::array();
  for (const auto& l : layer_sparsity(res.masks)) {
    layers.push_back({{"name", l.name}, {"masked", l.masked}, {"total", l.total}, {"sparsity", l.sparsity()}});
  }
  const json summary = {{"method", o.traditional ? "traditional" : "kd"},
                        {"target_sparsity", c.prune.schedule.target_sparsity},
                        {"events", res.events.size()},
                        {"maskable_sparsity", res.masks.sparsity()},
                        {"kept_parameters", kept},
                        {"kept_percent_of_base", 100.0 * kept / total},
                        {"kept_percent_of_teacher", 100.0 * kept / teacher_params},
                        {"layers", layers}};
  write_json(dir / "summary.json", summary);
  log << "[prune] kept " << kept << " parameters: " << std::setprecision(4) << 100.0 * kept / total
      << "% of the base model, " << 100.0 * kept / teacher_params << "% of the teacher\n";
  write_prune_history_csv(dir / "prune_history.csv", res.events);
  std::vector<EpochRecord> all = res.pruning_epochs;
  all.insert(all.end(), res.finetune_epochs.begin(), res.finetune_epochs.end());
  write_history_csv(dir / "history.csv", all);
  save_checkpoint(dir / kCheckpointFile,
                  Checkpoint{o.traditional ? "traditional" : "pruned", std::move(res.model), data.splits.train.stats,
                             {{"target_sparsity", c.prune.schedule.target_sparsity}}});
  return kExitOk;
}

int cmd_eval(const RunConfig& c, const CommandOptions& o, std::ostream& log) {
  const PreparedData data = load_prepared(c);
  const fs::path run = run_directory(c);
  record_config(c, run / "eval", "eval", log);
  std::vector<std::pair<std::string, HorizonMetrics>> rows;
  for (const auto& nc : collect_checkpoints(run, o)) {
    if (nc.ckpt.model.config().nodes != data.speeds.stations()) {
      throw ConfigError("checkpoint " + nc.label + " was built for " + std::to_string(nc.ckpt.model.config().nodes) +
                        " nodes, data has " + std::to_string(data.speeds.stations()));
    }
    rows.emplace_back(nc.label, evaluate(nc.ckpt.model, data.graph, data.splits.test, c.dataset.interval_minutes));
  }
  write_metrics_csv(run / "eval" / "metrics.csv", rows);
  const std::string table = format_metrics_table(rows);
  std::ofstream(run / "eval" / "metrics.txt") << table;
  log << table;
  return kExitOk;
}

int cmd_bench(const RunConfig& c, const CommandOptions& o, std::ostream& log) {
  const PreparedData data = load_prepared(c);
  const fs::path run = run_directory(c);
  record_config(c, run / "bench", "bench", log);
  std::ofstream out(run / "bench" / "bench.csv");
  out << "model,parameters,kept_parameters,flops,batch,runs,warmup,mean_seconds\n";
  for (const auto& nc : collect_checkpoints(run, o)) {
    const BenchReport r = benchmark(nc.ckpt.model, data.graph, c.bench.batch, c.bench.runs, c.bench.warmup, c.seed);
    const std::size_t params = nc.ckpt.model.parameter_count();
    const std::size_t kept = params - (nc.ckpt.model.mask() ? nc.ckpt.model.mask()->masked() : 0);
    out << nc.label << ',' << params << ',' << kept << ',' << r.flops << ',' << r.batch << ',' << r.runs << ','
        << r.warmup << ',' << std::setprecision(6) << r.mean_seconds << '\n';
    log << "[bench] " << nc.label << ": " << r.mean_seconds << " s per batch of " << r.batch << ", " << r.flops
        << " FLOPs\n";
  }
  return kExitOk;
}

int cmd_export_scatter(const RunConfig& c, const CommandOptions& o, std::ostream& log) {
  const PreparedData data = load_prepared(c);
  const fs::path run = run_directory(c);
  record_config(c, run / "scatter", "export-scatter", log);
  std::vector<NamedCheckpoint> models;
  if (o.models.empty()) {
    models = collect_checkpoints(run, CommandOptions{});
  } else {
    for (const auto& name : o.models) models.push_back({name, load_role(run, name, "train or distill it first")});
  }
  std::vector<std::pair<std::string, const StgcnModel*>> refs;
  for (const auto& m : models) refs.emplace_back(m.label, &m.ckpt.model);
  const ScatterData sd = export_hidden_projection(refs, data.graph, data.splits.test, c.scatter_samples);
  write_scatter_csv(run / "scatter" / "scatter.csv", sd);
  write_json(run / "scatter" / "summary.json", {{"samples", sd.samples_used},
                                                {"feature_dim", sd.feature_dim},
                                                {"explained_variance_ratio", sd.explained_variance_ratio}});
  log << "[export-scatter] " << sd.points.size() << " points, explained variance " << sd.explained_variance_ratio[0]
      << " + " << sd.explained_variance_ratio[1] << '\n';
  return kExitOk;
}

int cmd_reproduce(const RunConfig& c, const CommandOptions& o, std::ostream& log) {
  if (c.dataset.source != "files") throw ConfigError("reproduce needs the real datasets (dataset.source = files)");
  if (c.preset != "pemsd7" && c.preset != "pemsd8") throw ConfigError("reproduce needs --preset pemsd7 or pemsd8");
  const std::string ds = c.preset;
  cmd_prepare(c, log);
  CommandOptions role;
  cmd_train_teacher(c, role, log);
  role.role = "base";
  cmd_train_teacher(c, role, log);

  std::vector<std::pair<std::string, std::string>> runs = {{"teacher", "teacher"}, {"base", "base"}};
  for (LossKind k : {LossKind::target, LossKind::rd_l2, LossKind::rd_kl, LossKind::ord, LossKind::tcd, LossKind::scd,
                     LossKind::stcd}) {
    cmd_distill(with_preset(c, k, c.prune.schedule.target_sparsity), log);
    const std::string dir = "student-" + to_string(k);
    runs.emplace_back(dir, k == LossKind::target ? "student-no-kd" : dir);
  }
  for (double t : {0.97, 0.75, 0.50, 0.25}) {
    const RunConfig pc = with_preset(c, LossKind::stcd, t);
    CommandOptions po;
    cmd_prune(pc, po, log);
    runs.emplace_back("prune-" + pct_label(t), "pruned-" + pct_label(t));
    if (t < 0.9) {
      po.traditional = true;
      cmd_prune(pc, po, log);
      runs.emplace_back("traditional-" + pct_label(t), "traditional-" + pct_label(t));
    }
  }

  const PreparedData data = load_prepared(c);
  const fs::path run = run_directory(c);
  std::ofstream out(run / "reproduction.csv");
  out << "model,reference,metric,minutes,measured,published,relative_error,pass\n";
  int failed = 0, total = 0;
  for (const auto& [dir, ref_name] : runs) {
    const ReferenceRow* ref = find_reference(ds, ref_name);
    if (!ref) continue;
    const Checkpoint ck = load_checkpoint(run / dir / kCheckpointFile);
    const HorizonMetrics m = evaluate(ck.model, data.graph, data.splits.test, c.dataset.interval_minutes);
    for (const auto& cmp : compare_to_reference(m, *ref, o.tolerance)) {
      ++total;
      failed += cmp.pass ? 0 : 1;
      out << dir << ',' << ref_name << ',' << cmp.metric << ',' << cmp.minutes << ',' << cmp.measured << ','
          << cmp.reference << ',' << cmp.relative_error << ',' << (cmp.pass ? "pass" : "fail") << '\n';
    }
  }
  log << "[reproduce] " << total - failed << "/" << total << " metrics within " << o.tolerance * 100
      << "% of the published values; details in " << (run / "reproduction.csv").string() << '\n';
  return failed == 0 ? kExitOk : kExitFailure;
}

int run_command(const std::string& command, const CliOverrides& cli, const CommandOptions& options, std::ostream& log,
                std::ostream& err) {
  try {
    const RunConfig c = resolve_config(cli);
    if (command == "prepare") return cmd_prepare(c, log);
    if (command == "train-teacher") return cmd_train_teacher(c, options, log);
    if (command == "distill") return cmd_distill(c, log);
    if (command == "prune") return cmd_prune(c, options, log);
    if (command == "eval") return cmd_eval(c, options, log);
    if (command == "bench") return cmd_bench(c, options, log);
    if (command == "export-scatter") return cmd_export_scatter(c, options, log);
    if (command == "reproduce") return cmd_reproduce(c, options, log);
    err << "error: unknown command '" << command << "'\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ValidationError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InsufficientDataError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const MissingArtifactError& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingArtifact;
  } catch (const TrainingDivergedError& e) {
    err << "training diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace stkd
