#include "stkd/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "stkd/errors.hpp"

namespace stkd {

using nlohmann::json;

namespace {

json blocks_to_json(const std::array<BlockChannels, 2>& blocks) {
  json out = json::array();
  for (const auto& b : blocks) out.push_back({b.c_in, b.c_mid, b.c_out});
  return out;
}

std::array<BlockChannels, 2> blocks_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(where + " must list two blocks of [c_in, c_mid, c_out]");
  std::array<BlockChannels, 2> out{};
  for (std::size_t i = 0; i < 2; ++i) {
    if (!j[i].is_array() || j[i].size() != 3) throw ConfigError(where + " block must be [c_in, c_mid, c_out]");
    out[i] = {j[i][0].get<int>(), j[i][1].get<int>(), j[i][2].get<int>()};
  }
  return out;
}

json train_to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},         {"learning_rate", t.learning_rate}, {"lr_decay", t.lr_decay},
          {"lr_decay_every", t.lr_decay_every}, {"epochs", t.epochs},               {"optimizer", t.optimizer}};
}

TrainConfig train_from_json(const json& j, std::uint64_t seed) {
  TrainConfig t;
  t.batch_size = j.at("batch_size").get<int>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.lr_decay = j.at("lr_decay").get<double>();
  t.lr_decay_every = j.at("lr_decay_every").get<int>();
  t.epochs = j.at("epochs").get<int>();
  t.optimizer = j.at("optimizer").get<std::string>();
  t.seed = seed;
  return t;
}

json weights_to_json(const LossWeights& w) {
  return {{"alpha1", w.alpha1}, {"alpha2", w.alpha2}, {"alpha3", w.alpha3}, {"beta", w.beta}};
}

void weights_from_json(const json& j, LossWeights& w) {
  w.alpha1 = j.at("alpha1").get<double>();
  w.alpha2 = j.at("alpha2").get<double>();
  w.alpha3 = j.at("alpha3").get<double>();
  w.beta = j.at("beta").get<double>();
}

// Deep merge that refuses keys absent from the base tree.
void merge_strict(json& base, const json& patch, const std::string& path = "") {
  if (!patch.is_object()) throw ConfigError("config " + (path.empty() ? std::string("root") : path) + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& dst = base[it.key()];
    if (dst.is_object() && it.value().is_object()) {
      merge_strict(dst, it.value(), key);
    } else {
      dst = it.value();
    }
  }
}

struct KdRow {
  LossKind kind;
  double alpha1, alpha2, alpha3, beta;  // NaN = not set by the row
};

struct PruneRow {
  double target;
  int batch;
  double alpha1, alpha2, alpha3;
};

constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

const std::vector<KdRow>& kd_rows(const std::string& dataset) {
  static const std::vector<KdRow> d7 = {
      {LossKind::rd_l2, kUnset, kUnset, kUnset, 0.045},
      {LossKind::rd_kl, kUnset, kUnset, kUnset, 0.007},
      {LossKind::ord, 0.593, kUnset, kUnset, kUnset},
      {LossKind::stcd, 0.170, 0.047, 0.313, kUnset},
  };
  static const std::vector<KdRow> d8 = {
      {LossKind::rd_l2, kUnset, kUnset, kUnset, 0.905},
      {LossKind::rd_kl, kUnset, kUnset, kUnset, 0.728},
      {LossKind::ord, 0.541, kUnset, kUnset, kUnset},
      {LossKind::stcd, 0.846, 0.465, 0.504, kUnset},
  };
  return dataset == "pemsd7" ? d7 : d8;
}

const std::vector<PruneRow>& prune_rows(const std::string& dataset) {
  static const std::vector<PruneRow> d7 = {
      {0.97, 25, 0.746, 0.445, 0.020},
      {0.75, 50, 0.963, 0.716, 0.081},
      {0.50, 50, 0.935, 0.981, 0.129},
      {0.25, 50, 0.971, 0.234, 0.684},
  };
  static const std::vector<PruneRow> d8 = {
      {0.97, 25, 0.099, 0.091, 0.531},
      {0.75, 50, 0.996, 0.720, 0.405},
      {0.50, 50, 0.946, 0.516, 0.094},
      {0.25, 50, 0.748, 0.324, 0.868},
  };
  return dataset == "pemsd7" ? d7 : d8;
}

void set_if(json& obj, const char* key, double v) {
  if (!std::isnan(v)) obj[key] = v;
}

// "pemsd7", "pemsd7-stcd", "pemsd8-prune-97", ...
struct PresetName {
  std::string dataset;
  std::optional<LossKind> kind;
  std::optional<double> target;
};

PresetName parse_preset(const std::string& name) {
  PresetName p;
  std::string rest;
  for (const char* ds : {"pemsd7", "pemsd8"}) {
    if (name.rfind(ds, 0) == 0) {
      p.dataset = ds;
      rest = name.substr(std::string(ds).size());
    }
  }
  if (p.dataset.empty()) throw ConfigError("unknown preset '" + name + "'");
  if (rest.empty()) return p;
  if (rest.rfind("-prune-", 0) == 0) {
    const std::string pct = rest.substr(7);
    for (const char* known : {"25", "50", "75", "97"}) {
      if (pct == known) {
        p.target = std::stod(pct) / 100.0;
        return p;
      }
    }
    throw ConfigError("unknown preset '" + name + "' (pruning presets: 25, 50, 75, 97)");
  }
  if (rest[0] != '-') throw ConfigError("unknown preset '" + name + "'");
  p.kind = parse_loss_kind(rest.substr(1));
  return p;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

ModelConfig ModelRoles::resolve(const std::array<BlockChannels, 2>& blocks, int nodes, int history) const {
  ModelConfig c;
  c.blocks = blocks;
  c.temporal_kernel = temporal_kernel;
  c.spatial_order = spatial_order;
  c.nodes = nodes;
  c.history = history;
  c.dropout = dropout;
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  const auto& d = c.dataset;
  const auto& s = d.synthetic;
  json waves = json::array();
  for (const auto& w : s.waves) waves.push_back({w.amplitude, w.period});
  json j;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["preset"] = c.preset;
  j["dataset"] = {{"source", d.source},
                  {"name", d.name},
                  {"speeds", d.speeds},
                  {"distances", d.distances},
                  {"delimiter", std::string(1, d.delimiter)},
                  {"header", d.header},
                  {"clean", d.clean},
                  {"interval_minutes", d.interval_minutes},
                  {"history", d.history},
                  {"horizon", d.horizon},
                  {"split", {{"train", d.split.train}, {"val", d.split.val}, {"test", d.split.test}}},
                  {"sigma_sq", d.sigma_sq ? json(*d.sigma_sq) : json(nullptr)},
                  {"epsilon", d.epsilon},
                  {"synthetic",
                   {{"nodes", s.n_nodes},
                    {"timesteps", s.n_timesteps},
                    {"waves", waves},
                    {"noise_std", s.noise_std},
                    {"coupling", s.coupling},
                    {"base_speed", s.base_speed},
                    {"area_km", s.area_km}}}};
  j["models"] = {{"teacher", blocks_to_json(c.models.teacher)},
                 {"student", blocks_to_json(c.models.student)},
                 {"base", blocks_to_json(c.models.base)},
                 {"temporal_kernel", c.models.temporal_kernel},
                 {"spatial_order", c.models.spatial_order},
                 {"dropout", c.models.dropout}};
  j["train"] = {{"teacher", train_to_json(c.teacher_train)}, {"student", train_to_json(c.student_train)}};
  j["loss"] = weights_to_json(c.loss);
  j["loss"]["kind"] = to_string(c.loss_kind);
  j["prune"] = weights_to_json(c.prune.weights);
  j["prune"].erase("beta");
  j["prune"]["target"] = c.prune.schedule.target_sparsity;
  j["prune"]["pruning_minibatch"] = c.prune.schedule.pruning_minibatch;
  j["prune"]["per_event_fraction"] = c.prune.schedule.per_event_fraction;
  j["prune"]["granularity"] = to_string(c.prune.schedule.granularity);
  j["prune"]["finetune_epochs"] = c.prune.finetune_epochs;
  j["prune"]["finetune_loss"] = to_string(c.prune.finetune_loss);
  j["prune"]["train"] = train_to_json(c.prune.train);
  j["bench"] = {{"batch", c.bench.batch}, {"runs", c.bench.runs}, {"warmup", c.bench.warmup}};
  j["scatter"] = {{"samples", c.scatter_samples}};
  return j;
}

RunConfig run_config_from_json(const json& in) {
  json j = to_json(RunConfig{});
  merge_strict(j, in);
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out = j.at("out").get<std::string>();
    c.preset = j.at("preset").get<std::string>();

    const json& d = j.at("dataset");
    c.dataset.source = d.at("source").get<std::string>();
    c.dataset.name = d.at("name").get<std::string>();
    c.dataset.speeds = d.at("speeds").get<std::string>();
    c.dataset.distances = d.at("distances").get<std::string>();
    const auto delim = d.at("delimiter").get<std::string>();
    if (delim.size() != 1) throw ConfigError("dataset.delimiter must be a single character");
    c.dataset.delimiter = delim[0];
    c.dataset.header = d.at("header").get<bool>();
    c.dataset.clean = d.at("clean").get<bool>();
    c.dataset.interval_minutes = d.at("interval_minutes").get<int>();
    c.dataset.history = d.at("history").get<int>();
    c.dataset.horizon = d.at("horizon").get<int>();
    c.dataset.split.train = d.at("split").at("train").get<double>();
    c.dataset.split.val = d.at("split").at("val").get<double>();
    c.dataset.split.test = d.at("split").at("test").get<double>();
    if (!d.at("sigma_sq").is_null()) c.dataset.sigma_sq = d.at("sigma_sq").get<double>();
    c.dataset.epsilon = d.at("epsilon").get<double>();
    const json& s = d.at("synthetic");
    auto& spec = c.dataset.synthetic;
    spec.n_nodes = s.at("nodes").get<int>();
    spec.n_timesteps = s.at("timesteps").get<int>();
    spec.waves.clear();
    for (const auto& w : s.at("waves")) {
      if (!w.is_array() || w.size() != 2) throw ConfigError("dataset.synthetic.waves entries must be [amplitude, period]");
      spec.waves.push_back({w[0].get<double>(), w[1].get<double>()});
    }
    spec.noise_std = s.at("noise_std").get<double>();
    spec.coupling = s.at("coupling").get<double>();
    spec.base_speed = s.at("base_speed").get<double>();
    spec.area_km = s.at("area_km").get<double>();
    spec.epsilon = c.dataset.epsilon;
    spec.interval_minutes = c.dataset.interval_minutes;
    spec.seed = c.seed;

    const json& m = j.at("models");
    c.models.teacher = blocks_from_json(m.at("teacher"), "models.teacher");
    c.models.student = blocks_from_json(m.at("student"), "models.student");
    c.models.base = blocks_from_json(m.at("base"), "models.base");
    c.models.temporal_kernel = m.at("temporal_kernel").get<int>();
    c.models.spatial_order = m.at("spatial_order").get<int>();
    c.models.dropout = m.at("dropout").get<double>();

    c.teacher_train = train_from_json(j.at("train").at("teacher"), c.seed);
    c.student_train = train_from_json(j.at("train").at("student"), c.seed + 1);

    const json& l = j.at("loss");
    weights_from_json(l, c.loss);
    c.loss_kind = parse_loss_kind(l.at("kind").get<std::string>());

    const json& p = j.at("prune");
    c.prune.weights.alpha1 = p.at("alpha1").get<double>();
    c.prune.weights.alpha2 = p.at("alpha2").get<double>();
    c.prune.weights.alpha3 = p.at("alpha3").get<double>();
    c.prune.schedule.target_sparsity = p.at("target").get<double>();
    c.prune.schedule.pruning_minibatch = p.at("pruning_minibatch").get<int>();
    c.prune.schedule.per_event_fraction = p.at("per_event_fraction").get<double>();
    c.prune.schedule.granularity = parse_granularity(p.at("granularity").get<std::string>());
    c.prune.finetune_epochs = p.at("finetune_epochs").get<int>();
    c.prune.finetune_loss = parse_loss_kind(p.at("finetune_loss").get<std::string>());
    c.prune.train = train_from_json(p.at("train"), c.seed + 2);

    c.bench.batch = j.at("bench").at("batch").get<int>();
    c.bench.runs = j.at("bench").at("runs").get<int>();
    c.bench.warmup = j.at("bench").at("warmup").get<int>();
    c.scatter_samples = j.at("scatter").at("samples").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
  return c;
}

void RunConfig::validate() const {
  if (dataset.source != "synthetic" && dataset.source != "files") {
    throw ConfigError("dataset.source must be 'synthetic' or 'files'");
  }
  if (dataset.source == "files" && (dataset.speeds.empty() || dataset.distances.empty())) {
    throw ConfigError("dataset.source 'files' needs dataset.speeds and dataset.distances");
  }
  if (dataset.source == "synthetic" && (!dataset.speeds.empty() || !dataset.distances.empty())) {
    throw ConfigError("dataset paths are set but dataset.source is 'synthetic'; pick exactly one source");
  }
  if (dataset.interval_minutes <= 0) throw ConfigError("dataset.interval_minutes must be positive");
  if (dataset.history < 1 || dataset.horizon < 1) throw ConfigError("dataset.history and dataset.horizon must be >= 1");
  const auto& r = dataset.split;
  if (r.train <= 0 || r.val < 0 || r.test <= 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw ConfigError("dataset.split ratios must be positive and sum to 1");
  }
  if (dataset.sigma_sq && !(*dataset.sigma_sq > 0)) throw ConfigError("dataset.sigma_sq must be positive");
  if (dataset.epsilon < 0) throw ConfigError("dataset.epsilon must be nonnegative");
  if (dataset.source == "synthetic") {
    if (dataset.synthetic.n_nodes < 1 || dataset.synthetic.n_timesteps < 1) {
      throw ConfigError("dataset.synthetic needs positive nodes and timesteps");
    }
  }
  for (const auto* blocks : {&models.teacher, &models.student, &models.base}) {
    models.resolve(*blocks, 1, dataset.history);
  }
  teacher_train.validate();
  student_train.validate();
  prune.train.validate();
  loss.validate();
  prune.weights.validate();
  prune.schedule.validate();
  if (prune.finetune_epochs < 0) throw ConfigError("prune.finetune_epochs must be nonnegative");
  if (bench.batch <= 0 || bench.runs <= 0 || bench.warmup < 0) throw ConfigError("bench settings must be positive");
  if (scatter_samples <= 0) throw ConfigError("scatter.samples must be positive");
  if (!preset.empty()) parse_preset(preset);
}

std::filesystem::path RunConfig::run_dir() const {
  return std::filesystem::path(out) / (setup_hash(*this) + "-s" + std::to_string(seed));
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const char* ds : {"pemsd7", "pemsd8"}) {
    out.emplace_back(ds);
    for (const char* k : {"rd_l2", "rd_kl", "ord", "stcd"}) out.push_back(std::string(ds) + "-" + k);
    for (const char* t : {"25", "50", "75", "97"}) out.push_back(std::string(ds) + "-prune-" + t);
  }
  return out;
}

json preset_patch(const std::string& name, LossKind kind, double target) {
  const PresetName p = parse_preset(name);
  if (p.kind) kind = *p.kind;
  if (p.target) target = *p.target;
  json patch = json::object();
  patch["dataset"] = {{"name", p.dataset}};
  if (p.kind) patch["loss"]["kind"] = to_string(kind);
  if (p.target) patch["prune"]["target"] = target;

  // Ablation kinds share the composite row's thresholds and weights.
  const LossKind row_kind = (kind == LossKind::tcd || kind == LossKind::scd) ? LossKind::stcd : kind;
  for (const auto& row : kd_rows(p.dataset)) {
    if (row.kind != row_kind) continue;
    json loss = json::object();
    set_if(loss, "alpha1", row.alpha1);
    set_if(loss, "alpha2", row.alpha2);
    set_if(loss, "alpha3", row.alpha3);
    set_if(loss, "beta", row.beta);
    patch["loss"].update(loss);
    patch["train"]["student"] = {{"batch_size", 50}, {"learning_rate", 1e-3}};
  }
  for (const auto& row : prune_rows(p.dataset)) {
    if (std::abs(row.target - target) > 1e-9) continue;
    patch["prune"].update({{"alpha1", row.alpha1}, {"alpha2", row.alpha2}, {"alpha3", row.alpha3}});
    patch["prune"]["train"] = {{"batch_size", row.batch}, {"learning_rate", 1e-3}};
  }
  return patch;
}

void apply_assignment(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &tree;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("override key '" + key + "' descends into a value");
    node = &next;
  }
  (*node)[parts.back()] = value;
}

RunConfig resolve_config(const CliOverrides& cli) {
  json tree = to_json(RunConfig{});
  if (cli.config_path) {
    std::ifstream in(*cli.config_path);
    if (!in) throw ConfigError("cannot read config file " + *cli.config_path);
    json file = json::parse(in, nullptr, false, true);
    if (file.is_discarded()) throw ConfigError("config file " + *cli.config_path + " is not valid JSON");
    merge_strict(tree, file);
  }
  json sets = json::object();
  for (const auto& s : cli.set) apply_assignment(sets, s);
  json flags = json::object();
  if (cli.seed) flags["seed"] = *cli.seed;
  if (cli.out) flags["out"] = *cli.out;
  if (cli.preset) flags["preset"] = *cli.preset;
  if (cli.loss) flags["loss"]["kind"] = *cli.loss;
  if (cli.target) flags["prune"]["target"] = *cli.target;

  json probe = tree;
  merge_strict(probe, sets);
  merge_strict(probe, flags);
  const std::string preset = probe.at("preset").get<std::string>();
  if (!preset.empty()) {
    try {
      const LossKind kind = parse_loss_kind(probe.at("loss").at("kind").get<std::string>());
      merge_strict(tree, preset_patch(preset, kind, probe.at("prune").at("target").get<double>()));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config type error: ") + e.what());
    }
  }
  merge_strict(tree, sets);
  merge_strict(tree, flags);
  RunConfig c = run_config_from_json(tree);
  c.validate();
  return c;
}

std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("seed");
  j.erase("out");
  return hash_string(j.dump());
}

std::string setup_hash(const RunConfig& c) {
  const json full = to_json(c);
  json j = {{"dataset", full.at("dataset")}, {"models", full.at("models")},
            {"teacher", full.at("train").at("teacher")}};
  j["dataset"].erase("name");
  return hash_string(j.dump());
}

std::string hash_string(const std::string& s) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(s)));
  return std::string(buf, 12);
}

}  // namespace stkd
