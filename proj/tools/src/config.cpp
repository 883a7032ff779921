#include "config.hpp"

#include <fstream>
#include <sstream>

#include "disgenib/errors.hpp"

namespace dgib::cli {

using nlohmann::json;

json to_json(const RunConfig& c) {
  const auto& s = c.data.synth;
  const auto& o = c.objective.objective;
  const auto& t = c.objective.train;
  const auto& a = c.eval.augment;
  return {
      {"data",
       {{"classes", s.classes},
        {"n_per_class", s.n_per_class},
        {"d_x", s.d_x},
        {"d_a", s.d_a},
        {"d_z", s.d_z},
        {"noise_sigma", s.noise_sigma},
        {"depth", s.depth},
        {"novel_classes", c.data.novel_classes}}},
      {"model",
       {{"d_a", c.model.d_a}, {"d_z", c.model.d_z}, {"hidden", c.model.hidden}, {"layers", c.model.layers}}},
      {"objective",
       {{"mode", to_string(o.mode)},
        {"alpha", o.alpha},
        {"beta", o.beta},
        {"sigma_rec", o.sigma_rec},
        {"approximator_steps", o.approximator_steps},
        {"use_compression", o.use_compression},
        {"use_disentanglement", o.use_disentanglement},
        {"disenib", o.disenib},
        {"prior_bound", to_string(o.prior_bound)},
        {"prior_sigma", c.objective.prior_sigma},
        {"stop_gradient", o.stop_gradient},
        {"epochs", c.objective.epochs},
        {"batch_size", t.batch_size},
        {"lr", t.adam.lr},
        {"approximator_lr", t.approximator_lr},
        {"save_interval", c.objective.save_interval}}},
      {"eval",
       {{"way", c.eval.way},
        {"shots", c.eval.shots},
        {"queries", c.eval.queries},
        {"episodes", c.eval.episodes},
        {"n_gen", a.n_gen},
        {"z_pool", to_string(a.pool)},
        {"use_prior", a.use_prior},
        {"variance_floor", a.variance_floor},
        {"fallback_variance", a.fallback_variance},
        {"metric", to_string(a.metric)},
        {"probe_episodes", c.eval.probe_episodes}}},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
  };
}

namespace {

std::string kind_of(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_unsigned()) return "non-negative integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

bool compatible(const json& def, const json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) {
    if (!v.is_array()) return false;
    for (const auto& e : v)
      if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<long long>() >= 0)) return false;
    return true;
  }
  return false;
}

void overlay(json& target, const json& doc, const std::string& prefix) {
  if (!doc.is_object()) {
    throw ConfigError("config " + (prefix.empty() ? std::string("document") : "section '" + prefix + "'") +
                      " must be a JSON object");
  }
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!target.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = target[it.key()];
    if (slot.is_object()) {
      overlay(slot, it.value(), key);
    } else if (!compatible(slot, it.value())) {
      throw ConfigError("config key '" + key + "' expects a " + kind_of(slot) + ", got " + kind_of(it.value()));
    } else {
      slot = it.value();
    }
  }
}

template <typename T>
T take(const json& j, const char* section, const char* key) {
  return j.at(section).at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  json merged = to_json(RunConfig{});
  overlay(merged, doc, "");

  RunConfig c;
  auto& s = c.data.synth;
  s.classes = take<std::size_t>(merged, "data", "classes");
  s.n_per_class = take<std::size_t>(merged, "data", "n_per_class");
  s.d_x = take<std::size_t>(merged, "data", "d_x");
  s.d_a = take<std::size_t>(merged, "data", "d_a");
  s.d_z = take<std::size_t>(merged, "data", "d_z");
  s.noise_sigma = take<double>(merged, "data", "noise_sigma");
  s.depth = take<std::size_t>(merged, "data", "depth");
  c.data.novel_classes = take<std::size_t>(merged, "data", "novel_classes");
  s.validate();

  c.model.d_a = take<std::size_t>(merged, "model", "d_a");
  c.model.d_z = take<std::size_t>(merged, "model", "d_z");
  c.model.hidden = take<std::size_t>(merged, "model", "hidden");
  c.model.layers = take<std::size_t>(merged, "model", "layers");
  if (c.model.d_a == 0 || c.model.d_z == 0 || c.model.hidden == 0) {
    throw ConfigError("model.d_a, model.d_z and model.hidden must be >= 1");
  }

  auto& o = c.objective.objective;
  o.mode = parse_objective_mode(take<std::string>(merged, "objective", "mode"));
  o.alpha = take<double>(merged, "objective", "alpha");
  o.beta = take<double>(merged, "objective", "beta");
  o.sigma_rec = take<double>(merged, "objective", "sigma_rec");
  o.approximator_steps = take<std::size_t>(merged, "objective", "approximator_steps");
  o.use_compression = take<bool>(merged, "objective", "use_compression");
  o.use_disentanglement = take<bool>(merged, "objective", "use_disentanglement");
  o.disenib = take<bool>(merged, "objective", "disenib");
  o.prior_bound = parse_prior_bound(take<std::string>(merged, "objective", "prior_bound"));
  o.stop_gradient = take<bool>(merged, "objective", "stop_gradient");
  if (o.mode == ObjectiveMode::disenib) o = configure_disenib(o);
  o.validate();
  c.objective.prior_sigma = take<double>(merged, "objective", "prior_sigma");
  if (!(c.objective.prior_sigma >= 0.0)) throw ConfigError("objective.prior_sigma must be >= 0");
  c.objective.epochs = take<std::size_t>(merged, "objective", "epochs");
  c.objective.save_interval = take<std::size_t>(merged, "objective", "save_interval");
  c.objective.train.batch_size = take<std::size_t>(merged, "objective", "batch_size");
  c.objective.train.adam.lr = take<double>(merged, "objective", "lr");
  c.objective.train.approximator_lr = take<double>(merged, "objective", "approximator_lr");
  c.objective.train.validate();

  c.eval.way = take<std::size_t>(merged, "eval", "way");
  c.eval.shots = take<std::vector<std::size_t>>(merged, "eval", "shots");
  c.eval.queries = take<std::size_t>(merged, "eval", "queries");
  c.eval.episodes = take<std::size_t>(merged, "eval", "episodes");
  c.eval.probe_episodes = take<std::size_t>(merged, "eval", "probe_episodes");
  auto& a = c.eval.augment;
  a.n_gen = take<std::size_t>(merged, "eval", "n_gen");
  a.pool = parse_z_pool(take<std::string>(merged, "eval", "z_pool"));
  a.use_prior = take<bool>(merged, "eval", "use_prior");
  a.variance_floor = take<double>(merged, "eval", "variance_floor");
  a.fallback_variance = take<double>(merged, "eval", "fallback_variance");
  a.metric = parse_metric(take<std::string>(merged, "eval", "metric"));
  a.validate();
  if (c.eval.shots.empty()) throw ConfigError("eval.shots must list at least one shot count");
  for (std::size_t k : c.eval.shots) EvalSpec{c.eval.way, k, c.eval.queries, c.eval.episodes}.validate();

  c.seed = merged.at("seed").get<std::uint64_t>();
  c.output_dir = merged.at("output_dir").get<std::string>();
  return c;
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    json& next = (*node)[key];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("override '" + assignment + "': '" + key + "' is not a section");
    node = &next;
    start = dot + 1;
  }
}

RunConfig resolve_config(const json& base, const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& overrides) {
  json doc = base.is_null() ? json::object() : base;
  if (file) {
    json merged = to_json(parse_run_config(doc));
    overlay(merged, load_json_file(*file), "");
    doc = std::move(merged);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc);
}

}  // namespace dgib::cli
