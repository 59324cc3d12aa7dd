#include "rfsr/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/core.h>

#include "rfsr/errors.hpp"
#include "rfsr/util.hpp"

namespace rfsr {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

Range range_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(fmt::format("{} must be a [lo, hi] pair", what));
  return {j[0].get<double>(), j[1].get<double>()};
}

json stage_json(const DegradationStage& s) {
  json j;
  j["kind"] = std::string(stage_kind_name(s.kind));
  j["enabled"] = s.enabled;
  switch (s.kind) {
    case StageKind::kBlur:
      j["sigma"] = range_json(s.sigma);
      j["aniso_prob"] = s.aniso_prob;
      j["kernel_size"] = s.kernel_size;
      break;
    case StageKind::kResize: {
      j["scale"] = range_json(s.scale);
      json modes = json::array();
      for (auto m : s.modes) modes.push_back(std::string(interpolation_name(m)));
      j["modes"] = modes;
      break;
    }
    case StageKind::kNoise:
      j["gaussian_sigma"] = range_json(s.gaussian_sigma);
      j["poisson_scale"] = range_json(s.poisson_scale);
      j["poisson_prob"] = s.poisson_prob;
      j["gray_prob"] = s.gray_prob;
      break;
    case StageKind::kJpeg: j["quality"] = range_json(s.quality); break;
  }
  return j;
}

DegradationStage stage_from(const json& j) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
    throw ConfigError("each degradation stage must be an object with a \"kind\"");
  DegradationStage s;
  s.kind = parse_stage_kind(j["kind"].get<std::string>());
  const auto allowed = stage_json(s);
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key))
      throw ConfigError(fmt::format("degradation stage '{}' has no field '{}'", stage_kind_name(s.kind), key));
    const auto what = fmt::format("degradation {}.{}", stage_kind_name(s.kind), key);
    auto number = [&] {
      if (!value.is_number()) throw ConfigError(fmt::format("{} must be a number", what));
      return value.get<double>();
    };
    if (key == "kind") continue;
    if (key == "enabled") {
      if (!value.is_boolean()) throw ConfigError(fmt::format("{} must be true or false", what));
      s.enabled = value.get<bool>();
    } else if (key == "sigma") {
      s.sigma = range_from(value, what);
    } else if (key == "aniso_prob") {
      s.aniso_prob = number();
    } else if (key == "kernel_size") {
      s.kernel_size = static_cast<int>(number());
    } else if (key == "scale") {
      s.scale = range_from(value, what);
    } else if (key == "modes") {
      if (!value.is_array()) throw ConfigError(fmt::format("{} must be a list", what));
      s.modes.clear();
      for (const auto& m : value) s.modes.push_back(parse_interpolation(m.get<std::string>()));
    } else if (key == "gaussian_sigma") {
      s.gaussian_sigma = range_from(value, what);
    } else if (key == "poisson_scale") {
      s.poisson_scale = range_from(value, what);
    } else if (key == "poisson_prob") {
      s.poisson_prob = number();
    } else if (key == "gray_prob") {
      s.gray_prob = number();
    } else if (key == "quality") {
      s.quality = range_from(value, what);
    }
  }
  return s;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

std::vector<std::string> split_dots(const std::string& key) {
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string p;
  while (std::getline(ss, p, '.')) parts.push_back(p);
  return parts;
}

const json* find_path(const json& root, const std::string& dotted) {
  const json* node = &root;
  for (const auto& part : split_dots(dotted)) {
    if (!node->is_object() || !node->contains(part)) return nullptr;
    node = &(*node)[part];
  }
  return node;
}

const json& at_path(const json& root, const std::string& dotted) {
  const auto* node = find_path(root, dotted);
  if (!node) throw ConfigError(fmt::format("missing config key '{}'", dotted));
  return *node;
}

double get_number(const json& root, const std::string& key) {
  const auto& v = at_path(root, key);
  if (!v.is_number()) throw ConfigError(fmt::format("config key '{}' must be a number", key));
  return v.get<double>();
}

long long get_int(const json& root, const std::string& key) {
  const double v = get_number(root, key);
  if (v != std::floor(v)) throw ConfigError(fmt::format("config key '{}' must be an integer, got {}", key, v));
  return static_cast<long long>(v);
}

std::uint64_t get_seed(const json& root, const std::string& key) {
  const auto v = get_int(root, key);
  if (v < 0) throw ConfigError(fmt::format("config key '{}' must be >= 0", key));
  return static_cast<std::uint64_t>(v);
}

bool get_bool(const json& root, const std::string& key) {
  const auto& v = at_path(root, key);
  if (!v.is_boolean()) throw ConfigError(fmt::format("config key '{}' must be true or false", key));
  return v.get<bool>();
}

std::string get_string(const json& root, const std::string& key) {
  const auto& v = at_path(root, key);
  if (!v.is_string()) throw ConfigError(fmt::format("config key '{}' must be a string", key));
  return v.get<std::string>();
}

std::vector<std::string> get_strings(const json& root, const std::string& key) {
  const auto& v = at_path(root, key);
  if (!v.is_array()) throw ConfigError(fmt::format("config key '{}' must be a list", key));
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ConfigError(fmt::format("config key '{}' must be a list of strings", key));
    out.push_back(e.get<std::string>());
  }
  return out;
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

void merge_into(json& base, const json& overlay, const std::string& prefix, const std::string& origin) {
  for (const auto& [key, value] : overlay.items()) {
    const auto full = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError(fmt::format("{}: unknown config key '{}'", origin, full));
    auto& target = base[key];
    if (target.is_object() && !target.empty()) {
      if (!value.is_object()) throw ConfigError(fmt::format("{}: '{}' is a section, not a value", origin, full));
      merge_into(target, value, full, origin);
      continue;
    }
    if (!same_kind(target, value))
      throw ConfigError(fmt::format("{}: config key '{}' expects a {}, got {}", origin, full, target.type_name(),
                                    value.type_name()));
    if (target.is_number_integer() && value.is_number_float() && value.get<double>() != std::floor(value.get<double>()))
      throw ConfigError(fmt::format("{}: config key '{}' must be an integer", origin, full));
    target = value;
  }
}

void set_path(json& root, const std::string& dotted, json value, const std::string& where) {
  json* node = &root;
  const auto parts = split_dots(dotted);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].empty()) throw ConfigError(fmt::format("{}: malformed key '{}'", where, dotted));
    if (!node->is_object()) throw ConfigError(fmt::format("{}: key '{}' conflicts with an earlier value", where, dotted));
    if (i + 1 == parts.size()) {
      (*node)[parts[i]] = std::move(value);
    } else {
      node = &(*node)[parts[i]];
      if (node->is_null()) *node = json::object();
    }
  }
}

json parse_value(const std::string& raw) {
  const auto v = trim(raw);
  if (v.empty()) return std::string();
  try {
    return json::parse(v);
  } catch (const json::parse_error&) {
    return v;
  }
}

void write_flat(std::ostringstream& out, const json& value, const json* defaults, const std::string& key) {
  const bool free_form = defaults && defaults->is_object() && defaults->empty();
  if (value.is_object() && !free_form && !value.empty()) {
    for (const auto& [k, v] : value.items()) {
      const json* d = defaults && defaults->contains(k) ? &(*defaults)[k] : nullptr;
      write_flat(out, v, d, key.empty() ? k : key + "." + k);
    }
    return;
  }
  out << key << " = " << value.dump() << "\n";
}

constexpr const char* kModelKinds[] = {"toy", "seesr", "diffbir", "pasd"};
constexpr const char* kRewardKinds[] = {"toy_mean", "clipiqa", "imagereward"};
constexpr const char* kMetricIds[] = {"ssim", "psnr", "lpips", "clipiqa", "maniqa", "musiq", "aesthetic"};

template <std::size_t N>
void require_one_of(const std::string& value, const char* const (&allowed)[N], const std::string& key) {
  if (std::find(std::begin(allowed), std::end(allowed), value) == std::end(allowed))
    throw ConfigError(fmt::format("config key '{}' has unsupported value '{}'", key, value));
}

}  // namespace

json degradation_to_json(const DegradationConfig& cfg) {
  json j;
  j["second_order"] = cfg.second_order;
  j["first"] = json::array();
  j["second"] = json::array();
  for (const auto& s : cfg.first) j["first"].push_back(stage_json(s));
  for (const auto& s : cfg.second) j["second"].push_back(stage_json(s));
  return j;
}

DegradationConfig degradation_from_json(const json& j) {
  DegradationConfig cfg;
  cfg.second_order = j.at("second_order").get<bool>();
  for (const auto* list : {"first", "second"}) {
    const auto& arr = j.at(list);
    if (!arr.is_array()) throw ConfigError(fmt::format("data.degradation.{} must be a list of stages", list));
    auto& out = std::string_view(list) == "first" ? cfg.first : cfg.second;
    for (const auto& s : arr) out.push_back(stage_from(s));
  }
  return cfg;
}

json default_config_json() {
  const TrainConfig train;
  const ToyModelConfig toy;
  const ExtractorConfig style;
  json j;
  j["seed"] = 0;
  j["output_dir"] = "runs/default";
  j["schedule"] = {{"preset", "seesr"}, {"T", 1000}, {"st_latest", 50}, {"st1", 20}, {"st2", 40}};
  j["train"] = {{"learning_rate", train.learning_rate},
                {"batch_size", train.batch_size},
                {"iterations", train.iterations},
                {"gt_resolution", train.gt_resolution},
                {"ema_decay", train.ema_decay},
                {"checkpoint_every", train.checkpoint_every},
                {"grad_final_only", train.grad_final_only},
                {"grad_clip", train.grad_clip},
                {"adam_beta1", train.adam_beta1},
                {"adam_beta2", train.adam_beta2},
                {"adam_eps", train.adam_eps},
                {"phase_mix_early", train.phase_mix.early},
                {"phase_mix_reward", train.phase_mix.reward}};
  j["loss"] = {{"lambda_dwt", train.weights.lambda_dwt},
               {"lambda_r", train.weights.lambda_r},
               {"lambda_clipiqa", train.weights.reward_weights.lambda_clipiqa},
               {"lambda_iw", train.weights.reward_weights.lambda_iw}};
  j["model"] = {{"kind", "toy"},
                {"weights_path", ""},
                {"seed", 0},
                {"hidden", toy.hidden},
                {"factor", toy.factor},
                {"decoder_scale", toy.decoder_scale},
                {"clamp_margin", toy.clamp_margin},
                {"use_lr", toy.use_lr},
                {"use_caption", toy.use_caption},
                {"text_dims", toy.text_dims}};
  j["reward"] = {{"models", json::array()}};
  j["style"] = {{"kind", style.kind},
                {"weights_path", ""},
                {"layers", json::array()},
                {"seed", style.seed},
                {"channels", style.channels},
                {"kernel", style.kernel}};
  j["data"] = {{"roots", json::array()},
               {"synthetic", 0},
               {"scale", 4},
               {"caption_provider", "none"},
               {"caption_text", ""},
               {"tag_cache", ""},
               {"degradation", degradation_to_json(DegradationConfig::defaults())}};
  j["eval"] = {{"metrics", json::array({"ssim", "psnr"})}, {"seed", 0}, {"weights", json::object()}};
  return j;
}

json parse_config_text(const std::string& text, const std::string& origin) {
  json out = json::object();
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = fmt::format("{}:{}", origin, lineno);
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const auto eq = line.find('=');
    if (line.front() == '[' && line.back() == ']' && eq == std::string::npos) {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}: expected 'key = value'", where));
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("{}: missing key", where));
    set_path(out, section.empty() ? key : section + "." + key, parse_value(line.substr(eq + 1)), where);
  }
  return out;
}

void merge_config(json& base, const json& overlay, const std::string& origin) { merge_into(base, overlay, "", origin); }

namespace {

RunConfig load_from_text(const std::string& text, const std::string& origin, const std::vector<std::string>& overrides) {
  json explicit_keys = parse_config_text(text, origin);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("override '{}' is not key=value", o));
    set_path(explicit_keys, trim(o.substr(0, eq)), parse_value(o.substr(eq + 1)), "override");
  }
  json merged = default_config_json();
  merge_config(merged, explicit_keys, origin);
  return run_config_from_json(merged, explicit_keys);
}

}  // namespace

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return load_from_text(ss.str(), path.string(), overrides);
}

RunConfig run_config_from_text(const std::string& text, const std::vector<std::string>& overrides) {
  return load_from_text(text, "<config>", overrides);
}

RunConfig run_config_from_json(const json& merged_in, const json& explicit_keys) {
  json merged = merged_in;
  RunConfig c;
  c.seed = get_seed(merged, "seed");
  c.output_dir = get_string(merged, "output_dir");

  c.schedule_preset = get_string(merged, "schedule.preset");
  TimestepSchedule sched = TimestepSchedule::preset(c.schedule_preset);
  if (find_path(explicit_keys, "schedule.T")) sched.T = static_cast<int>(get_int(merged, "schedule.T"));
  if (find_path(explicit_keys, "schedule.st_latest"))
    sched.st_latest = static_cast<int>(get_int(merged, "schedule.st_latest"));
  if (find_path(explicit_keys, "schedule.st1")) sched.st1 = static_cast<int>(get_int(merged, "schedule.st1"));
  if (find_path(explicit_keys, "schedule.st2")) sched.st2 = static_cast<int>(get_int(merged, "schedule.st2"));
  sched.validate();
  merged["schedule"]["T"] = sched.T;
  merged["schedule"]["st_latest"] = sched.st_latest;
  merged["schedule"]["st1"] = sched.st1;
  merged["schedule"]["st2"] = sched.st2;

  auto& t = c.train;
  t.learning_rate = get_number(merged, "train.learning_rate");
  t.batch_size = static_cast<int>(get_int(merged, "train.batch_size"));
  t.iterations = static_cast<int>(get_int(merged, "train.iterations"));
  t.gt_resolution = static_cast<int>(get_int(merged, "train.gt_resolution"));
  t.ema_decay = get_number(merged, "train.ema_decay");
  t.checkpoint_every = static_cast<int>(get_int(merged, "train.checkpoint_every"));
  t.grad_final_only = get_bool(merged, "train.grad_final_only");
  t.grad_clip = get_number(merged, "train.grad_clip");
  t.adam_beta1 = get_number(merged, "train.adam_beta1");
  t.adam_beta2 = get_number(merged, "train.adam_beta2");
  t.adam_eps = get_number(merged, "train.adam_eps");
  t.phase_mix = {get_number(merged, "train.phase_mix_early"), get_number(merged, "train.phase_mix_reward")};
  t.weights.lambda_dwt = get_number(merged, "loss.lambda_dwt");
  t.weights.lambda_r = get_number(merged, "loss.lambda_r");
  t.weights.reward_weights.lambda_clipiqa = get_number(merged, "loss.lambda_clipiqa");
  t.weights.reward_weights.lambda_iw = get_number(merged, "loss.lambda_iw");
  t.schedule = sched;
  t.seed = c.seed;
  t.validate();

  c.model.kind = get_string(merged, "model.kind");
  require_one_of(c.model.kind, kModelKinds, "model.kind");
  c.model.weights_path = get_string(merged, "model.weights_path");
  c.model.seed = get_seed(merged, "model.seed");
  auto& toy = c.model.toy;
  toy.hidden = static_cast<int>(get_int(merged, "model.hidden"));
  toy.factor = static_cast<int>(get_int(merged, "model.factor"));
  toy.decoder_scale = get_number(merged, "model.decoder_scale");
  toy.clamp_margin = get_number(merged, "model.clamp_margin");
  toy.use_lr = get_bool(merged, "model.use_lr");
  toy.use_caption = get_bool(merged, "model.use_caption");
  toy.text_dims = static_cast<int>(get_int(merged, "model.text_dims"));
  toy.schedule = sched;
  if (toy.hidden < 1 || toy.factor < 1 || toy.text_dims < 1 || !(toy.decoder_scale > 0.0))
    throw ConfigError("model sizes and decoder_scale must be positive");
  if (t.gt_resolution % toy.factor) throw ConfigError("train.gt_resolution must be divisible by model.factor");

  const auto& models = at_path(merged, "reward.models");
  if (!models.is_array()) throw ConfigError("reward.models must be a list");
  std::set<std::string> ids;
  for (const auto& m : models) {
    if (!m.is_object()) throw ConfigError("reward.models entries must be objects {id, kind, weights_path}");
    for (const auto& [key, value] : m.items()) {
      (void)value;
      if (key != "id" && key != "kind" && key != "weights_path")
        throw ConfigError(fmt::format("reward.models entry has unknown field '{}'", key));
    }
    RewardSpec spec;
    spec.id = get_string(m, "id");
    spec.kind = get_string(m, "kind");
    require_one_of(spec.kind, kRewardKinds, "reward.models.kind");
    if (m.contains("weights_path")) spec.weights_path = get_string(m, "weights_path");
    if (!ids.insert(spec.id).second) log_warning(fmt::format("reward id '{}' listed twice; the last one wins", spec.id));
    c.rewards.push_back(spec);
  }
  const auto& rw = t.weights.reward_weights;
  if (rw.lambda_clipiqa != 0.0 && !ids.count(kClipIqaSlot))
    throw ConfigError("loss.lambda_clipiqa is nonzero but reward.models has no entry with id \"clipiqa\"");
  if (rw.lambda_iw != 0.0 && !ids.count(kImageRewardSlot))
    throw ConfigError("loss.lambda_iw is nonzero but reward.models has no entry with id \"iw\"");

  c.style.kind = get_string(merged, "style.kind");
  c.style.weights_path = get_string(merged, "style.weights_path");
  c.style.layers = get_strings(merged, "style.layers");
  c.style.seed = static_cast<unsigned>(get_seed(merged, "style.seed"));
  c.style.channels = static_cast<int>(get_int(merged, "style.channels"));
  c.style.kernel = static_cast<int>(get_int(merged, "style.kernel"));
  if (c.style.kind != "tiny" && c.style.kind != "vgg16")
    throw ConfigError(fmt::format("style.kind '{}' unsupported (tiny, vgg16)", c.style.kind));

  for (const auto& r : get_strings(merged, "data.roots")) c.data.roots.emplace_back(r);
  c.data.synthetic = static_cast<int>(get_int(merged, "data.synthetic"));
  c.data.crop = t.gt_resolution;
  c.data.degradation = degradation_from_json(at_path(merged, "data.degradation"));
  c.data.degradation.scale = static_cast<int>(get_int(merged, "data.scale"));
  c.data.degradation.validate();
  c.data.caption.provider = get_string(merged, "data.caption_provider");
  c.data.caption.text = get_string(merged, "data.caption_text");
  c.data.caption.tag_cache = get_string(merged, "data.tag_cache");
  if (c.data.caption.provider != "none" && c.data.caption.provider != "constant" && c.data.caption.provider != "dape")
    throw ConfigError(fmt::format("data.caption_provider '{}' unsupported (none, constant, dape)", c.data.caption.provider));
  c.data.seed = c.seed;

  c.eval_metrics = get_strings(merged, "eval.metrics");
  for (const auto& m : c.eval_metrics) require_one_of(m, kMetricIds, "eval.metrics");
  c.eval_seed = get_seed(merged, "eval.seed");
  for (const auto& [id, path] : at_path(merged, "eval.weights").items()) {
    if (!path.is_string()) throw ConfigError("eval.weights values must be paths");
    c.metric_options.weights[id] = path.get<std::string>();
  }
  c.metric_options.lpips_extractor = c.style;

  c.resolved = std::move(merged);
  return c;
}

std::string resolved_config_text(const RunConfig& config) {
  const json defaults = default_config_json();
  std::ostringstream out;
  for (const auto& [key, value] : config.resolved.items())
    if (!value.is_object()) out << key << " = " << value.dump() << "\n";
  for (const auto& [key, value] : config.resolved.items()) {
    if (!value.is_object()) continue;
    out << "\n[" << key << "]\n";
    for (const auto& [k, v] : value.items()) {
      const json& sec = defaults[key];
      write_flat(out, v, sec.contains(k) ? &sec[k] : nullptr, k);
    }
  }
  return out.str();
}

std::string config_hash(const RunConfig& config) { return hex64(fnv1a(resolved_config_text(config))); }

std::unique_ptr<DiffusionModel> build_model(const RunConfig& config) {
  auto model = make_model(config.model);
  if (!config.model.weights_path.empty()) {
    const auto path = resolve_cache_path(config.model.weights_path);
    if (!fs::exists(path)) throw ModelError(fmt::format("model weights '{}' not found", path.string()));
    model->params().load(load_archive(path));
  }
  return model;
}

std::shared_ptr<RewardRegistry> build_rewards(const RunConfig& config) {
  auto registry = std::make_shared<RewardRegistry>();
  for (const auto& spec : config.rewards) {
    auto model = make_reward_model(spec.kind, resolve_cache_path(spec.weights_path));
    if (!model->loaded())
      throw ModelError(fmt::format("reward model '{}' ({}) could not load weights '{}'", spec.id, spec.kind,
                                   spec.weights_path.string()));
    registry->register_model(spec.id, std::move(model));
  }
  return registry;
}

std::shared_ptr<FeatureExtractor> build_extractor(const RunConfig& config) {
  auto style = config.style;
  if (!style.weights_path.empty()) style.weights_path = resolve_cache_path(style.weights_path);
  return make_extractor(style);
}

}  // namespace rfsr
