#include "cobra/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace cobra::config {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

class Reader {
 public:
  explicit Reader(const RawConfig& raw) : raw_(raw) {}

  const std::string& str(const std::string& section, const std::string& key) const {
    return raw_.at(section).at(key);
  }
  double num(const std::string& section, const std::string& key) const {
    return parse_number(section + "." + key, str(section, key));
  }
  std::int64_t integer(const std::string& section, const std::string& key) const {
    const auto& s = str(section, key);
    std::int64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ValidationError(section + "." + key + ": expected an integer, got '" + s + "'");
    }
    return v;
  }
  bool flag(const std::string& section, const std::string& key) const {
    const auto& s = str(section, key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ValidationError(section + "." + key + ": expected true/false, got '" + s + "'");
  }

 private:
  const RawConfig& raw_;
};

void check_known(const RawConfig& base, const std::string& section, const std::string& key) {
  const auto s = base.find(section);
  if (s == base.end()) {
    std::string known;
    for (const auto& [name, _] : base) known += (known.empty() ? "" : ", ") + name;
    throw ValidationError("unknown config section [" + section + "] (known: " + known + ")");
  }
  if (!s->second.contains(key)) {
    std::string known;
    for (const auto& [name, _] : s->second) known += (known.empty() ? "" : ", ") + name;
    throw ValidationError("unknown config key '" + section + "." + key + "' (known in [" + section + "]: " + known + ")");
  }
}

}  // namespace

double parse_number(const std::string& key, const std::string& value) {
  auto parse = [&](const std::string& s) {
    double v = 0.0;
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    if (b == std::string::npos) throw ValidationError(key + ": empty number");
    const auto t = s.substr(b, e - b + 1);
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) {
      throw ValidationError(key + ": expected a number, got '" + value + "'");
    }
    return v;
  };
  if (const auto slash = value.find('/'); slash != std::string::npos) {
    const double den = parse(value.substr(slash + 1));
    if (den == 0.0) throw ValidationError(key + ": division by zero in '" + value + "'");
    return parse(value.substr(0, slash)) / den;
  }
  return parse(value);
}

RawConfig defaults() {
  RawConfig c;
  c["run"] = {{"run_id", "default"}, {"output_dir", "runs"}, {"seed", "0"}, {"workers", "1"}, {"verbose", "false"}};
  c["data"] = {{"protocol", "one_class"}, {"dataset", "mnist"},   {"class_id", "0"},         {"in_dataset", "shapes"},
               {"out_dataset", "noise"},  {"resolution", "28"},   {"channels", "1"},         {"root", ""},
               {"split_seed", "0"},       {"max_train", "0"},     {"max_test", "0"},         {"synthetic_train", "2000"},
               {"synthetic_test", "1000"}};
  c["model"] = {{"encoder", "small_cnn"}, {"proj_dim", "128"}, {"proj_layers", "2"}};
  std::vector<std::string> ids;
  for (auto id : augment::kAllTransforms) ids.emplace_back(augment::to_string(id));
  c["crafter"] = {{"bank", join(ids)},
                  {"lambda", "0.05"},
                  {"max_iters", "10"},
                  {"classifier_encoder", "small_cnn"},
                  {"classifier_epochs", "20"},
                  {"classifier_batch_size", "128"},
                  {"classifier_lr", "0.05"},
                  {"gmm_components", "5"},
                  {"gmm_restarts", "3"},
                  {"gmm_max_iter", "200"}};
  for (auto id : augment::kAllTransforms) {
    for (const auto& [k, v] : augment::TransformSpec::defaults(id).params) {
      c["transforms"][std::string(augment::to_string(id)) + "." + k] = fmt(v);
    }
  }
  c["views"] = {{"ops", "color_jitter,random_grayscale,random_crop"},
                {"brightness", "0.4"},
                {"contrast", "0.4"},
                {"saturation", "0.4"},
                {"jitter_prob", "0.8"},
                {"grayscale_prob", "0.2"},
                {"crop_min_area", "0.8"},
                {"crop_max_area", "1.0"}};
  c["loss"] = {{"temperature", "0.5"}, {"cls_weight", "1.0"}, {"eps_num", "1e-8"}, {"opposite_weight", "1.0"}};
  c["train"] = {{"epochs", "10"},          {"batch_size", "128"},      {"optimizer", "sgd_momentum"},
                {"peak_lr", "0.1"},        {"warmup_epochs", "10"},    {"weight_decay", "1e-6"},
                {"momentum", "0.9"},       {"lars_eta", "0.001"},      {"grad_clip", "5"},      {"attack_epsilon", "4/255"},
                {"attack_steps", "10"},    {"attack_alpha", "0"},      {"attack_random_init", "true"}};
  c["eval"] = {{"conditions", "clean,pgd"}, {"variants", "A"},         {"epsilon", "4/255"},
               {"pgd_steps", "100"},        {"pgd_restarts", "3"},     {"pgd_alpha", "0"},
               {"l2_epsilon", "0.5"},       {"blackbox_queries", "1000"}, {"chunk", "256"},
               {"transcripts", "true"}};
  return c;
}

RawConfig parse_ini(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError(std::string("config parse error: ") + e.what());
  }
  RawConfig out;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ValidationError("config key '" + section + "' must live inside a [section]");
    }
    auto& dst = out[section];
    for (const auto& [key, value] : body) dst[key] = value.data();
  }
  return out;
}

RawConfig read_ini(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("config file not found: " + path.string());
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_ini(ss.str());
}

void apply_override(RawConfig& base, const std::string& dotted, const std::string& value) {
  const auto dot = dotted.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == dotted.size()) {
    throw ValidationError("override '" + dotted + "' must look like section.key");
  }
  const auto section = dotted.substr(0, dot);
  const auto key = dotted.substr(dot + 1);
  check_known(base, section, key);
  base[section][key] = value;
}

RawConfig resolve(const RawConfig& file, const std::vector<std::pair<std::string, std::string>>& overrides) {
  auto out = defaults();
  for (const auto& [section, body] : file) {
    for (const auto& [key, value] : body) {
      check_known(out, section, key);
      out[section][key] = value;
    }
  }
  for (const auto& [k, v] : overrides) apply_override(out, k, v);
  return out;
}

std::string to_ini(const RawConfig& cfg) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [section, body] : cfg) {
    if (!first) os << "\n";
    first = false;
    os << "[" << section << "]\n";
    for (const auto& [key, value] : body) os << key << " = " << value << "\n";
  }
  return os.str();
}

std::string ExperimentConfig::fingerprint() const {
  const auto text = to_ini(raw);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(text.data(), text.size())));
  return buf;
}

ExperimentConfig build(const RawConfig& resolved) {
  const Reader r(resolved);
  ExperimentConfig c;
  c.raw = resolved;

  c.run.run_id = r.str("run", "run_id");
  if (c.run.run_id.empty() || c.run.run_id.find('/') != std::string::npos) {
    throw ValidationError("run.run_id must be a non-empty name without '/'");
  }
  c.run.output_dir = r.str("run", "output_dir");
  c.run.seed = static_cast<Seed>(r.integer("run", "seed"));
  c.run.workers = static_cast<int>(r.integer("run", "workers"));
  if (c.run.workers < 1) throw ValidationError("run.workers must be >= 1");
  c.run.verbose = r.flag("run", "verbose");

  auto& d = c.data;
  d.kind = data::parse_protocol_kind(r.str("data", "protocol"));
  d.dataset = r.str("data", "dataset");
  d.class_id = static_cast<int>(r.integer("data", "class_id"));
  d.in_dataset = r.str("data", "in_dataset");
  d.out_dataset = r.str("data", "out_dataset");
  d.resolution = static_cast<int>(r.integer("data", "resolution"));
  d.channels = static_cast<int>(r.integer("data", "channels"));
  d.root = r.str("data", "root");
  d.split_seed = static_cast<Seed>(r.integer("data", "split_seed"));
  d.max_train = r.integer("data", "max_train");
  d.max_test = r.integer("data", "max_test");
  d.synthetic_train = r.integer("data", "synthetic_train");
  d.synthetic_test = r.integer("data", "synthetic_test");
  d.validate();

  c.model.encoder = nets::parse_encoder_kind(r.str("model", "encoder"));
  c.model.proj_dim = r.integer("model", "proj_dim");
  c.model.proj_layers = r.integer("model", "proj_layers");
  c.model.input = {d.channels, d.resolution, d.resolution};
  c.model.validate();

  auto& cr = c.crafter;
  cr.bank.clear();
  for (const auto& name : split_list(r.str("crafter", "bank"))) {
    auto spec = augment::TransformSpec::defaults(augment::parse_transform_id(name));
    for (auto& [k, v] : spec.params) v = r.num("transforms", name + "." + k);
    augment::validate(spec);
    cr.bank.push_back(spec);
  }
  if (cr.bank.size() < 2) throw ValidationError("crafter.bank needs at least 2 transforms");
  cr.lambda = r.num("crafter", "lambda");
  if (!(cr.lambda > 0.0 && cr.lambda <= 1.0)) throw ValidationError("crafter.lambda must lie in (0, 1]");
  cr.max_iters = static_cast<int>(r.integer("crafter", "max_iters"));
  if (cr.max_iters < 1) throw ValidationError("crafter.max_iters must be >= 1");
  cr.classifier.encoder = nets::parse_encoder_kind(r.str("crafter", "classifier_encoder"));
  cr.classifier.epochs = static_cast<int>(r.integer("crafter", "classifier_epochs"));
  cr.classifier.batch_size = r.integer("crafter", "classifier_batch_size");
  cr.classifier.lr = r.num("crafter", "classifier_lr");
  cr.classifier.verbose = c.run.verbose;
  if (cr.classifier.epochs < 1 || cr.classifier.batch_size < 1 || cr.classifier.lr < 0.0) {
    throw ValidationError("crafter classifier epochs/batch size must be >= 1 and lr >= 0");
  }
  cr.gmm.components = static_cast<int>(r.integer("crafter", "gmm_components"));
  cr.gmm.restarts = static_cast<int>(r.integer("crafter", "gmm_restarts"));
  cr.gmm.max_iter = static_cast<int>(r.integer("crafter", "gmm_max_iter"));
  if (cr.gmm.components < 1 || cr.gmm.restarts < 1 || cr.gmm.max_iter < 1) {
    throw ValidationError("crafter GMM components/restarts/max_iter must be >= 1");
  }

  auto& t = c.train;
  t.epochs = static_cast<int>(r.integer("train", "epochs"));
  t.batch_size = r.integer("train", "batch_size");
  t.optimizer = trainer::parse_optimizer(r.str("train", "optimizer"));
  t.peak_lr = r.num("train", "peak_lr");
  t.warmup_epochs = static_cast<int>(r.integer("train", "warmup_epochs"));
  t.weight_decay = r.num("train", "weight_decay");
  t.momentum = r.num("train", "momentum");
  t.lars_eta = r.num("train", "lars_eta");
  t.grad_clip = r.num("train", "grad_clip");
  t.temperature = r.num("loss", "temperature");
  t.loss.cls_weight = r.num("loss", "cls_weight");
  t.loss.eps_num = r.num("loss", "eps_num");
  t.loss.opposite_weight = r.num("loss", "opposite_weight");
  t.loss.reduction = losses::Reduction::mean;
  if (t.loss.cls_weight < 0.0 || t.loss.opposite_weight < 0.0 || !(t.loss.eps_num > 0.0)) {
    throw ValidationError("loss weights must be >= 0 and loss.eps_num > 0");
  }
  t.attack.epsilon = r.num("train", "attack_epsilon");
  t.attack.steps = static_cast<int>(r.integer("train", "attack_steps"));
  t.attack.alpha = r.num("train", "attack_alpha");
  t.attack.random_init = r.flag("train", "attack_random_init");
  t.attack.restarts = 1;
  t.craft_max_iters = cr.max_iters;
  t.seed = c.run.seed;
  t.workers = c.run.workers;
  t.verbose = c.run.verbose;
  auto& v = t.views;
  v.ops.clear();
  for (const auto& op : split_list(r.str("views", "ops"))) v.ops.push_back(augment::parse_light_op(op));
  v.brightness = r.num("views", "brightness");
  v.contrast = r.num("views", "contrast");
  v.saturation = r.num("views", "saturation");
  v.jitter_prob = r.num("views", "jitter_prob");
  v.grayscale_prob = r.num("views", "grayscale_prob");
  v.crop_min_area = r.num("views", "crop_min_area");
  v.crop_max_area = r.num("views", "crop_max_area");
  if (!(v.crop_min_area > 0.0 && v.crop_min_area <= v.crop_max_area && v.crop_max_area <= 1.0)) {
    throw ValidationError("views crop areas must satisfy 0 < min <= max <= 1");
  }
  t.validate();

  auto& e = c.eval;
  const double eps = r.num("eval", "epsilon");
  const int steps = static_cast<int>(r.integer("eval", "pgd_steps"));
  const int restarts = static_cast<int>(r.integer("eval", "pgd_restarts"));
  const double alpha = r.num("eval", "pgd_alpha");
  const Seed attack_seed = derive_seed(derive_seed(c.run.seed, "attack"), "eval");
  for (const auto& name : split_list(r.str("eval", "conditions"))) {
    evalkit::Condition cond;
    cond.attack.epsilon = eps;
    cond.attack.steps = steps;
    cond.attack.restarts = restarts;
    cond.attack.alpha = alpha;
    cond.attack.seed = derive_seed(attack_seed, name);
    if (name == "clean") {
      cond = evalkit::Condition::clean();
    } else if (name == "pgd") {
      cond.kind = evalkit::ConditionKind::pgd;
      cond.name = "pgd-" + std::to_string(steps);
    } else if (name == "pgd_l2") {
      cond.kind = evalkit::ConditionKind::pgd;
      cond.attack.norm = attacks::Norm::l2;
      cond.attack.epsilon = r.num("eval", "l2_epsilon");
      cond.name = "pgd_l2-" + std::to_string(steps);
    } else if (name == "fgsm") {
      cond.kind = evalkit::ConditionKind::fgsm;
      cond.attack.steps = 1;
      cond.attack.restarts = 1;
      cond.attack.alpha = eps;
      cond.attack.random_init = false;
      cond.name = "fgsm";
    } else if (name == "blackbox") {
      cond.kind = evalkit::ConditionKind::blackbox;
      cond.queries = static_cast<int>(r.integer("eval", "blackbox_queries"));
      if (cond.queries < 1) throw ValidationError("eval.blackbox_queries must be >= 1");
      cond.name = "blackbox-" + std::to_string(cond.queries);
    } else {
      throw ValidationError("eval.conditions: unknown condition '" + name + "' (clean, pgd, pgd_l2, fgsm, blackbox)");
    }
    if (cond.kind != evalkit::ConditionKind::clean) cond.attack.validate();
    e.conditions.push_back(cond);
  }
  for (const auto& name : split_list(r.str("eval", "variants"))) e.variants.push_back(evalkit::parse_score_variant(name));
  if (e.variants.empty()) throw ValidationError("eval.variants must list at least one score variant");
  e.chunk = r.integer("eval", "chunk");
  if (e.chunk < 1) throw ValidationError("eval.chunk must be >= 1");
  e.transcripts = r.flag("eval", "transcripts");
  return c;
}

}  // namespace cobra::config
