#include "headgame/config.hpp"

#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "headgame/errors.hpp"
#include "headgame/rng.hpp"

namespace headgame {

using nlohmann::json;

void AnalysisConfig::validate() const {
  require(restarts <= 1000, "analysis.restarts must be <= 1000");
  require(fit_grid >= 2, "analysis.fit_grid must be >= 2");
  require(band_points >= 2, "analysis.band_points must be >= 2");
  require(histogram_bins >= 1, "analysis.histogram_bins must be >= 1");
  require(dynamics_threshold > 0.0, "analysis.dynamics_threshold must be > 0");
}

void Config::validate() const {
  model.validate();
  task.validate();
  losses.validate();
  game.validate(model.heads);
  train.validate();
  analysis.validate();
  require(task.input_dim == model.d_model(),
          "task.input_dim must equal model.heads * model.head_dim");
  require(task.classes == model.classes, "task.classes must equal model.classes");
  require(analysis.k <= model.heads, "analysis.k must not exceed model.heads");
}

namespace {

// Reads declared keys of one section, remembering which keys were consumed.
class Section {
 public:
  Section(const json& root, const char* name) : name_(name) {
    if (!root.contains(name)) return;
    const json& node = root.at(name);
    if (!node.is_object()) throw ValidationError(std::string("config: section '") + name + "' must be an object");
    node_ = &node;
  }

  template <typename T>
  void get(const char* key, T& field) {
    known_.insert(key);
    if (node_ == nullptr || !node_->contains(key)) return;
    try {
      field = node_->at(key).get<T>();
    } catch (const json::exception& e) {
      throw ValidationError("config: bad value for " + name_ + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    if (node_ == nullptr) return;
    for (const auto& [key, value] : node_->items())
      if (!known_.count(key)) throw ValidationError("config: unknown key " + name_ + "." + key);
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> known_;
};

// Every field of every section: shared by the reader and the writer so the
// two cannot drift apart.
template <typename Visitor>
void visit(Config& c, Visitor&& v) {
  v.section("model");
  v("heads", c.model.heads);
  v("head_dim", c.model.head_dim);
  v("seq_len", c.model.seq_len);
  v("batch_size", c.model.batch_size);
  v("classes", c.model.classes);
  v("init_scale", c.model.init_scale);
  v("b_clip", c.model.b_clip);

  v.section("task");
  v("classes", c.task.classes);
  v("input_dim", c.task.input_dim);
  v("components", c.task.components);
  v("mean_std", c.task.mean_std);
  v("var_min", c.task.var_min);
  v("var_max", c.task.var_max);
  v("priors", c.task.priors);
  v("means", c.task.means);
  v("covariances", c.task.covariances);
  v("pe_scale", c.task.pe_scale);
  v("n_train", c.task.n_train);
  v("n_eval", c.task.n_eval);
  v("seed", c.task.seed);

  v.section("losses");
  v("lambda_abt", c.losses.lambda_abt);
  v("lambda_ldb", c.losses.lambda_ldb);
  v("eps_ldb", c.losses.eps_ldb);
  v("bt_alpha", c.losses.bt_alpha);
  v("bt_beta", c.losses.bt_beta);
  v("bt_tau", c.losses.bt_tau);
  v("ema_alpha", c.losses.ema_alpha);
  v("ema_init", c.losses.ema_init);
  v("ema_target", c.losses.ema_target);
  v("warmup_frac", c.losses.warmup_frac);
  v("cooldown_start_frac", c.losses.cooldown_start_frac);
  v("subtract_identity", c.losses.subtract_identity);
  v("zscore_full_jacobian", c.losses.zscore_full_jacobian);
  v("zscore_eps", c.losses.zscore_eps);

  v.section("game");
  v("pi", c.game.pi);
  v("alpha_wd", c.game.alpha_wd);
  v("beta_r", c.game.beta_r);
  v("beta_c", c.game.beta_c);
  v("sigma_z", c.game.sigma_z);

  v.section("train");
  v.mode("mode", c.train.mode);
  v("seed", c.train.seed);
  v("steps", c.train.steps);
  v("lr", c.train.lr);
  v("snapshot_every", c.train.snapshot_every);
  v("equilibrium_tol", c.train.equilibrium_tol);
  v("equilibrium_window", c.train.equilibrium_window);
  v("stop_at_equilibrium", c.train.stop_at_equilibrium);
  v("deltas", c.train.deltas);
  v("taus", c.train.taus);

  v.section("analysis");
  v("k", c.analysis.k);
  v("restarts", c.analysis.restarts);
  v("n_boot", c.analysis.n_boot);
  v("fit_grid", c.analysis.fit_grid);
  v("band_points", c.analysis.band_points);
  v("histogram_bins", c.analysis.histogram_bins);
  v("dynamics_threshold", c.analysis.dynamics_threshold);
  v("seed", c.analysis.seed);
  v.section(nullptr);
}

const char* const kSections[] = {"model", "task", "losses", "game", "train", "analysis"};

struct Reader {
  const json& root;
  std::optional<Section> current;

  void section(const char* name) {
    if (current) current->finish();
    current.reset();
    if (name) current.emplace(root, name);
  }
  template <typename T>
  void operator()(const char* key, T& field) {
    current->get(key, field);
  }
  void mode(const char* key, TrainMode& m) {
    std::string s = to_string(m);
    current->get(key, s);
    try {
      m = parse_train_mode(s);
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("config: train.") + key + ": " + e.what());
    }
  }
};

struct Writer {
  json root = json::object();
  std::string name;

  void section(const char* s) {
    if (s) {
      name = s;
      root[name] = json::object();
    }
  }
  template <typename T>
  void operator()(const char* key, T& field) {
    root[name][key] = field;
  }
  void mode(const char* key, TrainMode& m) { root[name][key] = to_string(m); }
};

}  // namespace

Config parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: invalid JSON: ") + e.what());
  }
  require(root.is_object(), "config: top level must be an object");
  for (const auto& [key, value] : root.items()) {
    bool known = false;
    for (const char* s : kSections) known = known || key == s;
    if (!known) throw ValidationError("config: unknown section " + key);
  }
  Config cfg;
  visit(cfg, Reader{root, std::nullopt});
  cfg.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::string dump_config(const Config& cfg) {
  Config copy = cfg;
  Writer w;
  visit(copy, w);
  return w.root.dump(2) + "\n";
}

TrainSetup make_setup(const Config& cfg) {
  cfg.validate();
  return {cfg.model, cfg.losses, cfg.game, cfg.train, fingerprint(dump_config(cfg))};
}

}  // namespace headgame
