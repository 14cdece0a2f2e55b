// SPDX-License-Identifier: Apache-2.0

#include "armattn/run_config.hpp"

#include <cstdint>

#include <fstream>
#include <set>

namespace armattn {

namespace {

using nlohmann::json;

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool get(const std::string& key, int& out) {
    const json* v = find(key);
    if (v == nullptr) return false;
    if (!v->is_number_integer()) throw ConfigError(key_path(key), "expected an integer");
    out = v->get<int>();
    return true;
  }
  bool get(const std::string& key, std::size_t& out) {
    const json* v = find(key);
    if (v == nullptr) return false;
    if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
      throw ConfigError(key_path(key), "expected a non-negative integer");
    }
    out = v->get<std::size_t>();
    return true;
  }
  bool get(const std::string& key, double& out) {
    const json* v = find(key);
    if (v == nullptr) return false;
    if (!v->is_number()) throw ConfigError(key_path(key), "expected a number");
    out = v->get<double>();
    return true;
  }
  bool get(const std::string& key, bool& out) {
    const json* v = find(key);
    if (v == nullptr) return false;
    if (!v->is_boolean()) throw ConfigError(key_path(key), "expected true or false");
    out = v->get<bool>();
    return true;
  }
  bool get(const std::string& key, std::string& out) {
    const json* v = find(key);
    if (v == nullptr) return false;
    if (!v->is_string()) throw ConfigError(key_path(key), "expected a string");
    out = v->get<std::string>();
    return true;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(key_path(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Runs `check` and re-throws std::invalid_argument as a ConfigError whose
// path is the "<section>.<field>" prefix of the message when present.
template <class F>
void checked(F&& check) {
  try {
    check();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    const auto space = msg.find(' ');
    if (space != std::string::npos && msg.find('.') < space) throw ConfigError(msg.substr(0, space), msg.substr(space + 1));
    throw ConfigError("<config>", msg);
  }
}

void parse_data(const json& j, DataConfig& d) {
  Section s(j, "data");
  s.get("source", d.source);
  s.get("L_I", d.input_len);
  s.get("L_P", d.patch_len);
  s.get("preset", d.split.preset);
  if (const json* r = s.find("ratios")) {
    Section rs(*r, "data.ratios");
    rs.get("train", d.split.train);
    rs.get("val", d.split.val);
    rs.get("test", d.split.test);
    rs.finish();
    if (!j.contains("preset")) d.split.preset = "ratios";
  }
  if (const json* syn = s.find("synthetic")) {
    Section ss(*syn, "data.synthetic");
    ss.get("kind", d.synthetic.kind);
    ss.get("length", d.synthetic.length);
    ss.get("channels", d.synthetic.channels);
    ss.get("noise", d.synthetic.noise);
    ss.finish();
  }
  s.finish();
  if (d.input_len < 1) throw ConfigError("data.L_I", "must be >= 1");
  if (d.patch_len < 1) throw ConfigError("data.L_P", "must be >= 1");
  const std::set<std::string> presets = {"generic", "ett-hourly", "ett-15min", "ratios"};
  if (!presets.count(d.split.preset)) throw ConfigError("data.preset", "unknown preset '" + d.split.preset + "'");
  const std::set<std::string> kinds = {"seasonal", "arma11", "seasonal-plus-shocks"};
  if (!kinds.count(d.synthetic.kind)) throw ConfigError("data.synthetic.kind", "unknown kind '" + d.synthetic.kind + "'");
  if (d.synthetic.channels < 1) throw ConfigError("data.synthetic.channels", "must be >= 1");
  if (d.synthetic.length < 1) throw ConfigError("data.synthetic.length", "must be >= 1");
  if (d.synthetic.noise < 0.0) throw ConfigError("data.synthetic.noise", "must be >= 0");
}

void parse_model(const json& j, ModelConfig& m, bool& channels_given) {
  Section s(j, "model");
  s.get("num_layers", m.num_layers);
  s.get("heads", m.heads);
  channels_given = s.get("channels", m.channels);
  s.get("model_dim", m.model_dim);
  s.get("max_tokens", m.max_tokens);
  s.get("dropout", m.dropout);
  s.get("init_std", m.init_std);
  s.get("ma_enabled", m.ma_enabled);
  std::string variant;
  if (s.get("variant", variant)) {
    const auto kind = parse_attn_kind(variant);
    if (!kind) throw ConfigError("model.variant", "unknown attention variant '" + variant + "'");
    m.kind = *kind;
  }
  s.finish();
}

void parse_arma(const json& j, ModelConfig& m) {
  Section s(j, "arma");
  s.get("alpha", m.alpha);
  s.get("leaky_slope", m.leaky_slope);
  s.get("share_wq", m.share_wq);
  bool identity = false;
  if (s.get("wv_identity", identity)) m.wv_identity = identity;
  s.finish();
  if (!(m.alpha > 0.0)) throw ConfigError("arma.alpha", "must be > 0");
  if (!(m.leaky_slope > 0.0 && m.leaky_slope < 1.0)) throw ConfigError("arma.leaky_slope", "must lie in (0, 1)");
}

void parse_train(const json& j, TrainConfig& t) {
  Section s(j, "train");
  s.get("lr_peak", t.lr_peak);
  s.get("lr_start", t.lr_start);
  s.get("warmup_epochs", t.warmup_epochs);
  s.get("max_epochs", t.max_epochs);
  s.get("patience", t.patience);
  s.get("batch_size", t.batch_size);
  s.get("grad_accum_steps", t.grad_accum_steps);
  s.get("beta1", t.beta1);
  s.get("beta2", t.beta2);
  s.get("weight_decay", t.weight_decay);
  s.get("eps", t.eps);
  s.get("seed", t.seed);
  if (const json* w = s.find("last_token_weight"); w != nullptr && !w->is_null()) {
    if (!w->is_number()) throw ConfigError("train.last_token_weight", "expected a number or null");
    t.last_token_weight = w->get<double>();
  }
  s.get("max_steps_per_epoch", t.max_steps_per_epoch);
  s.get("max_steps", t.max_steps);
  s.get("eval_stride", t.eval_stride);
  s.finish();
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  Section root(j, "");
  if (const json* d = root.find("data")) parse_data(*d, c.data);
  if (const json* m = root.find("model")) parse_model(*m, c.model, c.channels_given);
  if (const json* a = root.find("arma")) parse_arma(*a, c.model);
  if (const json* t = root.find("train")) parse_train(*t, c.train);
  root.get("output_dir", c.output_dir);
  root.finish();
  c.model.patch_len = c.data.patch_len;
  checked([&] { c.train.validate(); });
  if (!c.data.source.empty() || c.channels_given) {
    checked([&] { c.model.validate(); });
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("--config", std::string("invalid JSON in ") + path + ": " + e.what());
  }
  return parse_run_config(j);
}

data::SeriesDataset load_dataset(RunConfig& config) {
  data::SeriesDataset ds;
  if (config.data.source.empty()) {
    ds = data::gen_synthetic(config.data.synthetic, config.train.seed);
  } else {
    try {
      ds = data::load_csv(config.data.source);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("data.source", e.what());
    }
  }
  if (config.channels_given && config.model.channels != ds.channels()) {
    throw ConfigError("model.channels", "is " + std::to_string(config.model.channels) + " but the data has " +
                                            std::to_string(ds.channels()) + " channels");
  }
  config.model.channels = ds.channels();
  config.model.patch_len = config.data.patch_len;
  checked([&] { config.model.validate(); });
  const int n = data::token_count(config.data.input_len, config.data.patch_len);
  if (n > config.model.max_tokens) {
    throw ConfigError("model.max_tokens", "L_I / L_P needs " + std::to_string(n) + " tokens, above max_tokens " +
                                              std::to_string(config.model.max_tokens));
  }
  try {
    return data::split_standardize(std::move(ds), config.data.split);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("data.preset", e.what());
  }
}

nlohmann::json RunConfig::to_json() const {
  json j;
  json d;
  if (!data.source.empty()) d["source"] = data.source;
  d["synthetic"] = {{"kind", data.synthetic.kind},
                    {"length", data.synthetic.length},
                    {"channels", data.synthetic.channels},
                    {"noise", data.synthetic.noise}};
  d["L_I"] = data.input_len;
  d["L_P"] = data.patch_len;
  d["preset"] = data.split.preset;
  d["ratios"] = {{"train", data.split.train}, {"val", data.split.val}, {"test", data.split.test}};
  j["data"] = d;
  json m = model.to_json();
  json a = {{"alpha", m["alpha"]}, {"leaky_slope", m["leaky_slope"]}, {"share_wq", m["share_wq"]},
            {"wv_identity", m["wv_identity"]}};
  for (const char* key : {"alpha", "leaky_slope", "share_wq", "wv_identity", "patch_len"}) m.erase(key);
  j["model"] = m;
  j["arma"] = a;
  j["train"] = train.to_json();
  j["output_dir"] = output_dir;
  return j;
}

}  // namespace armattn
