// SPDX-License-Identifier: Apache-2.0

#include "armattn/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "armattn/ops.hpp"

namespace armattn {

namespace {

constexpr int kCheckpointVersion = 1;

Tensor rms_norm(const Tensor& x, const Tensor& scale) {
  return ops::mul(ops::rms_normalize(x), ops::broadcast_to(scale, x.shape()));
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(values), true);
}

Linear make_linear(std::size_t in, std::size_t out, bool bias, double stddev, Rng& rng) {
  Linear l;
  l.w = normal_tensor({in, out}, stddev, rng);
  if (bias) l.b = Tensor::zeros({out}, true);
  return l;
}

}  // namespace

int resolve_dim(int channels, int heads) {
  if (channels < 1) throw std::invalid_argument("model.channels must be >= 1");
  if (heads < 1) throw std::invalid_argument("model.heads must be >= 1");
  const int raw = static_cast<int>(std::lround(16.0 * std::sqrt(static_cast<double>(channels))));
  return (raw + heads - 1) / heads * heads;
}

int ModelConfig::dim() const { return model_dim > 0 ? model_dim : resolve_dim(channels, heads); }

AttnVariant ModelConfig::variant() const { return AttnVariant::make(kind, dim(), heads); }

ArmaConfig ModelConfig::arma() const {
  ArmaConfig c = ma_enabled ? ArmaConfig::with_ma(variant()) : ArmaConfig::autoregressive(variant());
  c.alpha = alpha;
  c.leaky_slope = leaky_slope;
  c.share_wq = share_wq;
  if (wv_identity) c.wv_identity = *wv_identity;
  return c;
}

void ModelConfig::validate() const {
  if (num_layers < 1) throw std::invalid_argument("model.num_layers must be >= 1");
  if (heads < 1) throw std::invalid_argument("model.heads must be >= 1");
  if (channels < 1) throw std::invalid_argument("model.channels must be >= 1");
  if (model_dim < 0) throw std::invalid_argument("model.model_dim must be >= 0");
  if (dim() % heads != 0) throw std::invalid_argument("model.model_dim must be divisible by model.heads");
  if (patch_len < 1) throw std::invalid_argument("model.patch_len must be >= 1");
  if (max_tokens < 1) throw std::invalid_argument("model.max_tokens must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model.dropout must lie in [0, 1)");
  if (!(init_std > 0.0)) throw std::invalid_argument("model.init_std must be > 0");
  try {
    arma().validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("model.") + e.what());
  }
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j;
  j["num_layers"] = num_layers;
  j["heads"] = heads;
  j["channels"] = channels;
  j["model_dim"] = dim();
  j["patch_len"] = patch_len;
  j["max_tokens"] = max_tokens;
  j["dropout"] = dropout;
  j["variant"] = std::string(to_string(kind));
  j["ma_enabled"] = ma_enabled;
  j["alpha"] = alpha;
  j["leaky_slope"] = leaky_slope;
  j["share_wq"] = share_wq;
  j["wv_identity"] = arma().wv_identity;
  j["init_std"] = init_std;
  return j;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = ops::matmul(x, w);
  return b.defined() ? ops::add(y, ops::broadcast_to(b, y.shape())) : y;
}

ForecastModel build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed, RngStream::Init);
  const auto d = static_cast<std::size_t>(config.dim());
  const auto lp = static_cast<std::size_t>(config.patch_len);
  const double init_std = config.init_std;
  const double out_std = init_std / std::sqrt(static_cast<double>(config.num_layers));

  ForecastModel m;
  m.config = config;
  m.arma = config.arma();
  m.input = make_linear(lp, d, true, init_std, rng);
  m.pos = normal_tensor({static_cast<std::size_t>(config.max_tokens), d}, init_std, rng);
  m.norm_in = Tensor::full({d}, 1.0, true);
  for (int i = 0; i < config.num_layers; ++i) {
    Block b;
    b.norm1 = Tensor::full({d}, 1.0, true);
    b.norm2 = Tensor::full({d}, 1.0, true);
    b.attn = AttentionWeights::init(m.arma, config.dim(), config.max_tokens, rng, init_std, out_std);
    b.fc1 = make_linear(d, 4 * d, true, init_std, rng);
    b.fc2 = make_linear(4 * d, d, true, out_std, rng);
    m.blocks.push_back(std::move(b));
  }
  m.norm_out = Tensor::full({d}, 1.0, true);
  m.head = make_linear(d, lp, true, init_std, rng);
  return m;
}

Tensor ForecastModel::forward(const Tensor& patches, const LayerRuntime& runtime) const {
  if (patches.dim() != 3 || patches.size(2) != static_cast<std::size_t>(config.patch_len)) {
    throw ShapeError("patches must be [B, N, " + std::to_string(config.patch_len) + "], got " +
                     shape_str(patches.shape()));
  }
  const std::size_t b = patches.size(0), n = patches.size(1);
  const auto d = static_cast<std::size_t>(config.dim());
  if (n == 0) throw std::invalid_argument("forward over zero tokens");
  if (n > static_cast<std::size_t>(config.max_tokens)) {
    throw std::invalid_argument("sequence of " + std::to_string(n) + " tokens exceeds max_tokens " +
                                std::to_string(config.max_tokens));
  }
  const bool drop = runtime.training && runtime.dropout > 0.0;
  if (drop && runtime.rng == nullptr) throw std::invalid_argument("dropout needs an rng");

  Tensor x = ops::add(input(patches), ops::broadcast_to(ops::slice(pos, 0, 0, n), {b, n, d}));
  x = rms_norm(x, norm_in);
  for (const Block& blk : blocks) {
    x = ops::add(x, arma_attention_layer(rms_norm(x, blk.norm1), blk.attn, arma, runtime));
    Tensor hidden = ops::gelu(blk.fc1(rms_norm(x, blk.norm2)));
    if (drop) hidden = dropout(hidden, runtime.dropout, *runtime.rng);
    x = ops::add(x, blk.fc2(hidden));
  }
  return head(rms_norm(x, norm_out));
}

std::vector<std::pair<std::string, Tensor>> ForecastModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("input.w", input.w);
  out.emplace_back("input.b", input.b);
  out.emplace_back("pos", pos);
  out.emplace_back("norm_in.scale", norm_in);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Block& blk = blocks[i];
    const std::string p = "layer" + std::to_string(i);
    out.emplace_back(p + ".norm1.scale", blk.norm1);
    for (auto& named : blk.attn.named(p + ".attn")) out.push_back(std::move(named));
    out.emplace_back(p + ".norm2.scale", blk.norm2);
    out.emplace_back(p + ".mlp.fc1_w", blk.fc1.w);
    out.emplace_back(p + ".mlp.fc1_b", blk.fc1.b);
    out.emplace_back(p + ".mlp.fc2_w", blk.fc2.w);
    out.emplace_back(p + ".mlp.fc2_b", blk.fc2.b);
  }
  out.emplace_back("norm_out.scale", norm_out);
  out.emplace_back("head.w", head.w);
  out.emplace_back("head.b", head.b);
  return out;
}

std::vector<Tensor> ForecastModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t ForecastModel::param_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : named_parameters()) total += t.numel();
  return total;
}

nlohmann::json checkpoint_json(const ForecastModel& model) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["config"] = model.config.to_json();
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : model.named_parameters()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}});
  }
  j["tensors"] = std::move(tensors);
  return j;
}

void save_checkpoint(const ForecastModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << checkpoint_json(model).dump() << '\n';
  if (!out) throw std::runtime_error("cannot write " + path);
}

void load_weights(ForecastModel& model, const nlohmann::json& checkpoint) {
  if (checkpoint.value("version", 0) != kCheckpointVersion) throw std::invalid_argument("unsupported checkpoint version");
  if (checkpoint.contains("config")) {
    const auto& cfg = checkpoint.at("config");
    const std::string variant = cfg.value("variant", std::string(to_string(model.config.kind)));
    if (variant != to_string(model.config.kind)) {
      throw std::invalid_argument("checkpoint variant '" + variant + "' does not match model variant '" +
                                  std::string(to_string(model.config.kind)) + "'");
    }
  }
  const auto& tensors = checkpoint.at("tensors");
  auto params = model.named_parameters();
  if (tensors.size() != params.size()) throw std::invalid_argument("checkpoint tensor count does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = tensors[i];
    auto& [name, t] = params[i];
    if (entry.at("name").get<std::string>() != name) {
      throw std::invalid_argument("checkpoint tensor '" + entry.at("name").get<std::string>() + "' where '" + name +
                                  "' was expected");
    }
    if (entry.at("shape").get<Shape>() != t.shape()) throw std::invalid_argument("shape mismatch for " + name);
    const auto data = entry.at("data").get<std::vector<double>>();
    if (data.size() != t.numel()) throw std::invalid_argument("size mismatch for " + name);
    std::copy(data.begin(), data.end(), t.mutable_data().begin());
  }
}

}  // namespace armattn
