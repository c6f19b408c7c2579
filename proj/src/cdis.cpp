#include "cdikt/cdis.hpp"

#include <numeric>

#include "cdikt/ops.hpp"

namespace cdikt {

char view_tag(View view) { return view == View::kDrone ? 'd' : 's'; }

View parse_view(char tag) {
  if (tag == 'd') return View::kDrone;
  if (tag == 's') return View::kSatellite;
  throw std::invalid_argument(std::string("unknown view tag '") + tag + "'");
}

std::size_t CdisConfig::feature_size() const {
  std::size_t s = input_size;
  for (std::size_t i = 0; i < widths.size(); ++i) s = (s - 1) / 2 + 1;
  return s;
}

void CdisConfig::validate() const {
  if (widths.empty()) throw ConfigError("backbone needs at least one stage");
  for (auto w : widths)
    if (w == 0) throw ConfigError("backbone widths must be positive");
  if (input_size < 3) throw ConfigError("input size must be at least 3");
  if (num_classes < 2) {
    throw ConfigError("classifier needs at least 2 classes, got " + std::to_string(num_classes));
  }
  if (se_ratio == 0 || channels() / se_ratio == 0) throw ConfigError("SE ratio too large for channel count");
  if (cwr_expansion == 0) throw ConfigError("CWR expansion must be positive");
}

CdisNet::CdisNet(CdisConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t C = config_.channels();
  const std::size_t E = C * config_.cwr_expansion;
  const std::size_t R = C / config_.se_ratio;

  auto conv_dw = [&](const std::string& name, std::size_t ch) {
    params_.add(name + ".weight", {ch, 3, 3}, Init::kUniformFanIn, rng, 9);
    params_.add(name + ".bias", {ch}, Init::kZeros, rng);
  };
  auto conv_pw = [&](const std::string& name, std::size_t out, std::size_t in) {
    params_.add(name + ".weight", {out, in}, Init::kUniformFanIn, rng, in);
    params_.add(name + ".bias", {out}, Init::kZeros, rng);
  };
  auto norm = [&](const std::string& name, std::size_t ch) {
    params_.add(name + ".scale", {ch}, Init::kOnes, rng);
    params_.add(name + ".shift", {ch}, Init::kZeros, rng);
  };

  std::size_t in = 3;
  for (std::size_t s = 0; s < config_.widths.size(); ++s) {
    const std::string stage = "backbone.s" + std::to_string(s);
    const std::size_t out = config_.widths[s];
    conv_dw(stage + ".down.dw", in);
    conv_pw(stage + ".down.pw", out, in);
    norm(stage + ".down.norm", out);
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
      const std::string block = stage + ".b" + std::to_string(b);
      conv_dw(block + ".dw", out);
      norm(block + ".norm", out);
      conv_pw(block + ".pw1", 2 * out, out);
      conv_pw(block + ".pw2", out, 2 * out);
    }
    in = out;
  }
  norm("backbone.head_norm", C);

  conv_dw("sifl.s1.dwq", C);
  norm("sifl.s1.norm_in", C);
  conv_pw("sifl.s1.cwr.i1", E, C);
  conv_pw("sifl.s1.cwr.i2", C, E);
  conv_pw("sifl.s1.cwr.psi", C, C);
  conv_dw("sifl.s1.gate.dwk", C);
  conv_pw("sifl.s1.gate.lin", C, C);
  norm("sifl.s1.norm_out", C);

  conv_dw("sifl.s2.dwq", C);
  norm("sifl.s2.norm_in", C);
  conv_pw("sifl.s2.se.i1", R, C);
  conv_pw("sifl.s2.se.i2", C, R);
  conv_pw("sifl.s2.mlp.p1", E, C);
  conv_pw("sifl.s2.mlp.p2", C, E);

  conv_dw("siel.dwv", 2);
  conv_pw("siel.psik", 1, 2);

  for (const char* branch : {"pooled", "h", "w"}) {
    const std::string name = std::string("cls.") + branch;
    conv_pw(name + ".fc", C, C);
    norm(name + ".norm", C);
    conv_pw(name + ".out", config_.num_classes, C);
  }
}

Tensor CdisNet::pointwise(const Tensor& x, const std::string& name) const {
  return conv2d_pointwise(x, p(name + ".weight"), &p(name + ".bias"));
}

Tensor CdisNet::depthwise(const Tensor& x, const std::string& name, std::size_t stride) const {
  if (x.dim() == 2) {
    // A [C,L] sequence is convolved as a 1xL map.
    Tensor map = reshape(x, {x.shape()[0], 1, x.shape()[1]});
    Tensor out = conv2d_depthwise(map, p(name + ".weight"), &p(name + ".bias"), stride, 1);
    return reshape(out, {out.shape()[0], out.shape()[2]});
  }
  return conv2d_depthwise(x, p(name + ".weight"), &p(name + ".bias"), stride, 1);
}

Tensor CdisNet::norm(const Tensor& x, const std::string& name) const {
  return normalize_layer(x, p(name + ".scale"), p(name + ".shift"));
}

Tensor CdisNet::backbone(const Tensor& image) const {
  const std::size_t S = config_.input_size;
  if (image.shape() != Shape{3, S, S}) {
    throw ShapeError("backbone: expected image " + shape_str({3, S, S}) + ", got " + shape_str(image.shape()));
  }
  Tensor x = image;
  for (std::size_t s = 0; s < config_.widths.size(); ++s) {
    const std::string stage = "backbone.s" + std::to_string(s);
    x = gelu(norm(pointwise(depthwise(x, stage + ".down.dw", 2), stage + ".down.pw"), stage + ".down.norm"));
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
      const std::string block = stage + ".b" + std::to_string(b);
      Tensor y = norm(depthwise(x, block + ".dw", 1), block + ".norm");
      y = pointwise(gelu(pointwise(y, block + ".pw1")), block + ".pw2");
      x = add(x, y);
    }
  }
  return x;
}

Tensor CdisNet::sifl_stage1(const Tensor& seq) const {
  if (seq.dim() != 2 || seq.shape()[0] != config_.channels()) {
    throw ShapeError("sifl_stage1: expected [" + std::to_string(config_.channels()) + ",L], got " +
                     shape_str(seq.shape()));
  }
  Tensor local = depthwise(seq, "sifl.s1.dwq", 1);
  Tensor residual = add(local, seq);
  Tensor enhanced = norm(residual, "sifl.s1.norm_in");
  // Channel-wise refinement: I(.) -> psi -> gating.
  Tensor latent = pointwise(gelu(pointwise(enhanced, "sifl.s1.cwr.i1")), "sifl.s1.cwr.i2");
  Tensor refined = pointwise(latent, "sifl.s1.cwr.psi");
  Tensor gate = sigmoid(depthwise(refined, "sifl.s1.gate.dwk", 1));
  Tensor gated = mul(gate, pointwise(refined, "sifl.s1.gate.lin"));
  return add(norm(gated, "sifl.s1.norm_out"), residual);
}

Tensor CdisNet::sifl_stage2(const Tensor& seq) const {
  if (seq.dim() != 2 || seq.shape()[0] != config_.channels()) {
    throw ShapeError("sifl_stage2: expected [" + std::to_string(config_.channels()) + ",L], got " +
                     shape_str(seq.shape()));
  }
  const std::size_t C = seq.shape()[0], L = seq.shape()[1];
  Tensor local = depthwise(seq, "sifl.s2.dwq", 1);
  Tensor residual = add(local, seq);
  Tensor enhanced = norm(residual, "sifl.s2.norm_in");
  Tensor excite = reshape(se_weights(enhanced), {C, 1});
  Tensor mlp = pointwise(gelu(pointwise(enhanced, "sifl.s2.mlp.p1")), "sifl.s2.mlp.p2");
  return add(mul(expand(excite, {C, L}), mlp), residual);
}

Tensor CdisNet::se_weights(const Tensor& enhanced) const {
  const std::size_t C = enhanced.shape()[0];
  Tensor squeeze = reshape(global_avg_pool(enhanced), {C, 1});
  Tensor excite = sigmoid(pointwise(gelu(pointwise(squeeze, "sifl.s2.se.i1")), "sifl.s2.se.i2"));
  return reshape(excite, {C});
}

SielOutputs CdisNet::siel(const Tensor& x) const {
  if (x.dim() != 3) throw ShapeError("siel: expected [C,H,W], got " + shape_str(x.shape()));
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (H != W) throw ShapeError("siel: cross-path interaction needs H == W, got " + shape_str(x.shape()));

  Tensor fh = permute(x, {1, 0, 2});  // [H,C,W]
  Tensor fw = permute(x, {2, 1, 0});  // [W,H,C]

  auto descriptor = [](const Tensor& f, std::size_t axis) {
    std::vector<Tensor> parts{pool_axis(f, axis, PoolMode::kMax), pool_axis(f, axis, PoolMode::kAvg)};
    return stack(parts);
  };
  Tensor dh = permute(descriptor(fh, 2), {0, 2, 1});  // [2,C,H]
  Tensor dw = descriptor(fw, 1);                     // [2,W,C]

  auto compact = [&](const Tensor& d) {
    Tensor y = pointwise(depthwise(d, "siel.dwv", 1), "siel.psik");
    return reshape(y, {y.shape()[1], y.shape()[2]});
  };
  Tensor ah = compact(dh);                      // [C,H]
  Tensor aw = permute(compact(dw), {1, 0});     // [C,W]
  Tensor attention = sigmoid(add(ah, aw));      // [C,N]

  Tensor att_t = permute(attention, {1, 0});    // [N,C]
  Tensor out_h = mul(fh, expand(reshape(att_t, {H, C, 1}), {H, C, W}));
  Tensor out_w = mul(fw, expand(reshape(att_t, {W, 1, C}), {W, H, C}));
  return {permute(out_h, {1, 0, 2}), permute(out_w, {2, 1, 0}), attention};
}

Tensor CdisNet::classifier_branch(const Tensor& feature, const std::string& name) const {
  const std::size_t C = feature.numel();
  Tensor col = reshape(feature, {C, 1});
  Tensor hidden = norm(pointwise(col, name + ".fc"), name + ".norm");
  Tensor logits = pointwise(hidden, name + ".out");
  return reshape(logits, {config_.num_classes});
}

std::vector<Tensor> CdisNet::classifier_head(const Tensor& pooled, const Tensor& siel_h,
                                             const Tensor& siel_w) const {
  return {classifier_branch(pooled, "cls.pooled"), classifier_branch(global_avg_pool(siel_h), "cls.h"),
          classifier_branch(global_avg_pool(siel_w), "cls.w")};
}

CdisOutputs CdisNet::forward(const Tensor& image) const {
  Tensor fmap = backbone(image);
  CdisOutputs out;
  out.sifl_out = sifl_stage2(sifl_stage1(flatten_spatial(fmap)));
  out.pooled = pooled_descriptor(fmap);
  auto spatial = siel(fmap);
  out.siel_h = spatial.siel_h;
  out.siel_w = spatial.siel_w;
  out.class_logits = classifier_head(out.pooled, out.siel_h, out.siel_w);
  return out;
}

Tensor CdisNet::pooled_descriptor(const Tensor& feature_map) const {
  const std::size_t C = feature_map.shape()[0];
  // Pool, then normalize across channels, as ConvNeXt does before its head.
  Tensor col = reshape(global_avg_pool(feature_map), {C, 1});
  return reshape(norm(col, "backbone.head_norm"), {C});
}

Tensor CdisNet::embed(const Tensor& image) const { return l2_normalize(pooled_descriptor(backbone(image))); }

Tensor stack(std::span<const Tensor> xs) {
  if (xs.empty()) throw ShapeError("stack: no operands");
  std::vector<Tensor> rows;
  rows.reserve(xs.size());
  for (const auto& x : xs) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    rows.push_back(reshape(x, s));
  }
  return concat(rows, 0);
}

Tensor info_nce(const Tensor& a, const Tensor& b, double temperature) {
  if (a.dim() != 2 || a.shape() != b.shape()) {
    throw ShapeError("info_nce: expected matching [B,C] batches, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  if (temperature <= 0.0) throw std::invalid_argument("info_nce: temperature must be positive");
  const std::size_t B = a.shape()[0];
  Tensor logits = scale(matmul(l2_normalize(a), permute(l2_normalize(b), {1, 0})), 1.0 / temperature);
  std::vector<std::size_t> labels(B);
  std::iota(labels.begin(), labels.end(), 0);
  Tensor forward_dir = cross_entropy(logits, labels);
  Tensor backward_dir = cross_entropy(permute(logits, {1, 0}), labels);
  return scale(add(forward_dir, backward_dir), 0.5);
}

Tensor weighted_l1(const Tensor& mse_term, const Tensor& ce_term, const Tensor& infonce_term,
                   const LossWeights& weights) {
  std::vector<Tensor> parts{scale(mse_term, weights.mse), scale(ce_term, weights.ce),
                            scale(infonce_term, weights.infonce)};
  return add_n(parts);
}

L1Terms loss_l1(std::span<const CdisOutputs> drone, std::span<const CdisOutputs> satellite,
                std::span<const std::size_t> labels, const LossWeights& weights, double temperature) {
  const std::size_t B = drone.size();
  if (B == 0) throw std::invalid_argument("loss_l1: empty paired batch");
  if (satellite.size() != B || labels.size() != B) {
    throw ShapeError("loss_l1: drone, satellite and label counts differ");
  }
  std::vector<Tensor> mse_terms, logits, pooled_d, pooled_s;
  std::vector<std::size_t> ce_labels;
  for (std::size_t i = 0; i < B; ++i) {
    mse_terms.push_back(mse(drone[i].sifl_out, satellite[i].sifl_out));
    for (const auto* out : {&drone[i], &satellite[i]}) {
      for (const auto& l : out->class_logits) {
        logits.push_back(l);
        ce_labels.push_back(labels[i]);
      }
    }
    pooled_d.push_back(drone[i].pooled);
    pooled_s.push_back(satellite[i].pooled);
  }
  L1Terms terms;
  terms.mse = scale(add_n(mse_terms), 1.0 / static_cast<double>(B));
  terms.ce = cross_entropy(stack(logits), ce_labels);
  terms.infonce = info_nce(stack(pooled_d), stack(pooled_s), temperature);
  terms.total = weighted_l1(terms.mse, terms.ce, terms.infonce, weights);
  return terms;
}

}  // namespace cdikt
