#include "modaldx/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "modaldx/container.hpp"

namespace modaldx {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kEmbedInitSd = 0.02;

Matrix zeros(Eigen::Index r, Eigen::Index c) { return Matrix::Zero(r, c); }

void add_row(Matrix& m, const Matrix& row) { m.rowwise() += row.row(0); }

// ---- layer norm over rows -------------------------------------------------

struct LayerNormCache {
  Matrix xhat;
  Vector inv_sd;
};

Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b, LayerNormCache* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Matrix xhat(n, d);
  Vector inv_sd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_sd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_sd(i);
  }
  Matrix y = xhat.array().rowwise() * g.row(0).array();
  add_row(y, b);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_sd = std::move(inv_sd);
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& g, const LayerNormCache& c, Matrix& dg, Matrix& db) {
  dg.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * g.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.inv_sd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

// ---- tanh-approximated GELU -----------------------------------------------

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// ---- one pass through the network, with everything backward needs ---------

struct BlockCache {
  Matrix x_in;
  LayerNormCache ln1;
  Matrix a, q, k, v;
  std::vector<Matrix> probs;  // per head, T x T
  Matrix o;
  Matrix h;
  LayerNormCache ln2;
  Matrix b, f1, g;
};

struct Pass {
  std::vector<int> slots;      // slot of each token
  std::vector<int> positions;  // slot * P + patch
  std::vector<bool> masked;    // per token
  Matrix patches;              // T x patch_dim, normalised
  Matrix slot_scalars;         // T x 3, normalised
  std::vector<BlockCache> blocks;
  LayerNormCache lnf;
  Matrix y;                    // T x D after final norm
  Matrix pooled;               // 1 x D
  std::vector<int> masked_rows;
  ForwardResult out;
};

void check_shape(const ModelConfig& cfg, const FeatureTensor& x) {
  if (x.m_modes != cfg.m_modes || x.height != cfg.grid_h || x.width != cfg.grid_w)
    throw ConfigError("feature tensor shape does not match the model configuration");
  if (static_cast<int>(x.validity_mask.size()) != x.m_modes || x.mode_scalars.rows() != x.m_modes ||
      x.mode_images.size() != static_cast<std::size_t>(x.m_modes) * kImageChannels * x.height * x.width)
    throw ConfigError("malformed feature tensor");
}

void extract_patch(const Model& model, const FeatureTensor& x, int slot, int patch, double* out) {
  const int ps = model.config.patch_size;
  const int per_row = model.config.grid_w / ps;
  const int r0 = (patch / per_row) * ps, c0 = (patch % per_row) * ps;
  int i = 0;
  for (int ch = 0; ch < kImageChannels; ++ch) {
    const double mu = model.norm.image_mean[ch], sd = model.norm.image_sd[ch];
    for (int r = 0; r < ps; ++r)
      for (int c = 0; c < ps; ++c) out[i++] = (x.pixel(slot, ch, r0 + r, c0 + c) - mu) / sd;
  }
}

Pass run_forward(const Model& model, const FeatureTensor& x, const PatchMask* mask) {
  const ModelConfig& cfg = model.config;
  const Params& p = model.params;
  check_shape(cfg, x);
  const int per_slot = cfg.patches_per_slot();
  if (mask && static_cast<int>(mask->masked.size()) != cfg.max_tokens())
    throw ConfigError("patch mask does not match the model configuration");

  Pass s;
  for (int slot = 0; slot < cfg.m_modes; ++slot) {
    if (!x.validity_mask[slot]) continue;
    for (int q = 0; q < per_slot; ++q) {
      const int pos = slot * per_slot + q;
      s.slots.push_back(slot);
      s.positions.push_back(pos);
      s.masked.push_back(mask && mask->masked[pos]);
    }
  }
  const auto T = static_cast<Eigen::Index>(s.slots.size());
  const int D = cfg.embed_dim;

  s.out.class_logits = Vector::Zero(cfg.n_classes);
  if (T == 0) {
    s.pooled = zeros(1, D);
    s.out.class_logits = (s.pooled * p.cls_w + p.cls_b).transpose();
    s.out.onset_pred_weeks = model.norm.onset_mean + model.norm.onset_sd * (s.pooled * p.reg_w + p.reg_b)(0, 0);
    s.out.reconstruction = zeros(0, cfg.patch_dim());
    return s;
  }

  s.patches.resize(T, cfg.patch_dim());
  s.slot_scalars.resize(T, kModeScalars);
  Matrix e(T, D);
  std::vector<double> buf(static_cast<std::size_t>(cfg.patch_dim()));
  for (Eigen::Index t = 0; t < T; ++t) {
    const int slot = s.slots[t];
    extract_patch(model, x, slot, s.positions[t] % per_slot, buf.data());
    for (int j = 0; j < cfg.patch_dim(); ++j) s.patches(t, j) = buf[j];
    for (int j = 0; j < kModeScalars; ++j)
      s.slot_scalars(t, j) = (x.mode_scalars(slot, j) - model.norm.scalar_mean[j]) / model.norm.scalar_sd[j];
  }
  // Masked rows are replaced by the mask embedding before the positional term.
  e.noalias() = s.patches * p.patch_w;
  add_row(e, p.patch_b);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (s.masked[t]) e.row(t) = p.mask_token.row(0);
    e.row(t) += p.pos.row(s.positions[t]);
  }
  e.noalias() += s.slot_scalars * p.scalar_w;

  const int H = cfg.n_heads, dh = D / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix xcur = std::move(e);
  s.blocks.resize(p.blocks.size());
  for (std::size_t bi = 0; bi < p.blocks.size(); ++bi) {
    const BlockParams& bp = p.blocks[bi];
    BlockCache& c = s.blocks[bi];
    c.x_in = xcur;
    c.a = layer_norm(xcur, bp.ln1_g, bp.ln1_b, &c.ln1);
    c.q = c.a * bp.wq;
    add_row(c.q, bp.bq);
    c.k = c.a * bp.wk;
    add_row(c.k, bp.bk);
    c.v = c.a * bp.wv;
    add_row(c.v, bp.bv);
    c.o.resize(T, D);
    c.probs.resize(H);
    for (int h = 0; h < H; ++h) {
      Matrix sc = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose() * scale;
      for (Eigen::Index i = 0; i < T; ++i) {
        const double mx = sc.row(i).maxCoeff();
        sc.row(i) = (sc.row(i).array() - mx).exp();
        sc.row(i) /= sc.row(i).sum();
      }
      c.o.middleCols(h * dh, dh) = sc * c.v.middleCols(h * dh, dh);
      c.probs[h] = std::move(sc);
    }
    c.h = xcur + c.o * bp.wo;
    add_row(c.h, bp.bo);
    c.b = layer_norm(c.h, bp.ln2_g, bp.ln2_b, &c.ln2);
    c.f1 = c.b * bp.w1;
    add_row(c.f1, bp.b1);
    c.g = c.f1.unaryExpr([](double v) { return gelu(v); });
    Matrix f2 = c.g * bp.w2;
    add_row(f2, bp.b2);
    xcur = c.h + f2;
  }

  s.y = layer_norm(xcur, p.lnf_g, p.lnf_b, &s.lnf);
  s.pooled = s.y.colwise().mean();
  s.out.class_logits = (s.pooled * p.cls_w + p.cls_b).transpose();
  s.out.onset_pred_weeks = model.norm.onset_mean + model.norm.onset_sd * (s.pooled * p.reg_w + p.reg_b)(0, 0);

  for (Eigen::Index t = 0; t < T; ++t)
    if (s.masked[t]) {
      s.masked_rows.push_back(static_cast<int>(t));
      s.out.masked_tokens.push_back(s.positions[t]);
    }
  s.out.reconstruction.resize(static_cast<Eigen::Index>(s.masked_rows.size()), cfg.patch_dim());
  for (std::size_t i = 0; i < s.masked_rows.size(); ++i)
    s.out.reconstruction.row(static_cast<Eigen::Index>(i)) = s.y.row(s.masked_rows[i]) * p.rec_w + p.rec_b;
  return s;
}

// dlogits: 1 x C, draw: d loss / d raw regression output, drec: masked rows x patch_dim.
Params run_backward(const Model& model, const Pass& s, const Matrix& dlogits, double draw, const Matrix& drec) {
  const ModelConfig& cfg = model.config;
  const Params& p = model.params;
  Params g = p.zeros_like();

  g.cls_w.noalias() += s.pooled.transpose() * dlogits;
  g.cls_b += dlogits;
  g.reg_w += s.pooled.transpose() * draw;
  g.reg_b(0, 0) += draw;
  const auto T = static_cast<Eigen::Index>(s.slots.size());
  if (T == 0) return g;

  const Matrix dpooled = dlogits * p.cls_w.transpose() + draw * p.reg_w.transpose();
  Matrix dy = dpooled.replicate(T, 1) / static_cast<double>(T);
  for (std::size_t i = 0; i < s.masked_rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int t = s.masked_rows[i];
    g.rec_w.noalias() += s.y.row(t).transpose() * drec.row(r);
    g.rec_b += drec.row(r);
    dy.row(t) += drec.row(r) * p.rec_w.transpose();
  }

  Matrix dx = layer_norm_backward(dy, p.lnf_g, s.lnf, g.lnf_g, g.lnf_b);

  const int D = cfg.embed_dim, H = cfg.n_heads, dh = D / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t bi = p.blocks.size(); bi-- > 0;) {
    const BlockParams& bp = p.blocks[bi];
    BlockParams& gb = g.blocks[bi];
    const BlockCache& c = s.blocks[bi];

    // x_out = h + gelu(ln2(h) W1 + b1) W2 + b2
    Matrix dh_res = dx;
    gb.w2.noalias() += c.g.transpose() * dx;
    gb.b2 += dx.colwise().sum();
    Matrix dg = dx * bp.w2.transpose();
    const Matrix df1 = dg.array() * c.f1.unaryExpr([](double v) { return gelu_grad(v); }).array();
    gb.w1.noalias() += c.b.transpose() * df1;
    gb.b1 += df1.colwise().sum();
    const Matrix db = df1 * bp.w1.transpose();
    dh_res += layer_norm_backward(db, bp.ln2_g, c.ln2, gb.ln2_g, gb.ln2_b);

    // h = x_in + attention(ln1(x_in)) Wo + bo
    gb.wo.noalias() += c.o.transpose() * dh_res;
    gb.bo += dh_res.colwise().sum();
    const Matrix d_o = dh_res * bp.wo.transpose();
    Matrix dq(T, D), dk(T, D), dv(T, D);
    for (int h = 0; h < H; ++h) {
      const Matrix& P = c.probs[h];
      const Matrix d_oh = d_o.middleCols(h * dh, dh);
      const Matrix dP = d_oh * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = P.transpose() * d_oh;
      Matrix dS = P.array() * (dP.array().colwise() - (dP.array() * P.array()).rowwise().sum());
      dS *= scale;
      dq.middleCols(h * dh, dh) = dS * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = dS.transpose() * c.q.middleCols(h * dh, dh);
    }
    gb.wq.noalias() += c.a.transpose() * dq;
    gb.bq += dq.colwise().sum();
    gb.wk.noalias() += c.a.transpose() * dk;
    gb.bk += dk.colwise().sum();
    gb.wv.noalias() += c.a.transpose() * dv;
    gb.bv += dv.colwise().sum();
    const Matrix da = dq * bp.wq.transpose() + dk * bp.wk.transpose() + dv * bp.wv.transpose();
    dx = dh_res + layer_norm_backward(da, bp.ln1_g, c.ln1, gb.ln1_g, gb.ln1_b);
  }

  // Embedding.
  g.scalar_w.noalias() += s.slot_scalars.transpose() * dx;
  for (Eigen::Index t = 0; t < T; ++t) {
    g.pos.row(s.positions[t]) += dx.row(t);
    if (s.masked[t]) {
      g.mask_token += dx.row(t);
    } else {
      g.patch_w.noalias() += s.patches.row(t).transpose() * dx.row(t);
      g.patch_b += dx.row(t);
    }
  }
  return g;
}

void fill_normal(Matrix& m, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, sd);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
}

double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) throw DataError(std::string("non-finite ") + what);
  return v;
}

}  // namespace

void validate(const ModelConfig& cfg) {
  if (cfg.patch_size < 1 || cfg.embed_dim < 1 || cfg.n_blocks < 0 || cfg.n_heads < 1 || cfg.mlp_ratio < 1)
    throw ConfigError("model dimensions must be positive");
  if (cfg.embed_dim % cfg.n_heads != 0) throw ConfigError("embed_dim must be divisible by n_heads");
  if (cfg.grid_h < 1 || cfg.grid_w < 1 || cfg.grid_h % cfg.patch_size != 0 || cfg.grid_w % cfg.patch_size != 0)
    throw ConfigError("patch_size must divide the feature grid");
  if (!(cfg.mask_ratio >= 0.0 && cfg.mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in [0,1)");
  if (cfg.n_classes != kNumClasses) throw ConfigError("n_classes must be 4");
  if (cfg.m_modes < 1) throw ConfigError("m_modes must be >= 1");
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be positive");
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.patience < 1) throw ConfigError("patience must be positive");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) || !(cfg.adam_eps > 0.0))
    throw ConfigError("invalid optimizer constants");
  if (!(cfg.weights.cls >= 0.0) || !(cfg.weights.reg >= 0.0)) throw ConfigError("loss weights must be >= 0");
}

void Params::visit(const std::function<void(const std::string&, Matrix&)>& f) {
  f("patch_w", patch_w);
  f("patch_b", patch_b);
  f("scalar_w", scalar_w);
  f("pos", pos);
  f("mask_token", mask_token);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    const std::string pre = "block" + std::to_string(i) + ".";
    f(pre + "ln1_g", b.ln1_g);
    f(pre + "ln1_b", b.ln1_b);
    f(pre + "wq", b.wq);
    f(pre + "bq", b.bq);
    f(pre + "wk", b.wk);
    f(pre + "bk", b.bk);
    f(pre + "wv", b.wv);
    f(pre + "bv", b.bv);
    f(pre + "wo", b.wo);
    f(pre + "bo", b.bo);
    f(pre + "ln2_g", b.ln2_g);
    f(pre + "ln2_b", b.ln2_b);
    f(pre + "w1", b.w1);
    f(pre + "b1", b.b1);
    f(pre + "w2", b.w2);
    f(pre + "b2", b.b2);
  }
  f("lnf_g", lnf_g);
  f("lnf_b", lnf_b);
  f("cls_w", cls_w);
  f("cls_b", cls_b);
  f("reg_w", reg_w);
  f("reg_b", reg_b);
  f("rec_w", rec_w);
  f("rec_b", rec_b);
}

void Params::visit(const std::function<void(const std::string&, const Matrix&)>& f) const {
  const_cast<Params*>(this)->visit([&](const std::string& name, Matrix& m) { f(name, m); });
}

Params Params::zeros_like() const {
  Params z = *this;
  z.visit([](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

std::size_t Params::size() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

Model init_model(const ModelConfig& cfg) {
  validate(cfg);
  const int D = cfg.embed_dim, P = cfg.patch_dim(), F = cfg.hidden_dim(), C = cfg.n_classes;
  std::mt19937_64 rng(cfg.seed);
  auto weight = [&](int fan_in, int fan_out) {
    Matrix m(fan_in, fan_out);
    fill_normal(m, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
    return m;
  };
  auto embed = [&](int rows) {
    Matrix m(rows, D);
    fill_normal(m, kEmbedInitSd, rng);
    return m;
  };
  auto ones = [](int n) { return Matrix::Ones(1, n).eval(); };

  Model model;
  model.config = cfg;
  Params& p = model.params;
  p.patch_w = weight(P, D);
  p.patch_b = zeros(1, D);
  p.scalar_w = weight(kModeScalars, D);
  p.pos = embed(cfg.max_tokens());
  p.mask_token = embed(1);
  for (int b = 0; b < cfg.n_blocks; ++b) {
    BlockParams bp;
    bp.ln1_g = ones(D);
    bp.ln1_b = zeros(1, D);
    bp.wq = weight(D, D);
    bp.bq = zeros(1, D);
    bp.wk = weight(D, D);
    bp.bk = zeros(1, D);
    bp.wv = weight(D, D);
    bp.bv = zeros(1, D);
    bp.wo = weight(D, D);
    bp.bo = zeros(1, D);
    bp.ln2_g = ones(D);
    bp.ln2_b = zeros(1, D);
    bp.w1 = weight(D, F);
    bp.b1 = zeros(1, F);
    bp.w2 = weight(F, D);
    bp.b2 = zeros(1, D);
    p.blocks.push_back(std::move(bp));
  }
  p.lnf_g = ones(D);
  p.lnf_b = zeros(1, D);
  p.cls_w = weight(D, C);
  p.cls_b = zeros(1, C);
  p.reg_w = weight(D, 1);
  p.reg_b = zeros(1, 1);
  p.rec_w = weight(D, P);
  p.rec_b = zeros(1, P);
  return model;
}

void fit_input_norm(InputNorm& norm, std::span<const FeatureTensor> data) {
  std::array<double, kImageChannels> s{}, ss{};
  std::array<double, kModeScalars> t{}, tt{};
  double n_pix = 0.0, n_slot = 0.0;
  for (const auto& x : data) {
    const std::size_t plane = static_cast<std::size_t>(x.height) * x.width;
    for (int slot = 0; slot < x.m_modes; ++slot) {
      if (!x.validity_mask[slot]) continue;
      for (int ch = 0; ch < kImageChannels; ++ch) {
        const double* px = &x.mode_images[(static_cast<std::size_t>(slot) * kImageChannels + ch) * plane];
        for (std::size_t i = 0; i < plane; ++i) {
          s[ch] += px[i];
          ss[ch] += px[i] * px[i];
        }
      }
      for (int j = 0; j < kModeScalars; ++j) {
        t[j] += x.mode_scalars(slot, j);
        tt[j] += x.mode_scalars(slot, j) * x.mode_scalars(slot, j);
      }
      n_pix += static_cast<double>(plane);
      n_slot += 1.0;
    }
  }
  if (n_slot == 0.0) throw DataError("no valid mode slots to fit input normalisation");
  auto sd = [](double sum, double sq, double n) {
    const double mu = sum / n;
    const double var = std::max(sq / n - mu * mu, 0.0);
    return var > 1e-24 ? std::sqrt(var) : 1.0;
  };
  for (int ch = 0; ch < kImageChannels; ++ch) {
    norm.image_mean[ch] = s[ch] / n_pix;
    norm.image_sd[ch] = sd(s[ch], ss[ch], n_pix);
  }
  for (int j = 0; j < kModeScalars; ++j) {
    norm.scalar_mean[j] = t[j] / n_slot;
    norm.scalar_sd[j] = sd(t[j], tt[j], n_slot);
  }
  norm.inputs_fitted = true;
}

void fit_onset_norm(InputNorm& norm, std::span<const double> onset_weeks) {
  if (onset_weeks.empty()) throw DataError("no onset targets");
  const double n = static_cast<double>(onset_weeks.size());
  const double mu = std::accumulate(onset_weeks.begin(), onset_weeks.end(), 0.0) / n;
  double var = 0.0;
  for (double v : onset_weeks) var += (v - mu) * (v - mu);
  var /= n;
  norm.onset_mean = mu;
  norm.onset_sd = var > 1e-24 ? std::sqrt(var) : 1.0;
  norm.onset_fitted = true;
}

int PatchMask::count() const { return static_cast<int>(std::count(masked.begin(), masked.end(), true)); }

PatchMask sample_mask(const ModelConfig& cfg, const FeatureTensor& x, double ratio, std::mt19937_64& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in [0,1)");
  check_shape(cfg, x);
  const int per_slot = cfg.patches_per_slot();
  std::vector<int> valid;
  for (int slot = 0; slot < cfg.m_modes; ++slot)
    if (x.validity_mask[slot])
      for (int q = 0; q < per_slot; ++q) valid.push_back(slot * per_slot + q);
  const auto n_mask = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(valid.size()) - 1e-12));
  PatchMask m;
  m.masked.assign(static_cast<std::size_t>(cfg.max_tokens()), false);
  for (std::size_t i = 0; i < n_mask; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, valid.size() - 1);
    std::swap(valid[i], valid[pick(rng)]);
    m.masked[static_cast<std::size_t>(valid[i])] = true;
  }
  return m;
}

ForwardResult forward(const Model& model, const FeatureTensor& x, const PatchMask* mask) {
  return run_forward(model, x, mask).out;
}

Matrix masked_targets(const Model& model, const FeatureTensor& x, const PatchMask& mask) {
  check_shape(model.config, x);
  const int per_slot = model.config.patches_per_slot();
  std::vector<int> rows;
  for (int slot = 0; slot < model.config.m_modes; ++slot)
    if (x.validity_mask[slot])
      for (int q = 0; q < per_slot; ++q)
        if (mask.masked[static_cast<std::size_t>(slot * per_slot + q)]) rows.push_back(slot * per_slot + q);
  Matrix out(static_cast<Eigen::Index>(rows.size()), model.config.patch_dim());
  std::vector<double> buf(static_cast<std::size_t>(model.config.patch_dim()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    extract_patch(model, x, rows[i] / per_slot, rows[i] % per_slot, buf.data());
    for (int j = 0; j < model.config.patch_dim(); ++j) out(static_cast<Eigen::Index>(i), j) = buf[j];
  }
  return out;
}

Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

LossTerms loss(const ForwardResult& out, const Target& target, const LossWeights& w) {
  const Vector& z = out.class_logits;
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  LossTerms l;
  l.classification = lse - z(static_cast<int>(target.label));
  const double r = out.onset_pred_weeks - target.onset_weeks;
  l.regression = r * r;
  l.total = w.cls * l.classification + w.reg * l.regression;
  return l;
}

double masked_reconstruction_loss(const ForwardResult& out, const Matrix& targets) {
  if (out.reconstruction.size() == 0) return 0.0;
  if (targets.rows() != out.reconstruction.rows() || targets.cols() != out.reconstruction.cols())
    throw ConfigError("reconstruction targets do not match the masked patches");
  return (out.reconstruction - targets).squaredNorm() / static_cast<double>(targets.size());
}

BackwardResult backward(const Model& model, const FeatureTensor& x, const Target& target, const LossWeights& w) {
  const Pass s = run_forward(model, x, nullptr);
  BackwardResult r;
  r.loss = loss(s.out, target, w);
  Matrix dlogits = softmax(s.out.class_logits).transpose();
  dlogits(0, static_cast<int>(target.label)) -= 1.0;
  dlogits *= w.cls;
  const double draw = w.reg * 2.0 * (s.out.onset_pred_weeks - target.onset_weeks) * model.norm.onset_sd;
  r.grads = run_backward(model, s, dlogits, draw, zeros(0, model.config.patch_dim()));
  return r;
}

BackwardResult backward_masked(const Model& model, const FeatureTensor& x, const PatchMask& mask, const Matrix& targets) {
  const Pass s = run_forward(model, x, &mask);
  BackwardResult r;
  r.loss.total = masked_reconstruction_loss(s.out, targets);
  Matrix drec = zeros(s.out.reconstruction.rows(), s.out.reconstruction.cols());
  if (drec.size() > 0) drec = 2.0 * (s.out.reconstruction - targets) / static_cast<double>(targets.size());
  r.grads = run_backward(model, s, zeros(1, model.config.n_classes), 0.0, drec);
  return r;
}

Adam::Adam(const Params& like, const TrainConfig& cfg)
    : m_(like.zeros_like()),
      v_(like.zeros_like()),
      lr_(cfg.learning_rate),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps) {}

void Adam::step(Params& params, const Params& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::vector<Matrix*> ps, gs, ms, vs;
  params.visit([&](const std::string&, Matrix& m) { ps.push_back(&m); });
  const_cast<Params&>(grads).visit([&](const std::string&, Matrix& m) { gs.push_back(&m); });
  m_.visit([&](const std::string&, Matrix& m) { ms.push_back(&m); });
  v_.visit([&](const std::string&, Matrix& m) { vs.push_back(&m); });
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Matrix& m = *ms[i];
    Matrix& v = *vs[i];
    const Matrix& g = *gs[i];
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    *ps[i] -= (lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_)).matrix();
  }
}

namespace {

void accumulate(Params& acc, const Params& g, double scale) {
  std::vector<const Matrix*> src;
  g.visit([&](const std::string&, const Matrix& m) { src.push_back(&m); });
  std::size_t i = 0;
  acc.visit([&](const std::string&, Matrix& m) { m += scale * *src[i++]; });
}

struct ValStats {
  double loss = 0.0, accuracy = 0.0, rmse = 0.0;
};

ValStats validation_stats(const Model& model, std::span<const FeatureTensor> xs, std::span<const Target> ys,
                          const LossWeights& w) {
  ValStats st;
  if (xs.empty()) return st;
  double correct = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const ForwardResult out = forward(model, xs[i]);
    st.loss += loss(out, ys[i], w).total;
    const Prediction p = make_prediction(out.class_logits, out.onset_pred_weeks, 0.0);
    if (p.label == ys[i].label) correct += 1.0;
    sq += (out.onset_pred_weeks - ys[i].onset_weeks) * (out.onset_pred_weeks - ys[i].onset_weeks);
  }
  const double n = static_cast<double>(xs.size());
  st.loss /= n;
  st.accuracy = correct / n;
  st.rmse = std::sqrt(sq / n);
  return st;
}

}  // namespace

TrainResult train(Model model, std::span<const FeatureTensor> train_x, std::span<const Target> train_y,
                  std::span<const FeatureTensor> val_x, std::span<const Target> val_y, const TrainConfig& cfg) {
  validate(cfg);
  validate(model.config);
  if (train_x.empty()) throw DataError("empty training partition");
  if (val_x.empty()) throw DataError("empty validation partition");
  if (train_x.size() != train_y.size() || val_x.size() != val_y.size())
    throw ConfigError("features and targets differ in length");

  TrainResult result;
  if (cfg.epochs == 0) {
    result.model = std::move(model);
    return result;
  }
  if (!model.norm.inputs_fitted) fit_input_norm(model.norm, train_x);
  if (!model.norm.onset_fitted) {
    std::vector<double> onsets;
    for (const auto& t : train_y) onsets.push_back(t.onset_weeks);
    fit_onset_norm(model.norm, onsets);
  }

  Adam opt(model.params, cfg);
  std::vector<std::size_t> order(train_x.size());
  std::iota(order.begin(), order.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  result.model = model;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double train_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Params grad = model.params.zeros_like();
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const BackwardResult br = backward(model, train_x[order[i]], train_y[order[i]], cfg.weights);
        accumulate(grad, br.grads, inv);
        train_loss += br.loss.total;
      }
      opt.step(model.params, grad);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = finite_or_throw(train_loss / static_cast<double>(order.size()), "training loss");
    const ValStats vs = validation_stats(model, val_x, val_y, cfg.weights);
    rec.val_loss = finite_or_throw(vs.loss, "validation loss");
    rec.val_accuracy = vs.accuracy;
    rec.val_rmse = vs.rmse;
    result.history.push_back(rec);
    if (rec.val_loss < best) {
      best = rec.val_loss;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

PretrainResult pretrain_masked(Model model, std::span<const FeatureTensor> data, const TrainConfig& cfg) {
  validate(cfg);
  validate(model.config);
  if (data.empty()) throw DataError("empty pretraining set");
  PretrainResult result;
  if (cfg.epochs == 0) {
    result.model = std::move(model);
    return result;
  }
  if (!model.norm.inputs_fitted) fit_input_norm(model.norm, data);

  Adam opt(model.params, cfg);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Params grad = model.params.zeros_like();
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const FeatureTensor& x = data[order[i]];
        const PatchMask mask = sample_mask(model.config, x, model.config.mask_ratio, rng);
        const BackwardResult br = backward_masked(model, x, mask, masked_targets(model, x, mask));
        accumulate(grad, br.grads, inv);
        total += br.loss.total;
      }
      opt.step(model.params, grad);
    }
    result.history.push_back(finite_or_throw(total / static_cast<double>(order.size()), "pretraining loss"));
  }
  result.model = std::move(model);
  return result;
}

Prediction make_prediction(const Vector& logits, double onset_age_weeks, double acquisition_age_weeks) {
  if (logits.size() != kNumClasses) throw ConfigError("expected 4 class logits");
  Prediction p;
  int best = 0;
  for (int i = 1; i < kNumClasses; ++i)
    if (logits(i) > logits(best)) best = i;
  p.label = heart_state_from_index(best);
  const Vector prob = softmax(logits);
  for (int i = 0; i < kNumClasses; ++i) p.probabilities[i] = prob(i);
  p.onset_age_weeks = onset_age_weeks;
  p.time_to_onset_weeks = onset_age_weeks - acquisition_age_weeks;
  return p;
}

Prediction predict(const Model& model, const FeatureTensor& x, double acquisition_age_weeks) {
  const ForwardResult out = forward(model, x);
  return make_prediction(out.class_logits, out.onset_pred_weeks, acquisition_age_weeks);
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const ModelConfig& c = model.config;
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<NamedArray> arrays;
  model.params.visit([&](const std::string& name, const Matrix& m) {
    NamedArray a{name, {m.rows(), m.cols()}, {}};
    a.values.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) a.values.push_back(m(i, j));
    manifest.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}});
    arrays.push_back(std::move(a));
  });
  const InputNorm& n = model.norm;
  NamedArray norm{"input_norm", {14}, {}};
  for (double v : n.image_mean) norm.values.push_back(v);
  for (double v : n.image_sd) norm.values.push_back(v);
  for (double v : n.scalar_mean) norm.values.push_back(v);
  for (double v : n.scalar_sd) norm.values.push_back(v);
  norm.values.push_back(n.onset_mean);
  norm.values.push_back(n.onset_sd);
  norm.values.push_back(n.inputs_fitted ? 1.0 : 0.0);
  norm.values.push_back(n.onset_fitted ? 1.0 : 0.0);
  arrays.push_back(std::move(norm));

  nlohmann::json header = {{"config",
                            {{"patch_size", c.patch_size},
                             {"embed_dim", c.embed_dim},
                             {"n_blocks", c.n_blocks},
                             {"n_heads", c.n_heads},
                             {"mlp_ratio", c.mlp_ratio},
                             {"mask_ratio", c.mask_ratio},
                             {"n_classes", c.n_classes},
                             {"seed", c.seed},
                             {"m_modes", c.m_modes},
                             {"grid_h", c.grid_h},
                             {"grid_w", c.grid_w}}},
                           {"parameter_count", model.parameter_count()},
                           {"parameters", manifest}};
  write_container(path, kCheckpointFormat, header, arrays);
}

Model load_checkpoint(const std::filesystem::path& path) {
  const Container c = read_container(path, kCheckpointFormat);
  ModelConfig cfg;
  try {
    const auto& j = c.header.at("config");
    cfg.patch_size = j.at("patch_size").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.n_blocks = j.at("n_blocks").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.mlp_ratio = j.at("mlp_ratio").get<int>();
    cfg.mask_ratio = j.at("mask_ratio").get<double>();
    cfg.n_classes = j.at("n_classes").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.m_modes = j.at("m_modes").get<int>();
    cfg.grid_h = j.at("grid_h").get<int>();
    cfg.grid_w = j.at("grid_w").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }
  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  Model model = init_model(cfg);
  model.params.visit([&](const std::string& name, Matrix& m) {
    const NamedArray& a = c.array(name);
    if (a.shape.size() != 2 || a.shape[0] != m.rows() || a.shape[1] != m.cols())
      throw DataError(path.string() + ": parameter '" + name + "' has the wrong shape");
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = a.values[k++];
  });
  const NamedArray& norm = c.array("input_norm");
  if (norm.values.size() != 14) throw DataError(path.string() + ": bad input_norm array");
  std::size_t k = 0;
  InputNorm& n = model.norm;
  for (double& v : n.image_mean) v = norm.values[k++];
  for (double& v : n.image_sd) v = norm.values[k++];
  for (double& v : n.scalar_mean) v = norm.values[k++];
  for (double& v : n.scalar_sd) v = norm.values[k++];
  n.onset_mean = norm.values[k++];
  n.onset_sd = norm.values[k++];
  n.inputs_fitted = norm.values[k++] != 0.0;
  n.onset_fitted = norm.values[k++] != 0.0;
  return model;
}

}  // namespace modaldx
