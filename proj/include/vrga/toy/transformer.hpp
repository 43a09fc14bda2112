#pragma once

// Small pre-LayerNorm decoder-only transformer with hand-written backprop.
//
// Text positions embed a token id; image positions embed a fixed feature
// vector through a learned linear projection. Every position adds a learned
// position embedding. Each block is causal multi-head attention followed by
// a GELU MLP, both residual. The final position (the question-end token)
// feeds a LayerNorm and a linear readout over the answer vocabulary.
//
// Attention rows can be rewritten between the softmax and the value product
// through an Intervention compiled from a ReweightPlan or MaskPlan. It
// rewrites the rows of planned heads for every query position outside the
// image (the question and answer positions); image positions attending to
// earlier image positions are left alone.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "vrga/error.hpp"
#include "vrga/layout.hpp"
#include "vrga/steer.hpp"
#include "vrga/toy/config.hpp"
#include "vrga/toy/task.hpp"

namespace vrga::toy {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

// Flat parameter vector layout; names are stable and used by checkpoints.
class ParamLayout {
 public:
  explicit ParamLayout(const ToyConfig& c) {
    const auto d = c.d_model;
    add("tok_emb", c.text_vocab(), d);
    add("vis_proj", c.feature_dim(), d);
    add("vis_bias", 1, d);
    add("pos_emb", c.sequence_length(), d);
    for (std::size_t l = 0; l < c.layers; ++l) {
      const auto p = "layer" + std::to_string(l) + ".";
      add(p + "ln1_g", 1, d);
      add(p + "ln1_b", 1, d);
      add(p + "wq", d, d);
      add(p + "wk", d, d);
      add(p + "wv", d, d);
      add(p + "wo", d, d);
      add(p + "ln2_g", 1, d);
      add(p + "ln2_b", 1, d);
      add(p + "w1", d, c.d_ff);
      add(p + "b1", 1, c.d_ff);
      add(p + "w2", c.d_ff, d);
      add(p + "b2", 1, d);
    }
    add("lnf_g", 1, d);
    add("lnf_b", 1, d);
    add("unembed", d, c.colors);
    add("unembed_b", 1, c.colors);
  }

  enum Field { kLn1G, kLn1B, kWq, kWk, kWv, kWo, kLn2G, kLn2B, kW1, kB1, kW2, kB2, kFieldCount };
  enum Global { kTokEmb, kVisProj, kVisBias, kPosEmb, kLnfG, kLnfB, kUnembed, kUnembedB };

  const ParamBlock& layer_block(std::size_t layer, Field f) const {
    return blocks_[4 + layer * kFieldCount + static_cast<std::size_t>(f)];
  }
  const ParamBlock& global_block(Global g) const {
    if (g <= kPosEmb) return blocks_[static_cast<std::size_t>(g)];
    return blocks_[blocks_.size() - 4 + static_cast<std::size_t>(g - kLnfG)];
  }

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t total() const { return total_; }
  const ParamBlock& block(std::size_t i) const { return blocks_[i]; }

  const ParamBlock& find(const std::string& name) const {
    for (const auto& b : blocks_) {
      if (b.name == name) return b;
    }
    throw ValidationError("unknown parameter block '" + name + "'");
  }

 private:
  void add(std::string name, std::size_t rows, std::size_t cols) {
    blocks_.push_back({std::move(name), total_, rows, cols});
    total_ += rows * cols;
  }
  std::vector<ParamBlock> blocks_;
  std::size_t total_ = 0;
};

// Attention-row rewrites keyed by (layer, head).
class Intervention {
 public:
  using RowOp = std::variant<RowReweighter, RowMasker>;

  Intervention() = default;

  Intervention(const Plan& plan, const TokenLayout& layout, std::size_t layers, std::size_t heads)
      : layout_(layout), heads_(heads), ops_(layers * heads) {
    validate_plan(plan, layers, heads, layout);
    const auto m = layout.total_tokens();
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          for (const auto& h : p.heads) {
            if constexpr (std::is_same_v<P, ReweightPlan>) {
              ops_[h.layer * heads + h.head] = RowOp(RowReweighter(m, p.tokens, p.gamma, p.renormalize));
            } else {
              ops_[h.layer * heads + h.head] = RowOp(RowMasker(m, p.spans, p.renormalize));
            }
          }
        },
        plan);
  }

  bool empty() const { return ops_.empty(); }

  template <class S>
  void apply(std::size_t layer, std::size_t head, Mat<S>& probs) const {
    if (ops_.empty()) return;
    const auto& op = ops_[layer * heads_ + head];
    if (!op) return;
    const auto t = static_cast<std::size_t>(probs.cols());
    for (std::size_t r = 0; r < static_cast<std::size_t>(probs.rows()); ++r) {
      if (layout_.is_visual(r)) continue;
      std::span<S> row(probs.data() + r * t, t);
      std::visit([&](const auto& o) { o.apply(row); }, *op);
    }
  }

 private:
  TokenLayout layout_;
  std::size_t heads_ = 0;
  std::vector<std::optional<RowOp>> ops_;
};

template <class S>
struct LayerCache {
  Mat<S> x_in, xhat1, a, q, k, v, o, x_mid, xhat2, b, u, g;
  std::vector<S> rstd1, rstd2;
  std::vector<Mat<S>> probs;  // per head, [T x T], after any intervention
};

template <class S>
struct ForwardCache {
  std::vector<LayerCache<S>> layers;
  RowVec<S> xhat_f, h_f;
  S rstd_f{};
  RowVec<S> probs_out;  // softmax over answers
};

template <class S>
struct ForwardOutput {
  std::vector<S> logits;
  std::vector<S> qt_rows;  // [L][H][T]: question-end attention rows
};

namespace detail {

template <class S>
S gelu(S u) {
  const S c = std::sqrt(S(2) / S(3.14159265358979323846264338327950288L));
  return S(0.5) * u * (S(1) + std::tanh(c * (u + S(0.044715) * u * u * u)));
}

template <class S>
S gelu_grad(S u) {
  const S c = std::sqrt(S(2) / S(3.14159265358979323846264338327950288L));
  const S t = std::tanh(c * (u + S(0.044715) * u * u * u));
  return S(0.5) * (S(1) + t) + S(0.5) * u * (S(1) - t * t) * c * (S(1) + S(3) * S(0.044715) * u * u);
}

inline constexpr double kLnEps = 1e-5;

// Row-wise LayerNorm; returns normalized rows and per-row 1/std.
template <class S, class In>
void layer_norm(const In& x, Mat<S>& xhat, std::vector<S>& rstd) {
  const auto rows = x.rows();
  const auto d = x.cols();
  xhat.resize(rows, d);
  rstd.resize(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mean = x.row(r).mean();
    const S var = (x.row(r).array() - mean).square().mean();
    const S rs = S(1) / std::sqrt(var + S(kLnEps));
    rstd[static_cast<std::size_t>(r)] = rs;
    xhat.row(r) = (x.row(r).array() - mean) * rs;
  }
}

template <class S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const std::vector<S>& rstd,
                           Eigen::Map<RowVec<S>> gain, Eigen::Map<RowVec<S>> dgain,
                           Eigen::Map<RowVec<S>> dbias) {
  const auto rows = dy.rows();
  const S d = static_cast<S>(dy.cols());
  Mat<S> dx(rows, dy.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    dgain += dy.row(r).cwiseProduct(xhat.row(r));
    dbias += dy.row(r);
    const RowVec<S> dxhat = dy.row(r).cwiseProduct(gain);
    const S m1 = dxhat.sum() / d;
    const S m2 = dxhat.cwiseProduct(xhat.row(r)).sum() / d;
    dx.row(r) = rstd[static_cast<std::size_t>(r)] * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
  }
  return dx;
}

}  // namespace detail

template <class S>
class Transformer {
 public:
  using Matrix = Mat<S>;
  using Map = Eigen::Map<Matrix>;
  using ConstMap = Eigen::Map<const Matrix>;

  explicit Transformer(const ToyConfig& cfg) : cfg_(cfg), layout_(cfg), params_(layout_.total(), S(0)) {
    cfg_.validate();
  }

  const ToyConfig& config() const { return cfg_; }
  const ParamLayout& param_layout() const { return layout_; }
  std::vector<S>& params() { return params_; }
  const std::vector<S>& params() const { return params_; }

  // Gaussian init; LayerNorm gains start at one, biases at zero. Token and
  // feature embeddings have unit scale, position embeddings 0.1. Output
  // projections of each residual branch are scaled by 1/sqrt(2L).
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.layers));
    for (const auto& b : layout_.blocks()) {
      const auto& n = b.name;
      auto ends_with = [&](const char* suf) {
        const std::string s(suf);
        return n.size() >= s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0;
      };
      double std_dev = 0.0;
      double fill = 0.0;
      if (ends_with("_g")) {
        fill = 1.0;
      } else if (ends_with("_b") || ends_with("bias") || ends_with("b1") || ends_with("b2")) {
        fill = 0.0;
      } else if (n == "tok_emb" || n == "vis_proj") {
        std_dev = 1.0;
      } else if (n == "pos_emb") {
        std_dev = 0.1;
      } else {
        std_dev = 1.0 / std::sqrt(static_cast<double>(b.rows));
        if (ends_with("wo") || ends_with("w2")) std_dev *= resid;
      }
      for (std::size_t i = 0; i < b.size(); ++i) {
        params_[b.offset + i] = static_cast<S>(std_dev > 0.0 ? std_dev * normal(rng) : fill);
      }
    }
  }

  using Field = ParamLayout::Field;
  using Global = ParamLayout::Global;

  ConstMap view(const std::vector<S>& p, const ParamBlock& b) const {
    return ConstMap(p.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
  }
  ConstMap view(const std::vector<S>& p, std::size_t layer, Field f) const {
    return view(p, layout_.layer_block(layer, f));
  }
  ConstMap view(const std::vector<S>& p, Global g) const { return view(p, layout_.global_block(g)); }

  // Forward pass for one sample. When `cache` is non-null, activations for
  // backward() are stored.
  ForwardOutput<S> forward(const ToySample& sample, const Intervention* hook = nullptr,
                           ForwardCache<S>* cache = nullptr) const {
    const auto T = static_cast<Eigen::Index>(cfg_.sequence_length());
    const auto d = static_cast<Eigen::Index>(cfg_.d_model);
    const auto H = cfg_.heads;
    const auto dh = static_cast<Eigen::Index>(cfg_.head_dim());
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    const auto& p = params_;

    Matrix x = embed(sample);
    ForwardOutput<S> out;
    out.qt_rows.assign(cfg_.layers * H * static_cast<std::size_t>(T), S(0));
    if (cache) cache->layers.assign(cfg_.layers, {});

    LayerCache<S> lc;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      lc.x_in = x;
      detail::layer_norm<S>(x, lc.xhat1, lc.rstd1);
      lc.a = (lc.xhat1.array().rowwise() * view(p, l, Field::kLn1G).row(0).array()).matrix();
      lc.a.rowwise() += view(p, l, Field::kLn1B).row(0);
      lc.q.noalias() = lc.a * view(p, l, Field::kWq);
      lc.k.noalias() = lc.a * view(p, l, Field::kWk);
      lc.v.noalias() = lc.a * view(p, l, Field::kWv);
      lc.o.resize(T, d);
      lc.probs.resize(H);
      for (std::size_t h = 0; h < H; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h) * dh;
        Matrix s = (lc.q.middleCols(c0, dh) * lc.k.middleCols(c0, dh).transpose()) * scale;
        Matrix& pr = lc.probs[h];
        pr.setZero(T, T);
        for (Eigen::Index r = 0; r < T; ++r) {
          const S mx = s.row(r).head(r + 1).maxCoeff();
          S sum = S(0);
          for (Eigen::Index c = 0; c <= r; ++c) {
            const S e = std::exp(s(r, c) - mx);
            pr(r, c) = e;
            sum += e;
          }
          pr.row(r).head(r + 1) /= sum;
        }
        if (hook) hook->apply(l, h, pr);
        const auto qe = static_cast<Eigen::Index>(sample.tokens.size() - 1);
        for (Eigen::Index c = 0; c < T; ++c) {
          out.qt_rows[(l * H + h) * static_cast<std::size_t>(T) + static_cast<std::size_t>(c)] = pr(qe, c);
        }
        lc.o.middleCols(c0, dh).noalias() = pr * lc.v.middleCols(c0, dh);
      }
      x.noalias() += lc.o * view(p, l, Field::kWo);
      lc.x_mid = x;
      detail::layer_norm<S>(x, lc.xhat2, lc.rstd2);
      lc.b = (lc.xhat2.array().rowwise() * view(p, l, Field::kLn2G).row(0).array()).matrix();
      lc.b.rowwise() += view(p, l, Field::kLn2B).row(0);
      lc.u.noalias() = lc.b * view(p, l, Field::kW1);
      lc.u.rowwise() += view(p, l, Field::kB1).row(0);
      lc.g = lc.u.unaryExpr([](S v) { return detail::gelu(v); });
      x.noalias() += lc.g * view(p, l, Field::kW2);
      x.rowwise() += view(p, l, Field::kB2).row(0);
      if (cache) cache->layers[l] = lc;
    }

    const RowVec<S> last = x.row(T - 1);
    const S mean = last.mean();
    const S var = (last.array() - mean).square().mean();
    const S rs = S(1) / std::sqrt(var + S(detail::kLnEps));
    const RowVec<S> xhat = (last.array() - mean) * rs;
    const RowVec<S> hf = xhat.cwiseProduct(view(p, Global::kLnfG).row(0)) + view(p, Global::kLnfB).row(0);
    const RowVec<S> logits = hf * view(p, Global::kUnembed) + view(p, Global::kUnembedB).row(0);
    out.logits.assign(logits.data(), logits.data() + logits.size());
    if (cache) {
      cache->xhat_f = xhat;
      cache->h_f = hf;
      cache->rstd_f = rs;
      const S mx = logits.maxCoeff();
      RowVec<S> e = (logits.array() - mx).exp();
      cache->probs_out = e / e.sum();
    }
    return out;
  }

  // Cross-entropy of the answer at the question-end position.
  static S loss(const std::vector<S>& logits, int answer) {
    S mx = logits[0];
    for (auto v : logits) mx = std::max(mx, v);
    S sum = S(0);
    for (auto v : logits) sum += std::exp(v - mx);
    return std::log(sum) + mx - logits[static_cast<std::size_t>(answer)];
  }

  // Adds d(loss)/d(params) * weight into `grad` for a sample whose forward
  // pass (without intervention) filled `cache`.
  void backward(const ToySample& sample, const ForwardCache<S>& cache, int answer, S weight,
                std::vector<S>& grad) const {
    const auto T = static_cast<Eigen::Index>(cfg_.sequence_length());
    const auto d = static_cast<Eigen::Index>(cfg_.d_model);
    const auto H = cfg_.heads;
    const auto dh = static_cast<Eigen::Index>(cfg_.head_dim());
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    const auto& p = params_;
    auto gmap = [&](const ParamBlock& b) {
      return Map(grad.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
    };
    auto grow = [&](const ParamBlock& b) {
      return Eigen::Map<RowVec<S>>(grad.data() + b.offset, static_cast<Eigen::Index>(b.size()));
    };
    auto prow = [&](const ParamBlock& b) {
      return Eigen::Map<RowVec<S>>(const_cast<S*>(p.data()) + b.offset, static_cast<Eigen::Index>(b.size()));
    };

    RowVec<S> dlogits = cache.probs_out;
    dlogits(answer) -= S(1);
    dlogits *= weight;
    gmap(layout_.global_block(Global::kUnembed)).noalias() += cache.h_f.transpose() * dlogits;
    grow(layout_.global_block(Global::kUnembedB)) += dlogits;
    const RowVec<S> dhf = dlogits * view(p, Global::kUnembed).transpose();

    Matrix dx = Matrix::Zero(T, d);
    {
      grow(layout_.global_block(Global::kLnfG)) += dhf.cwiseProduct(cache.xhat_f);
      grow(layout_.global_block(Global::kLnfB)) += dhf;
      const RowVec<S> dxhat = dhf.cwiseProduct(view(p, Global::kLnfG).row(0));
      const S dd = static_cast<S>(d);
      const S m1 = dxhat.sum() / dd;
      const S m2 = dxhat.cwiseProduct(cache.xhat_f).sum() / dd;
      dx.row(T - 1) = cache.rstd_f * (dxhat.array() - m1 - cache.xhat_f.array() * m2).matrix();
    }

    for (std::size_t li = cfg_.layers; li-- > 0;) {
      const auto& lc = cache.layers[li];
      const std::size_t l = li;
      // MLP branch
      gmap(layout_.layer_block(l, Field::kW2)).noalias() += lc.g.transpose() * dx;
      grow(layout_.layer_block(l, Field::kB2)) += dx.colwise().sum();
      Matrix du = dx * view(p, l, Field::kW2).transpose();
      du.array() *= lc.u.unaryExpr([](S v) { return detail::gelu_grad(v); }).array();
      gmap(layout_.layer_block(l, Field::kW1)).noalias() += lc.b.transpose() * du;
      grow(layout_.layer_block(l, Field::kB1)) += du.colwise().sum();
      const Matrix db = du * view(p, l, Field::kW1).transpose();
      dx += detail::layer_norm_backward<S>(db, lc.xhat2, lc.rstd2, prow(layout_.layer_block(l, Field::kLn2G)), grow(layout_.layer_block(l, Field::kLn2G)),
                                           grow(layout_.layer_block(l, Field::kLn2B)));
      // attention branch
      gmap(layout_.layer_block(l, Field::kWo)).noalias() += lc.o.transpose() * dx;
      const Matrix d_o = dx * view(p, l, Field::kWo).transpose();
      Matrix dq(T, d), dk(T, d), dv(T, d);
      for (std::size_t h = 0; h < H; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h) * dh;
        const Matrix& pr = lc.probs[h];
        const Matrix dp = d_o.middleCols(c0, dh) * lc.v.middleCols(c0, dh).transpose();
        dv.middleCols(c0, dh).noalias() = pr.transpose() * d_o.middleCols(c0, dh);
        Matrix ds = pr.cwiseProduct(dp);
        const Eigen::Matrix<S, Eigen::Dynamic, 1> rowdot = ds.rowwise().sum();
        ds -= (pr.array().colwise() * rowdot.array()).matrix();
        ds *= scale;
        dq.middleCols(c0, dh).noalias() = ds * lc.k.middleCols(c0, dh);
        dk.middleCols(c0, dh).noalias() = ds.transpose() * lc.q.middleCols(c0, dh);
      }
      gmap(layout_.layer_block(l, Field::kWq)).noalias() += lc.a.transpose() * dq;
      gmap(layout_.layer_block(l, Field::kWk)).noalias() += lc.a.transpose() * dk;
      gmap(layout_.layer_block(l, Field::kWv)).noalias() += lc.a.transpose() * dv;
      Matrix da = dq * view(p, l, Field::kWq).transpose();
      da.noalias() += dk * view(p, l, Field::kWk).transpose();
      da.noalias() += dv * view(p, l, Field::kWv).transpose();
      dx += detail::layer_norm_backward<S>(da, lc.xhat1, lc.rstd1, prow(layout_.layer_block(l, Field::kLn1G)), grow(layout_.layer_block(l, Field::kLn1G)),
                                           grow(layout_.layer_block(l, Field::kLn1B)));
    }

    // embeddings
    auto dpos = gmap(layout_.global_block(Global::kPosEmb));
    auto dtok = gmap(layout_.global_block(Global::kTokEmb));
    auto dproj = gmap(layout_.global_block(Global::kVisProj));
    auto dvb = grow(layout_.global_block(Global::kVisBias));
    Eigen::Index vis = 0;
    for (Eigen::Index t = 0; t < T; ++t) {
      dpos.row(t) += dx.row(t);
      const int tok = sample.tokens[static_cast<std::size_t>(t)];
      if (tok == kVisualSlot) {
        dproj.noalias() += sample.features.row(vis).transpose().template cast<S>() * dx.row(t);
        dvb += dx.row(t);
        ++vis;
      } else {
        dtok.row(tok) += dx.row(t);
      }
    }
  }

 private:
  Matrix embed(const ToySample& sample) const {
    const auto T = static_cast<Eigen::Index>(cfg_.sequence_length());
    if (sample.tokens.size() != static_cast<std::size_t>(T)) {
      throw ValidationError("toy: sample length does not match the model");
    }
    if (sample.features.cols() != static_cast<Eigen::Index>(cfg_.feature_dim())) {
      throw ValidationError("toy: feature dimension does not match the model");
    }
    const auto& p = params_;
    Matrix x = view(p, Global::kPosEmb);
    const auto tok = view(p, Global::kTokEmb);
    const auto proj = view(p, Global::kVisProj);
    const auto vb = view(p, Global::kVisBias);
    Eigen::Index vis = 0;
    for (Eigen::Index t = 0; t < T; ++t) {
      const int id = sample.tokens[static_cast<std::size_t>(t)];
      if (id == kVisualSlot) {
        x.row(t) += sample.features.row(vis).template cast<S>() * proj + vb.row(0);
        ++vis;
      } else {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg_.text_vocab()) throw ValidationError("toy: token id out of range");
        x.row(t) += tok.row(id);
      }
    }
    return x;
  }

  ToyConfig cfg_;
  ParamLayout layout_;
  std::vector<S> params_;
};

using Model = Transformer<double>;

}  // namespace vrga::toy
