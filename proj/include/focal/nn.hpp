// Minimal feed-forward engine: dense layers, LeakyReLU/PReLU/identity
// activations, inverted dropout, analytic backpropagation, and the split
// encoder (shared trunk diverging into target and residual heads).
//
// A network instance is single-writer; frozen instances may be evaluated from
// several threads at once.
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "focal/matrix.hpp"
#include "focal/rng.hpp"

namespace focal {

enum class Activation { Identity, LeakyRelu, PRelu };

inline constexpr double kLeakyReluSlope = 0.01;
inline constexpr double kPReluInitSlope = 0.25;

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 0;
  Activation activation = Activation::PRelu;
  double dropout_rate = 0.0;
  // When set, the final linear output is activated too (used by the trunk so
  // the heads consume features rather than logits).
  bool activate_output = false;
};

struct MlpCache {
  std::vector<DenseMatrix> inputs;   // input to each linear
  std::vector<DenseMatrix> preacts;  // pre-activation output where activated
  std::vector<DenseMatrix> masks;    // inverted-dropout masks where applied
};

class Mlp {
 public:
  struct LinearLayout {
    std::size_t w_offset;
    std::size_t b_offset;
    std::size_t in_dim;
    std::size_t out_dim;
  };

  Mlp(MlpSpec spec, Rng& init_rng) : spec_(std::move(spec)) {
    if (spec_.input_dim == 0 || spec_.output_dim == 0)
      throw std::invalid_argument("Mlp: dimensions must be >= 1");
    for (std::size_t h : spec_.hidden_dims)
      if (h == 0) throw std::invalid_argument("Mlp: dimensions must be >= 1");
    if (!(spec_.dropout_rate >= 0.0 && spec_.dropout_rate < 1.0))
      throw std::invalid_argument("Mlp: dropout_rate must be in [0, 1)");

    std::vector<std::size_t> dims;
    dims.push_back(spec_.input_dim);
    dims.insert(dims.end(), spec_.hidden_dims.begin(), spec_.hidden_dims.end());
    dims.push_back(spec_.output_dim);
    const std::size_t n_linear = dims.size() - 1;

    std::size_t offset = 0;
    for (std::size_t l = 0; l < n_linear; ++l) {
      LinearLayout lay{offset, offset + dims[l] * dims[l + 1], dims[l], dims[l + 1]};
      offset = lay.b_offset + lay.out_dim;
      linears_.push_back(lay);
      activated_.push_back(l + 1 < n_linear || spec_.activate_output);
    }
    // Dropout follows every activation except the last one, matching the
    // Linear -> activation -> Dropout classifier pattern.
    std::size_t last_act = n_linear;  // sentinel
    for (std::size_t l = 0; l < n_linear; ++l)
      if (activated_[l]) last_act = l;
    dropout_after_.assign(n_linear, false);
    for (std::size_t l = 0; l < n_linear; ++l)
      dropout_after_[l] = activated_[l] && l != last_act && spec_.dropout_rate > 0.0;

    if (spec_.activation == Activation::PRelu) {
      for (std::size_t l = 0; l < n_linear; ++l) {
        if (activated_[l]) {
          act_param_.push_back(offset);
          ++offset;
        } else {
          act_param_.push_back(0);
        }
      }
    }

    params_.assign(offset, 0.0);
    for (const LinearLayout& lay : linears_) {
      const double limit = std::sqrt(6.0 / static_cast<double>(lay.in_dim));
      for (std::size_t i = 0; i < lay.in_dim * lay.out_dim; ++i)
        params_[lay.w_offset + i] = init_rng.uniform(-limit, limit);
    }
    if (spec_.activation == Activation::PRelu) {
      for (std::size_t l = 0; l < n_linear; ++l)
        if (activated_[l]) params_[act_param_[l]] = kPReluInitSlope;
    }
  }

  const MlpSpec& spec() const { return spec_; }
  std::size_t input_dim() const { return spec_.input_dim; }
  std::size_t output_dim() const { return spec_.output_dim; }
  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<LinearLayout>& linears() const { return linears_; }

  DenseMatrix forward(const DenseMatrix& batch, MlpCache* cache = nullptr, bool train = false,
                      Rng* dropout_rng = nullptr) const {
    if (batch.cols != spec_.input_dim)
      throw std::invalid_argument("Mlp::forward: batch width does not match input_dim");
    const std::size_t n_linear = linears_.size();
    if (cache) {
      cache->inputs.assign(n_linear, {});
      cache->preacts.assign(n_linear, {});
      cache->masks.assign(n_linear, {});
    }

    DenseMatrix cur = batch;
    for (std::size_t l = 0; l < n_linear; ++l) {
      if (cache) cache->inputs[l] = cur;
      DenseMatrix z = linear_forward(cur, linears_[l]);
      if (activated_[l]) {
        if (cache) cache->preacts[l] = z;
        activate_in_place(z, slope(l));
      }
      if (train && dropout_after_[l]) {
        if (!dropout_rng)
          throw std::invalid_argument("Mlp::forward: dropout in train mode needs an RNG");
        DenseMatrix mask(z.rows, z.cols);
        const double keep = 1.0 - spec_.dropout_rate;
        for (double& m : mask.data) m = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
        for (std::size_t i = 0; i < z.data.size(); ++i) z.data[i] *= mask.data[i];
        if (cache) cache->masks[l] = std::move(mask);
      }
      cur = std::move(z);
    }
    return cur;
  }

  // Accumulates parameter gradients into grad_params (pass nullptr for frozen
  // networks) and returns the gradient with respect to the batch input.
  DenseMatrix backward(const MlpCache& cache, const DenseMatrix& grad_output,
                       std::vector<double>* grad_params) const {
    if (grad_params && grad_params->size() != params_.size())
      throw std::invalid_argument("Mlp::backward: gradient buffer size mismatch");
    DenseMatrix g = grad_output;
    for (std::size_t li = linears_.size(); li-- > 0;) {
      const LinearLayout& lay = linears_[li];
      if (g.cols != lay.out_dim) throw std::invalid_argument("Mlp::backward: shape mismatch");

      if (cache.masks[li].data.size() == g.data.size())
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= cache.masks[li].data[i];

      if (activated_[li]) {
        const DenseMatrix& z = cache.preacts[li];
        const double s = slope(li);
        if (spec_.activation == Activation::PRelu && grad_params) {
          double slope_grad = 0.0;
          for (std::size_t i = 0; i < g.data.size(); ++i)
            if (z.data[i] <= 0.0) slope_grad += g.data[i] * z.data[i];
          (*grad_params)[act_param_[li]] += slope_grad;
        }
        if (spec_.activation != Activation::Identity)
          for (std::size_t i = 0; i < g.data.size(); ++i)
            if (z.data[i] <= 0.0) g.data[i] *= s;
      }

      const DenseMatrix& x = cache.inputs[li];
      if (grad_params) {
        double* gw = grad_params->data() + lay.w_offset;
        double* gb = grad_params->data() + lay.b_offset;
        for (std::size_t i = 0; i < x.rows; ++i) {
          const double* xr = x.row(i);
          const double* gr = g.row(i);
          for (std::size_t k = 0; k < lay.in_dim; ++k) {
            const double a = xr[k];
            if (a == 0.0) continue;
            double* gwk = gw + k * lay.out_dim;
            for (std::size_t j = 0; j < lay.out_dim; ++j) gwk[j] += a * gr[j];
          }
          for (std::size_t j = 0; j < lay.out_dim; ++j) gb[j] += gr[j];
        }
      }

      DenseMatrix gi(x.rows, lay.in_dim);
      const double* w = params_.data() + lay.w_offset;
      for (std::size_t i = 0; i < x.rows; ++i) {
        const double* gr = g.row(i);
        double* gir = gi.row(i);
        for (std::size_t k = 0; k < lay.in_dim; ++k) {
          const double* wk = w + k * lay.out_dim;
          double acc = 0.0;
          for (std::size_t j = 0; j < lay.out_dim; ++j) acc += gr[j] * wk[j];
          gir[k] = acc;
        }
      }
      g = std::move(gi);
    }
    return g;
  }

 private:
  double slope(std::size_t linear_index) const {
    switch (spec_.activation) {
      case Activation::Identity:
        return 1.0;
      case Activation::LeakyRelu:
        return kLeakyReluSlope;
      case Activation::PRelu:
        return params_[act_param_[linear_index]];
    }
    return 1.0;
  }

  void activate_in_place(DenseMatrix& z, double s) const {
    if (spec_.activation == Activation::Identity) return;
    for (double& v : z.data)
      if (v <= 0.0) v *= s;
  }

  DenseMatrix linear_forward(const DenseMatrix& x, const LinearLayout& lay) const {
    DenseMatrix z(x.rows, lay.out_dim);
    const double* w = params_.data() + lay.w_offset;
    const double* b = params_.data() + lay.b_offset;
    for (std::size_t i = 0; i < x.rows; ++i) {
      double* zr = z.row(i);
      for (std::size_t j = 0; j < lay.out_dim; ++j) zr[j] = b[j];
      const double* xr = x.row(i);
      for (std::size_t k = 0; k < lay.in_dim; ++k) {
        const double a = xr[k];
        if (a == 0.0) continue;
        const double* wk = w + k * lay.out_dim;
        for (std::size_t j = 0; j < lay.out_dim; ++j) zr[j] += a * wk[j];
      }
    }
    return z;
  }

  MlpSpec spec_;
  std::vector<LinearLayout> linears_;
  std::vector<bool> activated_;
  std::vector<bool> dropout_after_;
  std::vector<std::size_t> act_param_;
  std::vector<double> params_;
};

// Shared trunk diverging into two parameter-disjoint heads. The target
// embedding is the shareable part; the residual absorbs sensitive content.
class SplitEncoder {
 public:
  SplitEncoder(MlpSpec trunk_spec, MlpSpec target_head_spec, MlpSpec residual_head_spec,
               Rng& init_rng)
      : trunk_(std::move(trunk_spec), init_rng),
        target_head_(std::move(target_head_spec), init_rng),
        residual_head_(std::move(residual_head_spec), init_rng) {
    check_dims();
  }

  // Assemble from prebuilt networks (checkpoint loading).
  SplitEncoder(Mlp trunk, Mlp target_head, Mlp residual_head)
      : trunk_(std::move(trunk)),
        target_head_(std::move(target_head)),
        residual_head_(std::move(residual_head)) {
    check_dims();
  }

  struct Cache {
    MlpCache trunk;
    MlpCache target;
    MlpCache residual;
  };

  Mlp& trunk() { return trunk_; }
  Mlp& target_head() { return target_head_; }
  Mlp& residual_head() { return residual_head_; }
  const Mlp& trunk() const { return trunk_; }
  const Mlp& target_head() const { return target_head_; }
  const Mlp& residual_head() const { return residual_head_; }
  std::size_t target_dim() const { return target_head_.output_dim(); }
  std::size_t residual_dim() const { return residual_head_.output_dim(); }

  // One shared trunk pass feeding both heads.
  void encode(const DenseMatrix& batch, DenseMatrix& z_tar, DenseMatrix& z_res,
              Cache* cache = nullptr, bool train = false, Rng* dropout_rng = nullptr) const {
    const DenseMatrix features =
        trunk_.forward(batch, cache ? &cache->trunk : nullptr, train, dropout_rng);
    z_tar = target_head_.forward(features, cache ? &cache->target : nullptr, train, dropout_rng);
    z_res = residual_head_.forward(features, cache ? &cache->residual : nullptr, train, dropout_rng);
  }

  // Either head gradient may be empty (treated as zero). Returns the gradient
  // with respect to the input batch.
  DenseMatrix encode_backward(const Cache& cache, const DenseMatrix& grad_z_tar,
                              const DenseMatrix& grad_z_res, std::vector<double>* grad_trunk,
                              std::vector<double>* grad_target_head,
                              std::vector<double>* grad_residual_head) const {
    DenseMatrix grad_features;
    if (grad_z_tar.rows > 0) {
      grad_features = target_head_.backward(cache.target, grad_z_tar, grad_target_head);
    }
    if (grad_z_res.rows > 0) {
      DenseMatrix g = residual_head_.backward(cache.residual, grad_z_res, grad_residual_head);
      if (grad_features.rows == 0) {
        grad_features = std::move(g);
      } else {
        for (std::size_t i = 0; i < g.data.size(); ++i) grad_features.data[i] += g.data[i];
      }
    }
    if (grad_features.rows == 0)
      throw std::invalid_argument("SplitEncoder::encode_backward: both gradients empty");
    return trunk_.backward(cache.trunk, grad_features, grad_trunk);
  }

 private:
  void check_dims() const {
    if (target_head_.input_dim() != trunk_.output_dim() ||
        residual_head_.input_dim() != trunk_.output_dim())
      throw std::invalid_argument("SplitEncoder: head input dims must match trunk output");
  }

  Mlp trunk_;
  Mlp target_head_;
  Mlp residual_head_;
};

}  // namespace focal
