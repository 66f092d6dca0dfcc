#pragma once

// Loop-level reference implementations for the network pieces.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mcswin/model.hpp"
#include "mcswin/train.hpp"

namespace oracle {

/// Dense multi-head self-attention over every token of one window (n tokens,
/// coordinates z-major inside `window`), with the learned relative position
/// bias looked up by offset. Returns (n, c) in double.
inline std::vector<double> dense_attention(const std::vector<double>& x, std::int64_t n, std::int64_t c,
                                           mcswin::WindowAttentionImpl& attn,
                                           const std::array<std::int64_t, 3>& window) {
  auto wqkv = attn.qkv->weight.to(torch::kDouble).contiguous();
  auto bqkv = attn.qkv->bias.to(torch::kDouble).contiguous();
  auto wp = attn.proj->weight.to(torch::kDouble).contiguous();
  auto bp = attn.proj->bias.to(torch::kDouble).contiguous();
  auto table = attn.relative_position_bias_table.to(torch::kDouble).contiguous();
  const double* Wqkv = wqkv.data_ptr<double>();
  const double* Bqkv = bqkv.data_ptr<double>();
  const double* Wp = wp.data_ptr<double>();
  const double* Bp = bp.data_ptr<double>();
  const double* T = table.data_ptr<double>();
  const std::int64_t heads = attn.heads, hd = c / heads;
  const auto& mw = attn.max_window;

  // qkv[t][i][f] for t in {q, k, v}
  std::vector<double> qkv(static_cast<std::size_t>(3 * n * c));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t f = 0; f < 3 * c; ++f) {
      double s = Bqkv[f];
      for (std::int64_t k = 0; k < c; ++k) s += Wqkv[f * c + k] * x[static_cast<std::size_t>(i * c + k)];
      qkv[static_cast<std::size_t>((f / c) * n * c + i * c + f % c)] = s;
    }
  auto at = [&](int t, std::int64_t i, std::int64_t f) { return qkv[static_cast<std::size_t>(t * n * c + i * c + f)]; };
  auto coord = [&](std::int64_t i) {
    return std::array<std::int64_t, 3>{i / (window[1] * window[2]), (i / window[2]) % window[1], i % window[2]};
  };

  std::vector<double> heads_out(static_cast<std::size_t>(n * c), 0.0);
  for (std::int64_t h = 0; h < heads; ++h)
    for (std::int64_t i = 0; i < n; ++i) {
      std::vector<double> score(static_cast<std::size_t>(n));
      const auto ci = coord(i);
      for (std::int64_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::int64_t d = 0; d < hd; ++d) s += at(0, i, h * hd + d) * at(1, j, h * hd + d);
        s /= std::sqrt(double(hd));
        const auto cj = coord(j);
        const std::int64_t idx = ((ci[0] - cj[0] + mw[0] - 1) * (2 * mw[1] - 1) + (ci[1] - cj[1] + mw[1] - 1)) *
                                     (2 * mw[2] - 1) +
                                 (ci[2] - cj[2] + mw[2] - 1);
        score[static_cast<std::size_t>(j)] = s + T[idx * heads + h];
      }
      const double mx = *std::max_element(score.begin(), score.end());
      double z = 0;
      for (auto& s : score) z += (s = std::exp(s - mx));
      for (std::int64_t d = 0; d < hd; ++d) {
        double acc = 0;
        for (std::int64_t j = 0; j < n; ++j) acc += score[static_cast<std::size_t>(j)] / z * at(2, j, h * hd + d);
        heads_out[static_cast<std::size_t>(i * c + h * hd + d)] = acc;
      }
    }

  std::vector<double> out(static_cast<std::size_t>(n * c));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t f = 0; f < c; ++f) {
      double s = Bp[f];
      for (std::int64_t k = 0; k < c; ++k) s += Wp[f * c + k] * heads_out[static_cast<std::size_t>(i * c + k)];
      out[static_cast<std::size_t>(i * c + f)] = s;
    }
  return out;
}

/// Whether SW-MSA may let token i attend to token j, both given by their
/// positions in the rolled (shifted) frame: allowed only when both are real
/// voxels and rolling back moves them by the same offset, i.e. they were
/// contiguous before the shift.
inline bool shifted_pair_allowed(const std::array<std::int64_t, 3>& pi, const std::array<std::int64_t, 3>& pj,
                                 const std::array<std::int64_t, 3>& grid, const std::array<std::int64_t, 3>& padded,
                                 const std::array<std::int64_t, 3>& shift) {
  for (int a = 0; a < 3; ++a) {
    const auto oi = (pi[a] + shift[a]) % padded[a];
    const auto oj = (pj[a] + shift[a]) % padded[a];
    if (oi >= grid[a] || oj >= grid[a]) return false;
    if (oi - oj != pi[a] - pj[a]) return false;
  }
  return true;
}

struct ShiftLeak {
  float worst_blocked = 0.0f;     // largest softmax weight on a forbidden pair
  double worst_mass_error = 0.0;  // |1 - weight on allowed keys| over real query rows
  int rows = 0;
};

/// Runs one SW-MSA block on random tokens and audits every softmax row
/// against shifted_pair_allowed.
inline ShiftLeak shifted_window_leak(const std::array<std::int64_t, 3>& grid, const std::array<int, 3>& window,
                                     std::uint64_t seed) {
  torch::manual_seed(seed);
  mcswin::SwinBlock block(6, 2, window, 2.0);
  auto x = torch::randn({1, grid[0], grid[1], grid[2], 6});
  torch::Tensor probs;
  block(x, mcswin::AttentionMode::ShiftedWindow, mcswin::DropoutContext{}, &probs);
  const auto plan = mcswin::plan_windows(grid, window);
  const auto& w = plan.window;
  std::array<std::int64_t, 3> padded{}, per{};
  for (int a = 0; a < 3; ++a) {
    padded[a] = (grid[a] + w[a] - 1) / w[a] * w[a];
    per[a] = padded[a] / w[a];
  }
  auto P = probs.contiguous();
  auto acc = P.accessor<float, 4>();
  const auto n = w[0] * w[1] * w[2];
  ShiftLeak r;
  for (std::int64_t win = 0; win < P.size(0); ++win) {
    const std::array<std::int64_t, 3> o{win / (per[1] * per[2]) * w[0], (win / per[2]) % per[1] * w[1],
                                        win % per[2] * w[2]};
    auto pos = [&](std::int64_t t) {
      return std::array<std::int64_t, 3>{o[0] + t / (w[1] * w[2]), o[1] + (t / w[2]) % w[1], o[2] + t % w[2]};
    };
    for (std::int64_t h = 0; h < P.size(1); ++h)
      for (std::int64_t i = 0; i < n; ++i) {
        if (!shifted_pair_allowed(pos(i), pos(i), grid, padded, plan.shift)) continue;
        double mass = 0;
        for (std::int64_t j = 0; j < n; ++j) {
          if (shifted_pair_allowed(pos(i), pos(j), grid, padded, plan.shift))
            mass += acc[win][h][i][j];
          else
            r.worst_blocked = std::max(r.worst_blocked, acc[win][h][i][j]);
        }
        r.worst_mass_error = std::max(r.worst_mass_error, std::abs(1.0 - mass));
        ++r.rows;
      }
  }
  return r;
}

/// Worst relative deviation of WindowAttention on one whole-grid window from
/// dense_attention, with randomised weights and bias table.
inline double dense_attention_error(const std::array<std::int64_t, 3>& window, std::int64_t channels,
                                    std::int64_t heads, std::uint64_t seed) {
  torch::manual_seed(seed);
  mcswin::WindowAttention attn(channels, heads,
                               std::array<int, 3>{int(window[0]), int(window[1]), int(window[2])});
  {
    torch::NoGradGuard ng;
    attn->relative_position_bias_table.normal_(0.0, 0.5);
    attn->qkv->weight.normal_(0.0, 0.3);
    attn->qkv->bias.normal_(0.0, 0.1);
  }
  const auto n = window[0] * window[1] * window[2];
  auto x = torch::randn({1, n, channels});
  torch::NoGradGuard ng;
  auto out = attn(x, window, torch::Tensor()).to(torch::kDouble).contiguous();
  auto xd = x.to(torch::kDouble).contiguous();
  const auto ref = dense_attention(std::vector<double>(xd.data_ptr<double>(), xd.data_ptr<double>() + n * channels), n,
                                   channels, *attn, window);
  double worst = 0;
  for (std::int64_t i = 0; i < n * channels; ++i) {
    const double a = out.data_ptr<double>()[i], b = ref[static_cast<std::size_t>(i)];
    worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(b)));
  }
  return worst;
}

/// Closed-form parameter count of the Swin U-Net, walked from the config.
inline std::int64_t parameter_count(const mcswin::ModelConfig& c) {
  const std::int64_t E = c.embed_dim, p3 = std::int64_t(c.patch_size[0]) * c.patch_size[1] * c.patch_size[2];
  const std::int64_t table = std::int64_t(2 * c.window[0] - 1) * (2 * c.window[1] - 1) * (2 * c.window[2] - 1);
  std::int64_t n = c.in_channels * E * p3 + E;  // patch embedding
  for (int s = 0; s < c.stages(); ++s) {
    const std::int64_t C = E << s, H = static_cast<std::int64_t>(C * c.mlp_ratio);
    const std::int64_t block = 2 * C + (3 * C * C + 3 * C) + (C * C + C) + table * c.heads[s] + 2 * C +
                               (C * H + H) + (H * C + C);
    n += block * c.depths[s];
    if (s + 1 < c.stages()) n += 2 * 8 * C + 8 * C * 2 * C;  // merging: LN(8C) + Linear(8C -> 2C)
  }
  // Decoder: stem, then per scale up-conv and two 3^3 conv blocks (no bias, no affine norm).
  n += c.in_channels * E * 27 + E * E * 27;
  for (int s = c.stages() - 2; s >= 0; --s) {
    const std::int64_t C = E << s;
    n += (2 * C) * C * 8 + C;
    n += 2 * C * C * 27 + C * C * 27;
  }
  n += E * E * p3 + E;
  n += 2 * E * E * 27 + E * E * 27;
  n += E * c.num_classes + c.num_classes;  // 1x1 head
  return n;
}

struct GradCheckResult {
  std::int64_t checked = 0;
  std::int64_t failed = 0;
  double worst_rel = 0.0;
  std::string worst_name;
};

/// Central finite differences of seg_loss w.r.t. every parameter element
/// (or every `stride`-th one) in double precision with dropout off.
inline GradCheckResult gradient_check(mcswin::ModelState& state, const torch::Tensor& input,
                                      const torch::Tensor& labels, double step = 1e-6, double rel_tol = 1e-3,
                                      double abs_floor = 1e-5, std::int64_t stride = 1) {
  state.net->to(torch::kDouble);
  auto x = input.to(torch::kDouble);
  auto loss_value = [&] {
    torch::NoGradGuard ng;
    return mcswin::seg_loss(mcswin::forward(state, x, mcswin::DropoutMode::Off, nullptr), labels, 1.0, 1.0)
        .total.item<double>();
  };
  state.net->zero_grad();
  mcswin::seg_loss(mcswin::forward(state, x, mcswin::DropoutMode::Off, nullptr), labels, 1.0, 1.0).total.backward();

  GradCheckResult r;
  for (auto& item : state.net->named_parameters()) {
    auto p = item.value();
    auto g = p.grad().defined() ? p.grad().clone() : torch::zeros_like(p);
    auto flat = p.data().view(-1);
    auto gflat = g.view(-1);
    for (std::int64_t i = 0; i < flat.numel(); i += stride) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + step;
      const double up = loss_value();
      flat[i] = orig - step;
      const double down = loss_value();
      flat[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double analytic = gflat[i].item<double>();
      const double err = std::abs(numeric - analytic);
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      ++r.checked;
      if (err > rel_tol * scale + abs_floor) ++r.failed;
      const double rel = err / std::max(scale, abs_floor);
      if (rel > r.worst_rel) {
        r.worst_rel = rel;
        r.worst_name = item.key() + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

/// Micro model used by the gradient check: one Swin block, embed 4, 4^3 input.
inline mcswin::ModelConfig micro_config() {
  mcswin::ModelConfig c;
  c.embed_dim = 4;
  c.depths = {1};
  c.heads = {1};
  c.window = {2, 2, 2};
  c.input_shape = {4, 4, 4};
  c.dropout = 0.0;
  return c;
}

}  // namespace oracle
