#include "tpn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace tpn {

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor->numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(p.tensor->numel()), 0.0f);
  }
}

void Adam::step(const GradientMap<float>& grads) {
  ++t_;
  const double bc1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  const auto step = static_cast<float>(cfg_.lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1 / std::sqrt(bc2));
  const auto eps = static_cast<float>(cfg_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i].tensor;
    auto it = grads.find(p.id());
    const float* g = it == grads.end() ? nullptr : it->second.data().data();
    auto x = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < x.size(); ++k) {
      const float gk = g ? g[k] : 0.0f;
      m[k] = b1 * m[k] + (1 - b1) * gk;
      v[k] = b2 * v[k] + (1 - b2) * gk * gk;
      x[k] -= step * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
    }
  }
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Minimizer of the cubic interpolating (x1, f1, g1) and (x2, f2, g2),
// clamped to [lo, hi]; falls back to bisection.
double cubic_min(double x1, double f1, double g1, double x2, double f2, double g2, double lo, double hi) {
  const double d1 = g1 + g2 - 3 * (f1 - f2) / (x1 - x2);
  const double sq = d1 * d1 - g1 * g2;
  if (sq >= 0) {
    const double d2 = std::copysign(std::sqrt(sq), x2 - x1);
    const double t = x2 - (x2 - x1) * (g2 + d2 - d1) / (g2 - g1 + 2 * d2);
    if (std::isfinite(t)) return std::clamp(t, lo, hi);
  }
  return 0.5 * (lo + hi);
}

struct Probe {
  double alpha = 0, f = 0, dphi = 0;
  std::vector<double> g;
};

struct LineSearch {
  const Objective& f;
  const std::vector<double>& x;
  const std::vector<double>& d;
  const LbfgsConfig& cfg;
  int evaluations = 0;

  Probe eval(double alpha) {
    std::vector<double> xt(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xt[i] = x[i] + alpha * d[i];
    Probe p;
    p.alpha = alpha;
    p.g.resize(x.size());
    p.f = f(xt, p.g);
    p.dphi = dot(p.g, d);
    ++evaluations;
    return p;
  }

  bool armijo(const Probe& p, const Probe& p0) const {
    return std::isfinite(p.f) && p.f <= p0.f + cfg.c1 * p.alpha * p0.dphi;
  }
  bool curvature(const Probe& p, const Probe& p0) const { return std::abs(p.dphi) <= -cfg.c2 * p0.dphi; }

  // Returns a point satisfying the strong Wolfe conditions or, failing that,
  // the best sufficient-decrease point seen (alpha = 0 if none).
  Probe run(const Probe& p0, double alpha) {
    Probe best = p0;
    best.alpha = 0;
    auto consider = [&](const Probe& p) {
      if (armijo(p, p0) && p.f < best.f) best = p;
    };
    Probe prev = p0;
    for (int i = 0; i < cfg.max_line_search; ++i) {
      Probe cur = eval(alpha);
      consider(cur);
      if (!armijo(cur, p0) || (i > 0 && cur.f >= prev.f)) return zoom(p0, prev, cur, best);
      if (curvature(cur, p0)) return cur;
      if (cur.dphi >= 0) return zoom(p0, cur, prev, best);
      prev = std::move(cur);
      alpha *= 2;
    }
    return best;
  }

  Probe zoom(const Probe& p0, Probe lo, Probe hi, Probe best) {
    for (int j = 0; j < cfg.max_line_search; ++j) {
      const double a = std::min(lo.alpha, hi.alpha), b = std::max(lo.alpha, hi.alpha);
      if (b - a < 1e-12 * std::max(1.0, b)) break;
      const double margin = 0.1 * (b - a);
      const double alpha = cubic_min(lo.alpha, lo.f, lo.dphi, hi.alpha, hi.f, hi.dphi, a + margin, b - margin);
      Probe cur = eval(alpha);
      if (armijo(cur, p0) && cur.f < best.f) best = cur;
      if (!armijo(cur, p0) || cur.f >= lo.f) {
        hi = std::move(cur);
      } else {
        if (curvature(cur, p0)) return cur;
        if (cur.dphi * (hi.alpha - lo.alpha) >= 0) hi = lo;
        lo = std::move(cur);
      }
    }
    return best;
  }
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& f, std::vector<double> x0, const LbfgsConfig& cfg) {
  LbfgsResult r;
  std::vector<double> g(x0.size());
  double fx = f(x0, g);
  r.evaluations = 1;
  r.f_initial = fx;
  r.trace.push_back(fx);
  r.x = x0;
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  for (int k = 0; k < cfg.max_iter; ++k) {
    double gmax = 0;
    for (double v : g) gmax = std::max(gmax, std::abs(v));
    if (!(gmax > cfg.tol_grad)) break;

    // Two-loop recursion: d = -H g.
    std::vector<double> q = g;
    std::vector<double> alphas(s_hist.size());
    for (std::size_t i = s_hist.size(); i-- > 0;) {
      alphas[i] = rho_hist[i] * dot(s_hist[i], q);
      for (std::size_t j = 0; j < q.size(); ++j) q[j] -= alphas[i] * y_hist[i][j];
    }
    if (!s_hist.empty()) {
      const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
      for (double& v : q) v *= gamma;
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * dot(y_hist[i], q);
      for (std::size_t j = 0; j < q.size(); ++j) q[j] += (alphas[i] - beta) * s_hist[i][j];
    }
    std::vector<double> d(q.size());
    for (std::size_t j = 0; j < q.size(); ++j) d[j] = -q[j];
    double dphi0 = dot(g, d);
    if (!(dphi0 < 0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t j = 0; j < d.size(); ++j) d[j] = -g[j];
      dphi0 = dot(g, d);
    }
    const double alpha0 = s_hist.empty() ? std::min(1.0, 1.0 / std::sqrt(dot(g, g))) : 1.0;

    LineSearch ls{f, r.x, d, cfg};
    Probe p0;
    p0.f = fx;
    p0.dphi = dphi0;
    Probe p = ls.run(p0, alpha0);
    r.evaluations += ls.evaluations;
    if (p.alpha == 0 || !(p.f < fx)) {
      r.line_search_failed = true;
      break;
    }
    std::vector<double> s(d.size()), y(d.size());
    for (std::size_t j = 0; j < d.size(); ++j) {
      s[j] = p.alpha * d[j];
      y[j] = p.g[j] - g[j];
      r.x[j] += s[j];
    }
    const double sy = dot(s, y);
    if (sy > 1e-10) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > cfg.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const double change = fx - p.f;
    fx = p.f;
    g = std::move(p.g);
    r.trace.push_back(fx);
    r.iterations = k + 1;
    if (change < cfg.tol_change) break;
  }
  r.f_final = fx;
  return r;
}

}  // namespace tpn
