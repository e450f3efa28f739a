#include "tiltune/smgo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace tiltune::smgo {

namespace {

constexpr double kCoincident = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

bool same_estimate(const LipschitzEstimate& a, const LipschitzEstimate& b) {
  return a.gamma == b.gamma && a.epsilon == b.epsilon;
}

bool lex_less(std::span<const double> a, std::span<const double> b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

void widen(ConeBounds& cb, std::span<const double> theta, std::span<const double> xk, double yk, double gamma,
           double eps) {
  const double r = gamma * distance(theta, xk);
  cb.upper = std::min(cb.upper, yk + eps + r);
  cb.lower = std::max(cb.lower, yk - eps - r);
}

// Estimate with a fallback while fewer than two distinct usable samples exist.
LipschitzEstimate estimate_or_default(const PointSet& x, std::span<const double> y, std::span<const char> use,
                                      double inflation, std::optional<double> fixed) {
  LipschitzEstimate est;
  try {
    est = estimate_lipschitz(x, y, use, inflation);
  } catch (const SingularityError&) {
    double scale = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (use[i]) scale = std::max(scale, std::abs(y[i]));
    est.gamma = scale > 0.0 ? scale : 1.0;
  }
  if (est.gamma == 0.0) {
    double scale = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (use[i]) scale = std::max(scale, std::abs(y[i]));
    est.gamma = scale > 0.0 ? 1e-3 * scale : 1e-3;
  }
  if (fixed) est.gamma = *fixed;
  return est;
}

}  // namespace

void SmgoConfig::validate() const {
  if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("smgo: delta must lie in [0, 1]");
  if (!(beta >= 0.0)) throw ConfigError("smgo: beta must be >= 0");
  if (!(alpha >= 0.0)) throw ConfigError("smgo: alpha must be >= 0");
  if (!(gamma_inflation >= 1.0)) throw ConfigError("smgo: gamma inflation must be >= 1");
  if (!(failure_penalty >= 1.0)) throw ConfigError("smgo: failure penalty must be >= 1");
  if (gamma_f && !(*gamma_f > 0.0)) throw ConfigError("smgo: fixed gamma_f must be > 0");
  if (gamma_g && !(*gamma_g > 0.0)) throw ConfigError("smgo: fixed gamma_g must be > 0");
}

void PointSet::push(std::span<const double> p) {
  if (dim == 0) dim = p.size();
  if (p.size() != dim) throw DimensionError("point set: dimension mismatch");
  data.insert(data.end(), p.begin(), p.end());
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

LipschitzEstimate estimate_lipschitz(const PointSet& x, std::span<const double> y, std::span<const char> use,
                                     double inflation) {
  if (y.size() != x.size() || use.size() != x.size()) throw DimensionError("lipschitz estimate: length mismatch");
  LipschitzEstimate est;
  bool distinct = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!use[i]) continue;
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      if (!use[j]) continue;
      const double d = distance(x[i], x[j]);
      const double dy = std::abs(y[i] - y[j]);
      if (d <= kCoincident) {
        est.epsilon = std::max(est.epsilon, 0.5 * dy);
      } else {
        distinct = true;
        est.slope = std::max(est.slope, dy / d);
      }
    }
  }
  if (!distinct) throw SingularityError("lipschitz estimate needs two samples at distinct points");
  est.gamma = inflation * est.slope;
  return est;
}

ConeBounds cone_bounds(std::span<const double> theta, const PointSet& x, std::span<const double> y,
                       std::span<const char> use, double gamma, double epsilon) {
  ConeBounds cb{-kInf, kInf};
  for (std::size_t k = 0; k < x.size(); ++k)
    if (use[k]) widen(cb, theta, x[k], y[k], gamma, epsilon);
  return cb;
}

bool exploitation_test(double lower, double incumbent, double alpha, double gamma_f) {
  return lower <= incumbent - alpha * gamma_f;
}

Smgo::Smgo(opt::Box box, SmgoConfig config) : box_(std::move(box)), cfg_(config) {
  box_.validate();
  cfg_.validate();
  samples_.dim = box_.dim();
  candidates_.dim = box_.dim();
  for (const auto& p : opt::halton(cfg_.mesh_points, box_.dim(), derive_seed(cfg_.seed, 0x6d657368u)))
    add_candidate(p);
}

void Smgo::add_candidate(std::span<const double> unit) {
  candidates_.push(unit);
  active_.push_back(1);
  ConeBounds f{-kInf, kInf}, g{-kInf, kInf};
  if (cache_valid_) {
    for (std::size_t k = 0; k < cached_samples_; ++k) {
      if (f_use_[k]) widen(f, unit, samples_[k], f_[k], cached_f_.gamma, cached_f_.epsilon);
      if (g_use_[k]) widen(g, unit, samples_[k], g_[k], cached_g_.gamma, cached_g_.epsilon);
    }
  }
  cf_.push_back(f);
  cg_.push_back(g);
}

const opt::IterationRecord& Smgo::add(std::span<const double> theta, const opt::Evaluation& ev,
                                      const std::string& phase, double selection_seconds) {
  const auto unit = box_.to_unit(theta);
  const std::size_t prior = samples_.size();
  samples_.push(unit);
  raw_.push_back(ev);

  const bool failed = ev.failed || !std::isfinite(ev.f);
  double f = ev.f;
  if (failed) {
    f = std::isfinite(worst_cost_) ? worst_cost_ + (cfg_.failure_penalty - 1.0) * std::abs(worst_cost_) : kInf;
  } else {
    worst_cost_ = std::max(worst_cost_, f);
  }
  double g = ev.g;
  if (!std::isfinite(g)) {
    double lowest = kInf;
    for (std::size_t k = 0; k < prior; ++k) lowest = std::min(lowest, g_[k]);
    g = std::isfinite(lowest) ? std::min(lowest, -std::abs(lowest)) : -1.0;
  }
  f_.push_back(f);
  g_.push_back(g);
  f_use_.push_back(failed ? 0 : 1);
  g_fit_.push_back(failed ? 0 : 1);
  g_use_.push_back(1);

  const bool feasible = !failed && ev.g >= 0.0;
  if (feasible && f < incumbent_) {
    incumbent_ = f;
    incumbent_index_ = prior;
  }

  opt::IterationRecord rec;
  rec.n = prior + 1;
  rec.theta.assign(theta.begin(), theta.end());
  rec.f = f;
  rec.g = ev.g;
  rec.feasible = feasible;
  rec.failed = failed;
  rec.incumbent = incumbent_;
  rec.selection_seconds = selection_seconds;
  rec.phase = phase;
  history_.push_back(std::move(rec));

  update_estimates();

  std::vector<double> mid(box_.dim());
  for (std::size_t k = 0; k < prior; ++k) {
    const auto xk = samples_[k];
    for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5 * (xk[i] + unit[i]);
    if (distance(mid, unit) > kCoincident) add_candidate(mid);
  }
  const auto xn = samples_[prior];
  for (std::size_t c = 0; c < candidates_.size(); ++c)
    if (active_[c] && distance(candidates_[c], xn) <= kCoincident) active_[c] = 0;
  return history_.back();
}

void Smgo::update_estimates() {
  f_est_ = estimate_or_default(samples_, f_, f_use_, cfg_.gamma_inflation, cfg_.gamma_f);
  g_est_ = estimate_or_default(samples_, g_, g_fit_, cfg_.gamma_inflation, cfg_.gamma_g);
}

void Smgo::refresh_cache() {
  const std::size_t n = samples_.size();
  if (!cache_valid_ || !same_estimate(cached_f_, f_est_) || !same_estimate(cached_g_, g_est_)) {
    cached_f_ = f_est_;
    cached_g_ = g_est_;
    cached_samples_ = 0;
    std::fill(cf_.begin(), cf_.end(), ConeBounds{-kInf, kInf});
    std::fill(cg_.begin(), cg_.end(), ConeBounds{-kInf, kInf});
    cache_valid_ = true;
  }
  for (std::size_t c = 0; c < candidates_.size(); ++c) {
    if (!active_[c]) continue;
    const auto x = candidates_[c];
    for (std::size_t k = cached_samples_; k < n; ++k) {
      if (f_use_[k]) widen(cf_[c], x, samples_[k], f_[k], cached_f_.gamma, cached_f_.epsilon);
      if (g_use_[k]) widen(cg_[c], x, samples_[k], g_[k], cached_g_.gamma, cached_g_.epsilon);
    }
  }
  cached_samples_ = n;
}

double Smgo::constraint_score(std::size_t c) const {
  return cfg_.delta * cg_[c].mean() + (1.0 - cfg_.delta) * cg_[c].lower;
}

Smgo::Choice Smgo::select() {
  if (samples_.size() == 0) {
    std::mt19937_64 rng(derive_seed(cfg_.seed, 0x696e6974u));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> p(box_.dim());
    for (auto& v : p) v = u(rng);
    return {p, "initial"};
  }
  refresh_cache();
  const bool have_f = std::any_of(f_use_.begin(), f_use_.end(), [](char c) { return c != 0; });

  std::size_t best = candidates_.size(), explore = candidates_.size(), relaxed = candidates_.size();
  double best_score = kInf, best_lambda = 0.0, explore_lambda = -kInf, relaxed_score = -kInf;
  for (std::size_t c = 0; c < candidates_.size(); ++c) {
    if (!active_[c]) continue;
    const double cs = constraint_score(c);
    if (relaxed == candidates_.size() || cs > relaxed_score ||
        (cs == relaxed_score && lex_less(candidates_[c], candidates_[relaxed]))) {
      relaxed = c;
      relaxed_score = cs;
    }
    if (!(cs >= 0.0) || !have_f) continue;
    const double lambda = cf_[c].uncertainty();
    const double score = cf_[c].mean() - cfg_.beta * lambda;
    if (best == candidates_.size() || score < best_score ||
        (score == best_score && (lambda > best_lambda ||
                                 (lambda == best_lambda && lex_less(candidates_[c], candidates_[best]))))) {
      best = c;
      best_score = score;
      best_lambda = lambda;
    }
    if (explore == candidates_.size() || lambda > explore_lambda ||
        (lambda == explore_lambda && lex_less(candidates_[c], candidates_[explore]))) {
      explore = c;
      explore_lambda = lambda;
    }
  }
  if (relaxed == candidates_.size()) throw ConvergenceError("smgo: candidate set exhausted");

  std::size_t pick = relaxed;
  std::string phase = "fallback";
  const bool have_incumbent = std::isfinite(incumbent_);
  if (have_incumbent && best != candidates_.size() &&
      exploitation_test(cf_[best].lower, incumbent_, cfg_.alpha, f_est_.gamma)) {
    pick = best;
    phase = "exploit";
  } else if (explore != candidates_.size()) {
    pick = explore;
    phase = "explore";
  } else if (!have_incumbent) {
    // nothing feasible seen yet: Lipschitz search for the largest optimistic g
    double top = -kInf, top_lambda = -kInf;
    for (std::size_t c = 0; c < candidates_.size(); ++c) {
      if (!active_[c]) continue;
      const double u = cg_[c].upper, lam = cg_[c].uncertainty();
      if (u > top || (u == top && (lam > top_lambda || (lam == top_lambda && lex_less(candidates_[c], candidates_[pick]))))) {
        pick = c;
        top = u;
        top_lambda = lam;
      }
    }
    phase = "feasibility";
  }
  const auto p = candidates_[pick];
  return {std::vector<double>(p.begin(), p.end()), phase};
}

const opt::IterationRecord& Smgo::iterate(const opt::Evaluator& evaluator) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto choice = select();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto theta = box_.from_unit(choice.unit);
  return add(theta, evaluator(theta), choice.phase, seconds);
}

ConeBounds Smgo::f_bounds(std::span<const double> unit) const {
  return cone_bounds(unit, samples_, f_, f_use_, f_est_.gamma, f_est_.epsilon);
}

ConeBounds Smgo::g_bounds(std::span<const double> unit) const {
  return cone_bounds(unit, samples_, g_, g_use_, g_est_.gamma, g_est_.epsilon);
}

std::optional<std::vector<double>> Smgo::incumbent_theta() const {
  if (!std::isfinite(incumbent_)) return std::nullopt;
  return history_[incumbent_index_].theta;
}

std::size_t Smgo::active_candidates() const {
  return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), 1));
}

void Smgo::save(std::ostream& out) const {
  std::ostringstream os;
  os << std::hexfloat;
  os << "smgo-snapshot " << samples_.size() << ' ' << box_.dim() << '\n';
  for (std::size_t k = 0; k < history_.size(); ++k) {
    os << history_[k].phase;
    for (double v : history_[k].theta) os << ' ' << v;
    os << ' ' << raw_[k].f << ' ' << raw_[k].g << ' ' << (raw_[k].failed ? 1 : 0) << ' '
       << history_[k].selection_seconds << '\n';
  }
  out << os.str();
}

Smgo Smgo::restore(std::istream& in, opt::Box box, SmgoConfig config) {
  // operator>> does not parse hex floats in every standard library
  auto number = [&in]() {
    std::string tok;
    if (!(in >> tok)) throw ConfigError("smgo snapshot: truncated");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw ConfigError("smgo snapshot: bad number '" + tok + "'");
    return v;
  };
  std::string magic;
  std::size_t n = 0, dim = 0;
  if (!(in >> magic >> n >> dim) || magic != "smgo-snapshot") throw ConfigError("smgo snapshot: bad header");
  if (dim != box.dim()) throw DimensionError("smgo snapshot: dimension differs from the search box");
  Smgo s(std::move(box), config);
  std::vector<double> theta(dim);
  for (std::size_t k = 0; k < n; ++k) {
    std::string phase;
    if (!(in >> phase)) throw ConfigError("smgo snapshot: truncated");
    for (auto& v : theta) v = number();
    opt::Evaluation ev;
    ev.f = number();
    ev.g = number();
    ev.failed = number() != 0.0;
    const double seconds = number();
    s.add(theta, ev, phase, seconds);
  }
  return s;
}

std::vector<opt::IterationRecord> minimize(const opt::Box& box, const SmgoConfig& config,
                                           const opt::Evaluator& evaluator, const std::vector<double>* prior) {
  Smgo s(box, config);
  if (prior) s.add(*prior, evaluator(*prior), "prior");
  for (std::size_t i = 0; i < config.budget; ++i) s.iterate(evaluator);
  return s.history();
}

}  // namespace tiltune::smgo
