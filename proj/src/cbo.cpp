#include "tiltune/cbo.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

namespace tiltune::cbo {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093453;

Eigen::VectorXd pack(const GpHyper& h) {
  Eigen::VectorXd p(h.log_lengthscale.size() + 2);
  p << h.log_lengthscale, h.log_signal_var, h.log_noise_var;
  return p;
}

GpHyper unpack(const Eigen::VectorXd& p) {
  GpHyper h;
  const auto d = p.size() - 2;
  h.log_lengthscale = p.head(d);
  h.log_signal_var = p[d];
  h.log_noise_var = p[d + 1];
  return h;
}

struct Limits {
  Eigen::VectorXd lo, hi;
};

Limits limits(std::size_t dim, const GpFitOptions& o) {
  Limits l{Eigen::VectorXd(dim + 2), Eigen::VectorXd(dim + 2)};
  l.lo.head(dim).setConstant(std::log(o.min_lengthscale));
  l.hi.head(dim).setConstant(std::log(o.max_lengthscale));
  l.lo[dim] = std::log(o.min_signal_var);
  l.hi[dim] = std::log(o.max_signal_var);
  l.lo[dim + 1] = 2.0 * std::log(o.min_noise_std);
  l.hi[dim + 1] = 2.0 * std::log(o.max_noise_std);
  return l;
}

Eigen::VectorXd clamp(const Eigen::VectorXd& p, const Limits& l) { return p.cwiseMax(l.lo).cwiseMin(l.hi); }

}  // namespace

GpHyper GpHyper::defaults(std::size_t dim) {
  GpHyper h;
  h.log_lengthscale = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim), std::log(0.3));
  return h;
}

GpModel::GpModel(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GpHyper& hyper) : x_(x), hyper_(hyper) {
  const auto n = x.rows();
  if (n == 0 || y.size() != n) throw DimensionError("gp: need matching, non-empty inputs and targets");
  if (hyper.log_lengthscale.size() != x.cols()) throw DimensionError("gp: one lengthscale per input dimension");
  mean_ = y.mean();
  const double var = (y.array() - mean_).square().mean();
  scale_ = var > 1e-24 * std::max(1.0, mean_ * mean_) ? std::sqrt(var) : 1.0;
  y_ = (y.array() - mean_) / scale_;
  inv_len2_ = (-2.0 * hyper.log_lengthscale.array()).exp();

  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = std::exp(hyper.log_signal_var);
    for (Eigen::Index j = 0; j < i; ++j) k(i, j) = k(j, i) = kernel(x.row(i).transpose(), x.row(j).transpose());
  }
  const double noise = std::exp(hyper.log_noise_var);
  for (double jitter : {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
    Eigen::MatrixXd kn = k;
    kn.diagonal().array() += noise + jitter;
    llt_.compute(kn);
    if (llt_.info() == Eigen::Success && llt_.matrixLLT().diagonal().minCoeff() > 0.0) {
      jitter_ = jitter;
      alpha_ = llt_.solve(y_);
      lml_ = -0.5 * y_.dot(alpha_) - llt_.matrixLLT().diagonal().array().log().sum() - 0.5 * n * kLog2Pi;
      return;
    }
  }
  throw SingularityError("gp: kernel matrix not positive definite even with 1e-6 jitter");
}

double GpModel::kernel(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) const {
  return std::exp(hyper_.log_signal_var - 0.5 * ((a - b).array().square() * inv_len2_.array()).sum());
}

std::pair<double, double> GpModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const auto n = x_.rows();
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks[i] = kernel(x_.row(i).transpose(), x);
  const double mu = ks.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(ks);
  double var = std::exp(hyper_.log_signal_var) - v.squaredNorm();
  if (var < 0.0) var = 0.0;
  return {mean_ + scale_ * mu, scale_ * std::sqrt(var)};
}

Eigen::VectorXd GpModel::lml_gradient() const {
  const auto n = x_.rows();
  const auto d = x_.cols();
  const Eigen::MatrixXd kinv = llt_.solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::MatrixXd w = alpha_ * alpha_.transpose() - kinv;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(d + 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < i; ++j) {
      const Eigen::ArrayXd diff2 = (x_.row(i) - x_.row(j)).array().square().transpose();
      const double kse = std::exp(hyper_.log_signal_var - 0.5 * (diff2 * inv_len2_.array()).sum());
      const double wij = w(i, j);  // symmetric pair counted twice below
      grad.head(d).array() += wij * kse * diff2 * inv_len2_.array();
      grad[d] += wij * kse;
    }
  grad[d] += 0.5 * w.diagonal().sum() * std::exp(hyper_.log_signal_var);
  grad[d + 1] = 0.5 * w.diagonal().sum() * std::exp(hyper_.log_noise_var);
  return grad;
}

GpModel GpModel::fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GpFitOptions& options,
                     std::mt19937_64& rng) {
  const auto dim = static_cast<std::size_t>(x.cols());
  if (x.rows() < 2) return GpModel(x, y, GpHyper::defaults(dim));
  const auto lim = limits(dim, options);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  std::optional<GpModel> best;
  for (std::size_t s = 0; s <= options.restarts; ++s) {
    Eigen::VectorXd p = pack(GpHyper::defaults(dim));
    if (s > 0)
      for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = lim.lo[i] + u(rng) * (lim.hi[i] - lim.lo[i]);
    p = clamp(p, lim);
    std::optional<GpModel> cur;
    try {
      cur.emplace(x, y, unpack(p));
    } catch (const SingularityError&) {
      continue;
    }
    double step = 0.5;
    for (std::size_t it = 0; it < options.iterations && step > 1e-6; ++it) {
      const Eigen::VectorXd g = cur->lml_gradient();
      const double gn = g.norm();
      if (gn < 1e-8) break;
      bool moved = false;
      while (step > 1e-6) {
        const Eigen::VectorXd q = clamp(p + (step / gn) * g, lim);
        if ((q - p).norm() < 1e-12) {
          step = 0.0;
          break;
        }
        try {
          GpModel trial(x, y, unpack(q));
          if (trial.log_marginal_likelihood() > cur->log_marginal_likelihood()) {
            p = q;
            cur.emplace(std::move(trial));
            step *= 1.5;
            moved = true;
            break;
          }
        } catch (const SingularityError&) {
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
    if (!best || cur->log_marginal_likelihood() > best->log_marginal_likelihood()) best.emplace(std::move(*cur));
  }
  if (!best) throw SingularityError("gp: no start produced a positive definite kernel");
  return std::move(*best);
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double expected_improvement(double mu, double sigma, double f_best) {
  if (!(sigma >= 0.0)) throw DomainError("expected improvement needs sigma >= 0");
  const double gain = f_best - mu;
  if (sigma == 0.0) return std::max(gain, 0.0);
  const double z = gain / sigma;
  return std::max(gain * normal_cdf(z) + sigma * normal_pdf(z), 0.0);
}

double feasibility_probability(double mu, double sigma) {
  if (sigma == 0.0) return mu >= 0.0 ? 1.0 : 0.0;
  return normal_cdf(mu / sigma);
}

void CboConfig::validate() const {
  if (!(exploration_ratio >= 0.0 && exploration_ratio <= 1.0)) throw ConfigError("cbo: exploration ratio must lie in [0, 1]");
  if (acquisition_starts == 0) throw ConfigError("cbo: need at least one acquisition start");
  if (!(failure_penalty >= 1.0)) throw ConfigError("cbo: failure penalty must be >= 1");
  if (!(gp.min_lengthscale > 0.0 && gp.min_lengthscale <= gp.max_lengthscale))
    throw ConfigError("cbo: bad lengthscale bounds");
}

Cbo::Cbo(opt::Box box, CboConfig config) : box_(std::move(box)), cfg_(config), rng_(derive_seed(config.seed, 0x63626fu)) {
  box_.validate();
  cfg_.validate();
}

const opt::IterationRecord& Cbo::add(std::span<const double> theta, const opt::Evaluation& ev, const std::string& phase,
                                     double selection_seconds) {
  const auto unit = box_.to_unit(theta);
  x_.push_back(Eigen::Map<const Eigen::VectorXd>(unit.data(), static_cast<Eigen::Index>(unit.size())));
  const bool failed = ev.failed || !std::isfinite(ev.f);
  double f = ev.f;
  if (failed)
    f = std::isfinite(worst_cost_) ? worst_cost_ + (cfg_.failure_penalty - 1.0) * std::abs(worst_cost_) : kInf;
  else
    worst_cost_ = std::max(worst_cost_, f);
  double g = ev.g;
  if (!std::isfinite(g)) {
    const double lowest = g_.empty() ? kInf : *std::min_element(g_.begin(), g_.end());
    g = std::isfinite(lowest) ? std::min(lowest, -std::abs(lowest)) : -1.0;
  }
  f_.push_back(f);
  g_.push_back(g);
  failed_.push_back(failed ? 1 : 0);
  const bool feasible = !failed && ev.g >= 0.0;
  if (feasible && f < incumbent_) {
    incumbent_ = f;
    incumbent_x_ = x_.back();
  }
  opt::IterationRecord rec;
  rec.n = x_.size();
  rec.theta.assign(theta.begin(), theta.end());
  rec.f = f;
  rec.g = ev.g;
  rec.feasible = feasible;
  rec.failed = failed;
  rec.incumbent = incumbent_;
  rec.selection_seconds = selection_seconds;
  rec.phase = phase;
  history_.push_back(std::move(rec));
  return history_.back();
}

void Cbo::refit() {
  const auto dim = static_cast<Eigen::Index>(box_.dim());
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < x_.size(); ++i)
    if (!failed_[i]) ok.push_back(i);
  f_gp_.reset();
  if (!ok.empty()) {
    Eigen::MatrixXd xf(static_cast<Eigen::Index>(ok.size()), dim);
    Eigen::VectorXd yf(static_cast<Eigen::Index>(ok.size()));
    for (std::size_t r = 0; r < ok.size(); ++r) {
      xf.row(static_cast<Eigen::Index>(r)) = x_[ok[r]].transpose();
      yf[static_cast<Eigen::Index>(r)] = f_[ok[r]];
    }
    f_gp_.emplace(GpModel::fit(xf, yf, cfg_.gp, rng_));
  }
  Eigen::MatrixXd xg(static_cast<Eigen::Index>(x_.size()), dim);
  Eigen::VectorXd yg(static_cast<Eigen::Index>(x_.size()));
  for (std::size_t r = 0; r < x_.size(); ++r) {
    xg.row(static_cast<Eigen::Index>(r)) = x_[r].transpose();
    yg[static_cast<Eigen::Index>(r)] = g_[r];
  }
  g_gp_.emplace(GpModel::fit(xg, yg, cfg_.gp, rng_));
}

double Cbo::acquisition(const Eigen::Ref<const Eigen::VectorXd>& unit) const {
  const auto [mg, sg] = g_gp_->predict(unit);
  const double pof = feasibility_probability(mg, sg);
  if (!f_gp_ || !std::isfinite(incumbent_)) return pof;
  const auto [mf, sf] = f_gp_->predict(unit);
  return expected_improvement(mf, sf, incumbent_) * pof;
}

double Cbo::local_search(Eigen::VectorXd& x) const {
  double value = acquisition(x);
  double h = 0.1;
  for (int it = 0; it < 200 && h >= 1e-4; ++it) {
    double best = value;
    Eigen::VectorXd best_x = x;
    for (Eigen::Index d = 0; d < x.size(); ++d)
      for (double sgn : {1.0, -1.0}) {
        Eigen::VectorXd y = x;
        y[d] = std::clamp(y[d] + sgn * h, 0.0, 1.0);
        const double v = acquisition(y);
        if (v > best) {
          best = v;
          best_x = y;
        }
      }
    if (best > value) {
      value = best;
      x = best_x;
    } else {
      h *= 0.5;
    }
  }
  return value;
}

Cbo::Choice Cbo::select() {
  const auto dim = static_cast<Eigen::Index>(box_.dim());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (x_.empty()) {
    std::vector<double> p(box_.dim());
    for (auto& v : p) v = u(rng_);
    return {p, "initial", 0.0};
  }
  refit();
  const bool explore = !std::isfinite(incumbent_) || u(rng_) < cfg_.exploration_ratio;

  std::vector<Eigen::VectorXd> starts;
  if (explore) {
    std::vector<std::pair<double, Eigen::VectorXd>> screen;
    for (std::size_t i = 0; i < cfg_.acquisition_screen; ++i) {
      Eigen::VectorXd p(dim);
      for (Eigen::Index d = 0; d < dim; ++d) p[d] = u(rng_);
      screen.emplace_back(acquisition(p), p);
    }
    std::stable_sort(screen.begin(), screen.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; i < std::min(cfg_.acquisition_starts, screen.size()); ++i) starts.push_back(screen[i].second);
  } else {
    std::normal_distribution<double> nd(0.0, 0.05);
    for (std::size_t i = 0; i < cfg_.acquisition_starts; ++i) {
      Eigen::VectorXd p = incumbent_x_;
      for (Eigen::Index d = 0; d < dim; ++d) p[d] = std::clamp(p[d] + nd(rng_), 0.0, 1.0);
      starts.push_back(p);
    }
  }
  double best = -kInf;
  Eigen::VectorXd best_x;
  for (auto& s : starts) {
    const double v = local_search(s);
    if (v > best) {
      best = v;
      best_x = s;
    }
  }
  return {std::vector<double>(best_x.data(), best_x.data() + best_x.size()), explore ? "explore" : "exploit", best};
}

const opt::IterationRecord& Cbo::iterate(const opt::Evaluator& evaluator) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto choice = select();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto theta = box_.from_unit(choice.unit);
  return add(theta, evaluator(theta), choice.phase, seconds);
}

std::vector<opt::IterationRecord> minimize(const opt::Box& box, const CboConfig& config,
                                           const opt::Evaluator& evaluator, const std::vector<double>* prior) {
  Cbo c(box, config);
  if (prior) c.add(*prior, evaluator(*prior), "prior");
  for (std::size_t i = 0; i < config.budget; ++i) c.iterate(evaluator);
  return c.history();
}

}  // namespace tiltune::cbo
