#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <random>
#include <sstream>

#include "tiltune/config.hpp"
#include "tiltune/harness.hpp"
#include "tiltune/smgo.hpp"
#include "tiltune/cbo.hpp"
#include "tiltune/vrft.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace tiltune;
using harness::Settings;

namespace {

py::array_t<double> arr(const std::vector<double>& v) { return py::array_t<double>(v.size(), v.data()); }

std::vector<double> vec(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw DimensionError("expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

std::string as_setting(const py::handle& value) {
  if (py::isinstance<py::bool_>(value)) return value.cast<bool>() ? "true" : "false";
  if (py::isinstance<py::float_>(value)) {
    std::ostringstream s;
    s.precision(17);
    s << value.cast<double>();
    return s.str();
  }
  return py::str(value).cast<std::string>();
}

refgen::StaticYawMap build_map(const Settings& s) {
  return refgen::build_static_map(s.setup.nominal, refgen::default_speed_grid(), refgen::default_steer_grid());
}

py::dict gains_dict(const til::PidGains& g) { return py::dict("kp"_a = g.kp, "ti"_a = g.ti, "td"_a = g.td); }

py::dict trace_dict(const til::TilTrace& tr, const Settings& s) {
  const auto m = harness::metrics(tr);
  const auto c = harness::cost_terms(tr);
  py::dict d;
  d["mode"] = til::to_string(tr.mode);
  d["t"] = arr(tr.t);
  d["twin_yaw_rate"] = arr(tr.twin_yaw_rate);
  d["twin_beta"] = arr(tr.twin_beta);
  d["yaw_rate"] = arr(tr.yaw_rate);
  d["beta"] = arr(tr.beta);
  d["command"] = arr(tr.command);
  d["steer"] = arr(tr.steer);
  d["delta"] = arr(tr.delta);
  d["error"] = arr(tr.error);
  d["vx"] = arr(tr.vx);
  d["diverged"] = tr.diverged;
  d["failure"] = tr.failure;
  d["rms_yaw_rate_deg_s"] = m.yaw_rate;
  d["rms_sideslip_deg"] = m.sideslip;
  d["rms_steer_rate_deg_s"] = m.steer_rate;
  d["f_bo"] = c.tracking + s.problem.gamma_u * c.steer_rate;
  d["g_c"] = harness::evaluate_constraint(tr, s.problem.beta_max);
  return d;
}

py::list history_list(const std::vector<opt::IterationRecord>& history) {
  py::list out;
  for (const auto& r : history)
    out.append(py::dict("n"_a = r.n, "theta"_a = r.theta, "f"_a = r.f, "g"_a = r.g, "feasible"_a = r.feasible,
                        "failed"_a = r.failed, "incumbent"_a = r.incumbent, "phase"_a = r.phase,
                        "selection_seconds"_a = r.selection_seconds));
  return out;
}

/// Python objective returning (f, g) or (f, g, failed).
opt::Evaluator wrap_objective(py::function fun) {
  return [fun](std::span<const double> theta) {
    py::object r = fun(py::array_t<double>(theta.size(), theta.data()));
    auto t = r.cast<py::tuple>();
    if (t.size() != 2 && t.size() != 3) throw DimensionError("objective must return (f, g) or (f, g, failed)");
    opt::Evaluation ev{t[0].cast<double>(), t[1].cast<double>(), t.size() == 3 && t[2].cast<bool>()};
    return ev;
  };
}

opt::Box make_box(std::vector<double> lower, std::vector<double> upper, std::optional<std::vector<bool>> log_scale) {
  opt::Box box{std::move(lower), std::move(upper), log_scale ? *log_scale : std::vector<bool>()};
  if (box.log_scale.empty()) box.log_scale.assign(box.lower.size(), false);
  box.validate();
  return box;
}

}  // namespace

PYBIND11_MODULE(_tiltune, m) {
  m.doc() = "Twin-in-the-Loop compensator tuning";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<SingularityError>(m, "SingularityError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<ConvergenceError>(m, "ConvergenceError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<DesignError>(m, "DesignError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  py::class_<til::PidGains>(m, "PidGains")
      .def(py::init<double, double, double>(), "kp"_a, "ti"_a = INFINITY, "td"_a = 0.0)
      .def_readwrite("kp", &til::PidGains::kp)
      .def_readwrite("ti", &til::PidGains::ti)
      .def_readwrite("td", &til::PidGains::td)
      .def("validate", &til::PidGains::validate)
      .def(py::self == py::self)
      .def("__repr__", [](const til::PidGains& g) {
        std::ostringstream s;
        s << "PidGains(kp=" << g.kp << ", ti=" << g.ti << ", td=" << g.td << ")";
        return s.str();
      });

  py::class_<Settings>(m, "Settings")
      .def(py::init(&harness::default_settings))
      .def_static("load", [](const std::string& path) { return harness::load_settings(path); }, "path"_a)
      .def_static("keys", &harness::setting_keys)
      .def("set", [](Settings& s, const std::string& key, py::handle value) { harness::apply_setting(s, key, as_setting(value)); },
           "key"_a, "value"_a)
      .def("update", [](Settings& s, const py::dict& values) {
        for (auto [k, v] : values) harness::apply_setting(s, k.cast<std::string>(), as_setting(v));
      })
      .def_readwrite("seed", &Settings::seed)
      .def_readwrite("gains", &Settings::gains)
      .def_readwrite("jobs", &Settings::jobs);

  m.def("methods", [] {
    std::vector<std::string> out;
    for (auto mth : harness::all_methods()) out.emplace_back(harness::to_string(mth));
    return out;
  });

  m.def("simulate", [](const Settings& s, const std::string& mode, std::optional<til::PidGains> gains) {
        til::TilSystem sys(s.setup, build_map(s), s.problem.maneuver.build());
        til::TilTrace tr;
        {
          py::gil_scoped_release nogil;
          tr = sys.run(til::mode_from_string(mode), gains ? *gains : s.gains, derive_seed(s.seed, 0));
        }
        return trace_dict(tr, s);
      }, "settings"_a, "mode"_a = "til", "gains"_a = py::none(),
      "Run the maneuver once; returns the trace arrays and the metrics.");

  m.def("tune", [](const Settings& s, const std::string& method) {
        harness::Scenario sc(s.setup, build_map(s), s.problem);
        harness::TuneResult r;
        {
          py::gil_scoped_release nogil;
          r = harness::tune(harness::method_from_string(method), sc, s.seed);
        }
        py::dict d("method"_a = method, "seed"_a = r.seed, "gains"_a = r.gains, "history"_a = history_list(r.history));
        py::list f_bo;
        for (const auto& e : r.evaluations) f_bo.append(e.f_bo);
        d["f_bo"] = f_bo;
        d["incumbent"] = arr(harness::incumbent_curve(r.evaluations));
        if (r.vrft) d["vrft"] = py::dict("gains"_a = r.vrft->gains, "pi_fallback"_a = r.vrft->pi_fallback,
                                         "fit_cost"_a = r.vrft->fit.cost);
        return d;
      }, "settings"_a, "method"_a = "smgo+vrft-prior");

  m.def("compare", [](const Settings& s, std::optional<std::vector<std::string>> methods, std::optional<std::size_t> repeats,
                      std::optional<std::size_t> budget, std::optional<std::string> out, bool keep_traces) {
        auto problem = s.problem;
        if (repeats) problem.repeats = *repeats;
        if (budget) problem.budget = *budget;
        harness::CompareOptions opts{s.methods, problem.repeats, s.seed, s.jobs, keep_traces};
        if (methods) {
          opts.methods.clear();
          for (const auto& name : *methods) opts.methods.push_back(harness::method_from_string(name));
        }
        harness::Scenario sc(s.setup, build_map(s), problem);
        harness::StudyReport report;
        {
          py::gil_scoped_release nogil;
          report = harness::compare(sc, opts);
          if (out) harness::write_study(*out, report);
        }
        py::dict d;
        for (const auto& ms : report.summaries) {
          std::vector<double> mean, std, infeasible;
          for (const auto& p : ms.curve) {
            mean.push_back(p.incumbent_mean);
            std.push_back(p.incumbent_std);
            infeasible.push_back(p.infeasible_mean);
          }
          d[harness::to_string(ms.method)] =
              py::dict("runs"_a = ms.runs, "failed_runs"_a = ms.failed_runs, "incumbent_mean"_a = arr(mean),
                       "incumbent_std"_a = arr(std), "infeasible_mean"_a = arr(infeasible),
                       "final_mean"_a = ms.final_incumbent_mean, "final_std"_a = ms.final_incumbent_std,
                       "selection_mean"_a = ms.selection_mean, "evaluation_mean"_a = ms.evaluation_mean);
        }
        return d;
      }, "settings"_a, "methods"_a = py::none(), "repeats"_a = py::none(), "budget"_a = py::none(),
      "out"_a = py::none(), "keep_traces"_a = false);

  m.def("static_map", [](const Settings& s) {
        const auto map = build_map(s);
        Eigen::MatrixXd t = map.table();
        py::array_t<double> table({t.rows(), t.cols()});
        auto view = table.mutable_unchecked<2>();
        for (Eigen::Index i = 0; i < t.rows(); ++i)
          for (Eigen::Index j = 0; j < t.cols(); ++j) view(i, j) = t(i, j);
        return py::make_tuple(arr(map.speeds()), arr(map.steers()), table);
      }, "settings"_a, "Static yaw-rate map of the twin: (speeds, steers, table).");

  m.def("prbs", [](std::size_t n, double amplitude, std::size_t period, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return arr(vrft::prbs(n, amplitude, period, rng));
      }, "n"_a, "amplitude"_a, "period"_a = 2, "seed"_a = 0);

  m.def("fit_pid", [](py::array_t<double, py::array::c_style | py::array::forcecast> s_delta,
                      py::array_t<double, py::array::c_style | py::array::forcecast> y_eps, double ts, double mr_hz,
                      double mw_hz, bool pi, double derivative_tau, double trim_seconds) {
        vrft::ExperimentData data{ts, vec(s_delta), vec(y_eps)};
        vrft::FitConfig cfg{pi ? vrft::Structure::Pi : vrft::Structure::Pid, derivative_tau, trim_seconds};
        const auto r = vrft::fit_pid(data, vrft::FilterSpec::from_prototypes(mr_hz, mw_hz, ts), cfg);
        return py::dict("gains"_a = r.gains, "linear"_a = r.linear, "cost"_a = r.cost, "samples"_a = r.samples);
      }, "s_delta"_a, "y_eps"_a, "ts"_a = 0.01, "mr_hz"_a = 3.5, "mw_hz"_a = 6.3, "pi"_a = false,
      "derivative_tau"_a = 0.01, "trim_seconds"_a = 1.0,
      "Least-squares PID fit from one open-loop experiment.");

  m.def("smgo_minimize", [](py::function fun, std::vector<double> lower, std::vector<double> upper, std::size_t budget,
                            std::uint64_t seed, std::optional<std::vector<bool>> log_scale,
                            std::optional<std::vector<double>> prior, double delta, double alpha, double beta,
                            std::optional<double> gamma_f, std::optional<double> gamma_g) {
        smgo::SmgoConfig cfg;
        cfg.budget = budget;
        cfg.seed = seed;
        cfg.delta = delta;
        cfg.alpha = alpha;
        cfg.beta = beta;
        cfg.gamma_f = gamma_f;
        cfg.gamma_g = gamma_g;
        const auto box = make_box(std::move(lower), std::move(upper), std::move(log_scale));
        return history_list(smgo::minimize(box, cfg, wrap_objective(fun), prior ? &*prior : nullptr));
      }, "fun"_a, "lower"_a, "upper"_a, "budget"_a = 60, "seed"_a = 0, "log_scale"_a = py::none(),
      "prior"_a = py::none(), "delta"_a = 0.5, "alpha"_a = 0.005, "beta"_a = 0.1, "gamma_f"_a = py::none(),
      "gamma_g"_a = py::none(), "Constrained set-membership minimization; fun(theta) -> (f, g[, failed]), g >= 0 feasible.");

  m.def("cbo_minimize", [](py::function fun, std::vector<double> lower, std::vector<double> upper, std::size_t budget,
                           std::uint64_t seed, std::optional<std::vector<bool>> log_scale,
                           std::optional<std::vector<double>> prior, double exploration_ratio) {
        cbo::CboConfig cfg;
        cfg.budget = budget;
        cfg.seed = seed;
        cfg.exploration_ratio = exploration_ratio;
        const auto box = make_box(std::move(lower), std::move(upper), std::move(log_scale));
        return history_list(cbo::minimize(box, cfg, wrap_objective(fun), prior ? &*prior : nullptr));
      }, "fun"_a, "lower"_a, "upper"_a, "budget"_a = 60, "seed"_a = 0, "log_scale"_a = py::none(),
      "prior"_a = py::none(), "exploration_ratio"_a = 0.5,
      "Constrained Bayesian optimization with GP surrogates of f and g.");
}
