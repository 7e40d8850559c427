#include "bessopm/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "bessopm/errors.hpp"
#include "bessopm/rng.hpp"

namespace bessopm {

namespace {

using nlohmann::json;

constexpr std::uint64_t kSocTag = 0x736f63;   // init draw streams
constexpr std::uint64_t kTempTag = 0x746d70;
constexpr std::uint64_t kResTag = 0x726573;

// Wraps one JSON object and tracks key consumption so typos surface as hard
// errors with their full path.
class Strict {
public:
  Strict(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  ~Strict() = default;

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, const T& fallback) {
    mark(key);
    if (!j_.contains(key)) return fallback;
    return read<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    mark(key);
    if (!j_.contains(key)) throw ConfigError(path_ + "." + key + ": missing");
    return read<T>(key);
  }

  const json& child(const std::string& key) {
    mark(key);
    static const json empty = json::object();
    return j_.contains(key) ? j_.at(key) : empty;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key))
        throw ConfigError(path_ + "." + key + ": unknown key");
    }
  }

  const std::string& path() const { return path_; }

private:
  template <typename T>
  T read(const std::string& key) const {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  void mark(const std::string& key) { seen_.insert(key); }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Bounds read_bounds(Strict& s, const std::string& key, Bounds fallback) {
  const auto v = s.get<std::vector<double>>(
      key, std::vector<double>{fallback.min, fallback.max});
  if (v.size() != 2)
    throw ConfigError(s.path() + "." + key + ": expected [min,max]");
  return Bounds{v[0], v[1]};
}

InitSpec read_init(const json& j, const std::string& path, InitSpec fallback) {
  if (j.empty()) return fallback;
  Strict s(j, path);
  InitSpec spec;
  int forms = 0;
  if (s.has("value")) {
    spec.kind = InitSpec::Kind::Constant;
    spec.value = s.get<double>("value", 0.0);
    ++forms;
  }
  if (s.has("uniform")) {
    const auto u = s.get<std::vector<double>>("uniform", {});
    if (u.size() != 2) throw ConfigError(path + ".uniform: expected [low,high]");
    spec.kind = InitSpec::Kind::Uniform;
    spec.low = u[0];
    spec.high = u[1];
    if (!(spec.low <= spec.high))
      throw ConfigError(path + ".uniform: low must be <= high");
    ++forms;
  }
  if (s.has("values")) {
    spec.kind = InitSpec::Kind::Values;
    spec.values = s.get<std::vector<double>>("values", {});
    ++forms;
  }
  if (forms != 1)
    throw ConfigError(path + ": give exactly one of value | uniform | values");
  s.finish();
  return spec;
}

json init_to_json(const InitSpec& spec) {
  switch (spec.kind) {
    case InitSpec::Kind::Constant:
      return json{{"value", spec.value}};
    case InitSpec::Kind::Uniform:
      return json{{"uniform", {spec.low, spec.high}}};
    case InitSpec::Kind::Values:
      return json{{"values", spec.values}};
  }
  return {};
}

}  // namespace

Eigen::VectorXd InitSpec::materialize(int n, std::uint64_t stream_key) const {
  Eigen::VectorXd v(n);
  switch (kind) {
    case Kind::Constant:
      v.setConstant(value);
      break;
    case Kind::Uniform: {
      SplitMix64 rng(stream_key);
      for (int j = 0; j < n; ++j) v[j] = rng.uniform(low, high);
      break;
    }
    case Kind::Values:
      if (static_cast<int>(values.size()) != n)
        throw ConfigError("explicit init list length " +
                          std::to_string(values.size()) +
                          " does not match cell count " + std::to_string(n));
      for (int j = 0; j < n; ++j) v[j] = values[j];
      break;
  }
  return v;
}

void Scenario::validate() const {
  if (n < 1) throw ConfigError("pack.n must be >= 1");
  cell.validate();
  policy.validate();
  opm.validate();
  enki.validate();
  demand.validate();
  if (!(duration > 0.0)) throw ConfigError("sim.duration must be > 0");
  const double ratio = duration / opm.dt;
  if (std::abs(ratio - std::llround(ratio)) > 1e-9)
    throw ConfigError("sim.duration must be a multiple of opm.dt");
  if (!(opm_period >= opm.dt))
    throw ConfigError("sim.opm_period must be >= opm.dt");
  if (!(low_level.kp >= 0.0) || !(low_level.ki >= 0.0))
    throw ConfigError("low_level gains must be >= 0");
  if (!(low_level.v_ref > 0.0)) throw ConfigError("low_level.v_ref must be > 0");
  if (!(low_level.integral_limit > 0.0))
    throw ConfigError("low_level.integral_limit must be > 0");
  if (low_level.bus_mode == BusMode::Dynamic && !(low_level.bus_capacitance > 0.0))
    throw ConfigError("low_level.bus_capacitance must be > 0 in dynamic mode");
  // the init draws must produce usable states
  build_pack().validate();
  const PackState x0 = initial_state();
  for (int j = 0; j < n; ++j) {
    if (!(x0.soc[j] >= 0.0 && x0.soc[j] <= 1.0))
      throw ConfigError("pack.init_soc: initial SoC outside [0,1]");
    if (!(x0.temp[j] > 0.0))
      throw ConfigError("pack.init_temp: initial temperature must be > 0");
  }
}

PackParameters Scenario::build_pack() const {
  PackParameters pack;
  pack.cells.assign(n, cell);
  const Eigen::VectorXd res = init_res_base.materialize(n, mix_key(seed, kResTag));
  for (int j = 0; j < n; ++j) pack.cells[j].res_base = res[j];
  return pack;
}

PackState Scenario::initial_state() const {
  PackState x;
  x.soc = init_soc.materialize(n, mix_key(seed, kSocTag));
  x.temp = init_temp.materialize(n, mix_key(seed, kTempTag));
  return x;
}

Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario sc;
  Strict root(j, "scenario");
  sc.name = root.get<std::string>("name", sc.name);
  sc.seed = root.get<std::uint64_t>("seed", sc.seed);

  {
    Strict pack(root.child("pack"), "pack");
    sc.n = pack.get<int>("n", sc.n);
    sc.cell.capacity_ah = pack.get<double>("capacity_ah", sc.cell.capacity_ah);
    sc.cell.ocv_coeffs =
        pack.get<std::vector<double>>("ocv_coeffs", sc.cell.ocv_coeffs);
    sc.cell.res_base = pack.get<double>("res_base", sc.cell.res_base);
    sc.cell.res_exp_coeff =
        pack.get<double>("res_exp_coeff", sc.cell.res_exp_coeff);
    sc.cell.res_exp_rate = pack.get<double>("res_exp_rate", sc.cell.res_exp_rate);
    sc.cell.converter_res = pack.get<double>("converter_res", sc.cell.converter_res);
    sc.cell.heat_capacity = pack.get<double>("heat_capacity", sc.cell.heat_capacity);
    sc.cell.conv_resistance =
        pack.get<double>("conv_resistance", sc.cell.conv_resistance);
    sc.cell.env_temp = pack.get<double>("env_temp", sc.cell.env_temp);
    sc.cell.soc_limits = read_bounds(pack, "soc_limits", sc.cell.soc_limits);
    sc.cell.current_limits =
        read_bounds(pack, "current_limits", sc.cell.current_limits);
    sc.cell.temp_limits = read_bounds(pack, "temp_limits", sc.cell.temp_limits);
    sc.init_res_base.value = sc.cell.res_base;
    sc.init_soc = read_init(pack.child("init_soc"), "pack.init_soc", sc.init_soc);
    sc.init_temp =
        read_init(pack.child("init_temp"), "pack.init_temp", sc.init_temp);
    sc.init_res_base = read_init(pack.child("init_res_base"),
                                 "pack.init_res_base", sc.init_res_base);
    pack.finish();
  }

  {
    Strict pol(root.child("policy"), "policy");
    sc.policy.xi_q = pol.get<double>("xi_q", sc.policy.xi_q);
    sc.policy.xi_t = pol.get<double>("xi_t", sc.policy.xi_t);
    sc.policy.literal_phi = pol.get<bool>("literal_phi", sc.policy.literal_phi);
    pol.finish();
  }

  {
    Strict opm(root.child("opm"), "opm");
    sc.opm.horizon = opm.get<int>("horizon", sc.opm.horizon);
    sc.opm.dt = opm.get<double>("dt", sc.opm.dt);
    sc.opm.soc_band = opm.get<double>("soc_band", sc.opm.soc_band);
    sc.opm.temp_band = opm.get<double>("temp_band", sc.opm.temp_band);
    const auto nominal = opm.get<std::vector<double>>(
        "theta_nominal", {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
    if (nominal.size() != 3)
      throw ConfigError("opm.theta_nominal: expected 3 entries");
    sc.opm.theta_nominal = Eigen::Vector3d(nominal[0], nominal[1], nominal[2]);
    if (opm.has("theta_prior_weight")) {
      const json w = opm.child("theta_prior_weight");
      if (w.is_number()) {
        sc.opm.theta_prior_weight =
            w.get<double>() * Eigen::Matrix3d::Identity();
      } else {
        const auto rows = w.get<std::vector<std::vector<double>>>();
        if (rows.size() != 3 || rows[0].size() != 3)
          throw ConfigError("opm.theta_prior_weight: expected scalar or 3x3");
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c)
            sc.opm.theta_prior_weight(r, c) = rows[r][c];
      }
    }
    sc.opm.penalty_weight = opm.get<double>("penalty_weight", sc.opm.penalty_weight);
    if (opm.has("penalty_class_scale")) {
      Strict pcs(opm.child("penalty_class_scale"), "opm.penalty_class_scale");
      sc.opm.penalty_class_scale[0] =
          pcs.get<double>("temp_bounds", sc.opm.penalty_class_scale[0]);
      sc.opm.penalty_class_scale[1] =
          pcs.get<double>("soc_bounds", sc.opm.penalty_class_scale[1]);
      sc.opm.penalty_class_scale[2] =
          pcs.get<double>("current_bounds", sc.opm.penalty_class_scale[2]);
      sc.opm.penalty_class_scale[3] =
          pcs.get<double>("soc_band", sc.opm.penalty_class_scale[3]);
      sc.opm.penalty_class_scale[4] =
          pcs.get<double>("temp_band", sc.opm.penalty_class_scale[4]);
      pcs.finish();
    } else {
      opm.child("penalty_class_scale");
    }
    sc.opm.p_floor = opm.get<double>("p_floor", sc.opm.p_floor);
    sc.opm.smooth_barrier = opm.get<bool>("smooth_barrier", sc.opm.smooth_barrier);
    if (opm.has("barrier_g")) {
      Strict b(opm.child("barrier_g"), "opm.barrier_g");
      sc.opm.barrier_g.alpha = b.get<double>("alpha", sc.opm.barrier_g.alpha);
      sc.opm.barrier_g.beta = b.get<double>("beta", sc.opm.barrier_g.beta);
      b.finish();
    } else {
      opm.child("barrier_g");
    }
    if (opm.has("barrier_e")) {
      Strict b(opm.child("barrier_e"), "opm.barrier_e");
      sc.opm.barrier_e.alpha = b.get<double>("alpha", sc.opm.barrier_e.alpha);
      sc.opm.barrier_e.beta = b.get<double>("beta", sc.opm.barrier_e.beta);
      b.finish();
    } else {
      opm.child("barrier_e");
    }
    // default loss weight normalizes the loss block at the demand profile's
    // nominal power; read after demand below if absent
    sc.opm.loss_weight = opm.get<double>("loss_weight", 0.0);
    opm.finish();
  }

  {
    Strict enki(root.child("enki"), "enki");
    sc.enki.particles = enki.get<int>("particles", sc.enki.particles);
    sc.enki.max_iters = enki.get<int>("max_iters", sc.enki.max_iters);
    const std::string mode = enki.get<std::string>("lambda_mode", "adaptive");
    if (mode == "adaptive") {
      sc.enki.lambda_mode = LambdaMode::Adaptive;
    } else if (mode == "fixed") {
      sc.enki.lambda_mode = LambdaMode::FixedGeometric;
    } else {
      throw ConfigError("enki.lambda_mode: expected adaptive|fixed");
    }
    sc.enki.ess_target = enki.get<double>("ess_target", sc.enki.ess_target);
    sc.enki.lambda_growth = enki.get<double>("lambda_growth", sc.enki.lambda_growth);
    sc.enki.project_simplex =
        enki.get<bool>("project_simplex", sc.enki.project_simplex);
    const std::string exec = enki.get<std::string>("execution", "parallel");
    if (exec == "parallel") {
      sc.enki.execution = Execution::Parallel;
    } else if (exec == "serial") {
      sc.enki.execution = Execution::Serial;
    } else {
      throw ConfigError("enki.execution: expected parallel|serial");
    }
    sc.enki.loss_precision_override =
        enki.get<double>("loss_precision", sc.enki.loss_precision_override);
    sc.enki.penalty_precision_override = enki.get<double>(
        "penalty_precision", sc.enki.penalty_precision_override);
    enki.finish();
  }

  {
    Strict ll(root.child("low_level"), "low_level");
    sc.low_level.kp = ll.get<double>("kp", sc.low_level.kp);
    sc.low_level.ki = ll.get<double>("ki", sc.low_level.ki);
    sc.low_level.v_ref = ll.get<double>("v_ref", sc.low_level.v_ref);
    const std::string mode = ll.get<std::string>("bus_mode", "ideal");
    if (mode == "ideal") {
      sc.low_level.bus_mode = BusMode::Ideal;
    } else if (mode == "dynamic") {
      sc.low_level.bus_mode = BusMode::Dynamic;
    } else {
      throw ConfigError("low_level.bus_mode: expected ideal|dynamic");
    }
    sc.low_level.bus_gain = ll.get<double>("bus_gain", sc.low_level.bus_gain);
    sc.low_level.bus_capacitance =
        ll.get<double>("bus_capacitance", sc.low_level.bus_capacitance);
    sc.low_level.integral_limit =
        ll.get<double>("integral_limit", sc.low_level.integral_limit);
    ll.finish();
  }

  {
    Strict dem(root.child("demand"), "demand");
    sc.demand.nominal = dem.get<double>("nominal", sc.demand.nominal);
    sc.demand.switch_period =
        dem.get<double>("switch_period", sc.demand.switch_period);
    sc.demand.noise_halfwidth =
        dem.get<double>("noise_halfwidth", sc.demand.noise_halfwidth);
    sc.demand.noise_correlation =
        dem.get<double>("noise_correlation", sc.demand.noise_correlation);
    if (dem.has("events")) {
      const json ev = dem.child("events");
      if (!ev.is_array()) throw ConfigError("demand.events: expected an array");
      for (std::size_t i = 0; i < ev.size(); ++i) {
        Strict e(ev.at(i), "demand.events[" + std::to_string(i) + "]");
        StepEvent event;
        event.time = e.require<double>("time");
        event.power = e.require<double>("power");
        e.finish();
        sc.demand.events.push_back(event);
      }
    } else {
      dem.child("events");
    }
    dem.finish();
  }

  {
    Strict sim(root.child("sim"), "sim");
    sc.duration = sim.get<double>("duration", sc.duration);
    sc.opm_period = sim.get<double>("opm_period", sc.opm_period);
    sc.warm_start = sim.get<bool>("warm_start", sc.warm_start);
    sc.full_series_forced = sim.get<bool>("full_series", false);
    sim.finish();
  }

  root.finish();

  if (!(sc.opm.loss_weight > 0.0)) {
    const double p = std::max(std::abs(sc.demand.nominal), sc.opm.p_floor);
    sc.opm.loss_weight = 1.0 / (p * p);
  }

  sc.validate();
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scenario parse error in " + path + ": " + e.what());
  }
  return scenario_from_json(j);
}

nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  auto& pack = j["pack"];
  pack["n"] = s.n;
  pack["capacity_ah"] = s.cell.capacity_ah;
  pack["ocv_coeffs"] = s.cell.ocv_coeffs;
  pack["res_base"] = s.cell.res_base;
  pack["res_exp_coeff"] = s.cell.res_exp_coeff;
  pack["res_exp_rate"] = s.cell.res_exp_rate;
  pack["converter_res"] = s.cell.converter_res;
  pack["heat_capacity"] = s.cell.heat_capacity;
  pack["conv_resistance"] = s.cell.conv_resistance;
  pack["env_temp"] = s.cell.env_temp;
  pack["soc_limits"] = {s.cell.soc_limits.min, s.cell.soc_limits.max};
  pack["current_limits"] = {s.cell.current_limits.min, s.cell.current_limits.max};
  pack["temp_limits"] = {s.cell.temp_limits.min, s.cell.temp_limits.max};
  pack["init_soc"] = init_to_json(s.init_soc);
  pack["init_temp"] = init_to_json(s.init_temp);
  pack["init_res_base"] = init_to_json(s.init_res_base);
  auto& pol = j["policy"];
  pol["xi_q"] = s.policy.xi_q;
  pol["xi_t"] = s.policy.xi_t;
  pol["literal_phi"] = s.policy.literal_phi;
  auto& opm = j["opm"];
  opm["horizon"] = s.opm.horizon;
  opm["dt"] = s.opm.dt;
  opm["soc_band"] = s.opm.soc_band;
  opm["temp_band"] = s.opm.temp_band;
  opm["theta_nominal"] = {s.opm.theta_nominal[0], s.opm.theta_nominal[1],
                          s.opm.theta_nominal[2]};
  std::vector<std::vector<double>> w(3, std::vector<double>(3));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) w[r][c] = s.opm.theta_prior_weight(r, c);
  opm["theta_prior_weight"] = w;
  opm["loss_weight"] = s.opm.loss_weight;
  opm["penalty_weight"] = s.opm.penalty_weight;
  opm["penalty_class_scale"] = {{"temp_bounds", s.opm.penalty_class_scale[0]},
                                {"soc_bounds", s.opm.penalty_class_scale[1]},
                                {"current_bounds", s.opm.penalty_class_scale[2]},
                                {"soc_band", s.opm.penalty_class_scale[3]},
                                {"temp_band", s.opm.penalty_class_scale[4]}};
  opm["barrier_g"] = {{"alpha", s.opm.barrier_g.alpha},
                      {"beta", s.opm.barrier_g.beta}};
  opm["barrier_e"] = {{"alpha", s.opm.barrier_e.alpha},
                      {"beta", s.opm.barrier_e.beta}};
  opm["p_floor"] = s.opm.p_floor;
  opm["smooth_barrier"] = s.opm.smooth_barrier;
  auto& enki = j["enki"];
  enki["particles"] = s.enki.particles;
  enki["max_iters"] = s.enki.max_iters;
  enki["lambda_mode"] =
      s.enki.lambda_mode == LambdaMode::Adaptive ? "adaptive" : "fixed";
  enki["ess_target"] = s.enki.ess_target;
  enki["lambda_growth"] = s.enki.lambda_growth;
  enki["project_simplex"] = s.enki.project_simplex;
  enki["execution"] =
      s.enki.execution == Execution::Parallel ? "parallel" : "serial";
  enki["loss_precision"] = s.enki.loss_precision_override;
  enki["penalty_precision"] = s.enki.penalty_precision_override;
  auto& ll = j["low_level"];
  ll["kp"] = s.low_level.kp;
  ll["ki"] = s.low_level.ki;
  ll["v_ref"] = s.low_level.v_ref;
  ll["bus_mode"] = s.low_level.bus_mode == BusMode::Ideal ? "ideal" : "dynamic";
  ll["bus_gain"] = s.low_level.bus_gain;
  ll["bus_capacitance"] = s.low_level.bus_capacitance;
  ll["integral_limit"] = s.low_level.integral_limit;
  auto& dem = j["demand"];
  dem["nominal"] = s.demand.nominal;
  dem["switch_period"] = s.demand.switch_period;
  dem["noise_halfwidth"] = s.demand.noise_halfwidth;
  dem["noise_correlation"] = s.demand.noise_correlation;
  dem["events"] = nlohmann::json::array();
  for (const auto& e : s.demand.events)
    dem["events"].push_back({{"time", e.time}, {"power", e.power}});
  auto& sim = j["sim"];
  sim["duration"] = s.duration;
  sim["opm_period"] = s.opm_period;
  sim["warm_start"] = s.warm_start;
  sim["full_series"] = s.full_series_forced;
  return j;
}

}  // namespace bessopm
