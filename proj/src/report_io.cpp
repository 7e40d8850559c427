#include "bessopm/report_io.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bessopm/errors.hpp"

namespace bessopm {

namespace {

using nlohmann::json;

json metrics_to_json(const SummaryMetrics& m) {
  json j;
  j["max_soc_dev"] = m.max_soc_dev;
  j["mean_soc_dev"] = m.mean_soc_dev;
  j["max_temp_dev"] = m.max_temp_dev;
  j["mean_temp_dev"] = m.mean_temp_dev;
  j["total_energy_loss_j"] = m.total_energy_loss_j;
  j["violation_durations_s"] = m.violation_durations_s;
  j["solve_runtime_mean_s"] = m.solve_runtime_mean_s;
  j["solve_runtime_min_s"] = m.solve_runtime_min_s;
  j["solve_runtime_max_s"] = m.solve_runtime_max_s;
  j["solve_count"] = m.solve_count;
  j["time_to_balance_s"] = m.time_to_balance_s;
  return j;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc())
    throw ConfigError("bad number in series.csv: '" + s + "'");
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_report(const SimulationReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);

  json j;
  j["scenario"] = report.scenario_echo;
  j["n"] = report.n;
  j["full_series"] = report.full_series;
  j["dt"] = report.dt;
  j["duration"] = report.duration;
  j["opm_period"] = report.opm_period;
  j["soc_band"] = report.soc_band;
  j["temp_band"] = report.temp_band;
  j["summary"] = metrics_to_json(metrics(report));
  j["series_file"] = "series.csv";

  j["solves"] = json::array();
  for (const auto& s : report.solves) {
    json rec;
    rec["t"] = s.t;
    rec["runtime_s"] = s.runtime_s;
    rec["iterations"] = s.iterations;
    rec["theta"] = {s.theta[0], s.theta[1], s.theta[2]};
    std::vector<double> cov(9);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cov[3 * r + c] = s.covariance(r, c);
    rec["covariance"] = cov;
    rec["lambda_used"] = s.lambda_used;
    j["solves"].push_back(std::move(rec));
  }

  j["violations"] = json::array();
  for (const auto& v : report.violations)
    j["violations"].push_back({v.t, v.mask});
  j["faults"] = json::array();
  for (const auto& f : report.faults)
    j["faults"].push_back({{"t", f.t}, {"what", f.what}});
  j["mode_switch_times"] = report.mode_switch_times;

  auto quant = [](const std::vector<Quantiles>& qs) {
    json arr = json::array();
    for (const auto& q : qs)
      arr.push_back({q.min, q.q25, q.median, q.q75, q.max});
    return arr;
  };
  j["soc_quantiles"] = quant(report.soc_quantiles);
  j["temp_quantiles"] = quant(report.temp_quantiles);

  std::ofstream out(dir + "/report.json");
  if (!out) throw SimulationFault("cannot write " + dir + "/report.json");
  out << j.dump(2) << "\n";

  std::ofstream csv(dir + "/series.csv");
  if (!csv) throw SimulationFault("cannot write " + dir + "/series.csv");
  csv << "t,p_pred,p_act,p_supplied,v_bus,theta1,theta2,theta3,loss_w,"
         "socdev_max,tempdev_max";
  if (report.full_series) {
    for (int k = 1; k <= report.n; ++k) csv << ",q_" << k;
    for (int k = 1; k <= report.n; ++k) csv << ",T_" << k;
    for (int k = 1; k <= report.n; ++k) csv << ",mu_" << k;
  }
  csv << "\n";
  for (const auto& s : report.steps) {
    csv << format_double(s.t) << ',' << format_double(s.p_pred) << ','
        << format_double(s.p_act) << ',' << format_double(s.p_supplied) << ','
        << format_double(s.v_bus) << ',' << format_double(s.theta[0]) << ','
        << format_double(s.theta[1]) << ',' << format_double(s.theta[2]) << ','
        << format_double(s.loss_w) << ',' << format_double(s.socdev_max) << ','
        << format_double(s.tempdev_max);
    if (report.full_series) {
      for (int k = 0; k < report.n; ++k) csv << ',' << format_double(s.soc[k]);
      for (int k = 0; k < report.n; ++k) csv << ',' << format_double(s.temp[k]);
      for (int k = 0; k < report.n; ++k) csv << ',' << format_double(s.mu[k]);
    }
    csv << "\n";
  }
}

SimulationReport read_report(const std::string& dir) {
  std::ifstream in(dir + "/report.json");
  if (!in) throw ConfigError("cannot open " + dir + "/report.json");
  json j;
  in >> j;

  SimulationReport report;
  report.scenario_echo = j.at("scenario");
  report.n = j.at("n").get<int>();
  report.full_series = j.at("full_series").get<bool>();
  report.dt = j.at("dt").get<double>();
  report.duration = j.at("duration").get<double>();
  report.opm_period = j.at("opm_period").get<double>();
  report.soc_band = j.at("soc_band").get<double>();
  report.temp_band = j.at("temp_band").get<double>();

  for (const auto& rec : j.at("solves")) {
    SolveRecord s;
    s.t = rec.at("t").get<double>();
    s.runtime_s = rec.at("runtime_s").get<double>();
    s.iterations = rec.at("iterations").get<int>();
    const auto theta = rec.at("theta").get<std::vector<double>>();
    s.theta = Eigen::Vector3d(theta[0], theta[1], theta[2]);
    const auto cov = rec.at("covariance").get<std::vector<double>>();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) s.covariance(r, c) = cov[3 * r + c];
    s.lambda_used = rec.at("lambda_used").get<double>();
    report.solves.push_back(s);
  }
  for (const auto& rec : j.at("violations"))
    report.violations.push_back(
        {rec.at(0).get<double>(), rec.at(1).get<std::uint32_t>()});
  for (const auto& rec : j.at("faults"))
    report.faults.push_back(
        {rec.at("t").get<double>(), rec.at("what").get<std::string>()});
  report.mode_switch_times =
      j.at("mode_switch_times").get<std::vector<double>>();
  auto read_quant = [&](const char* key, std::vector<Quantiles>& qs) {
    for (const auto& rec : j.at(key)) {
      qs.push_back({rec.at(0).get<double>(), rec.at(1).get<double>(),
                    rec.at(2).get<double>(), rec.at(3).get<double>(),
                    rec.at(4).get<double>()});
    }
  };
  read_quant("soc_quantiles", report.soc_quantiles);
  read_quant("temp_quantiles", report.temp_quantiles);

  std::ifstream csv(dir + "/" + j.at("series_file").get<std::string>());
  if (!csv) throw ConfigError("cannot open series file in " + dir);
  std::string line;
  if (!std::getline(csv, line)) throw ConfigError("empty series.csv");
  const auto header = split_csv_line(line);
  const std::size_t base_cols = 11;
  const std::size_t expect =
      base_cols + (report.full_series ? 3 * static_cast<std::size_t>(report.n) : 0);
  if (header.size() != expect)
    throw ConfigError("series.csv header has " + std::to_string(header.size()) +
                      " columns, expected " + std::to_string(expect));
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto cols = split_csv_line(line);
    if (cols.size() != expect) throw ConfigError("ragged row in series.csv");
    StepRecord s;
    s.t = parse_double(cols[0]);
    s.p_pred = parse_double(cols[1]);
    s.p_act = parse_double(cols[2]);
    s.p_supplied = parse_double(cols[3]);
    s.v_bus = parse_double(cols[4]);
    s.theta = Eigen::Vector3d(parse_double(cols[5]), parse_double(cols[6]),
                              parse_double(cols[7]));
    s.loss_w = parse_double(cols[8]);
    s.socdev_max = parse_double(cols[9]);
    s.tempdev_max = parse_double(cols[10]);
    if (report.full_series) {
      s.soc.resize(report.n);
      s.temp.resize(report.n);
      s.mu.resize(report.n);
      for (int k = 0; k < report.n; ++k)
        s.soc[k] = parse_double(cols[base_cols + k]);
      for (int k = 0; k < report.n; ++k)
        s.temp[k] = parse_double(cols[base_cols + report.n + k]);
      for (int k = 0; k < report.n; ++k)
        s.mu[k] = parse_double(cols[base_cols + 2 * report.n + k]);
    }
    report.steps.push_back(std::move(s));
  }
  return report;
}

}  // namespace bessopm
