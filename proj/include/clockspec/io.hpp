#pragma once

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clockspec/cavity.hpp"
#include "clockspec/fitlab.hpp"
#include "clockspec/hamiltonian.hpp"
#include "clockspec/spectro.hpp"

namespace clockspec {

// shortest representation with 12 significant digits; stable across runs
inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

namespace detail {

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  return out;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  return in;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (const char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace detail

inline void write_level_diagram_csv(const std::string& path,
                                    const std::vector<EigenSolution>& diagram) {
  auto out = detail::open_output(path);
  out << "field_T,level_index,energy_GHz,jz_expect,iz_expect\n";
  for (const EigenSolution& sol : diagram) {
    for (Eigen::Index k = 0; k < sol.energies_GHz.size(); ++k) {
      out << fmt_g(sol.field.magnitude_T) << ',' << k << ','
          << fmt_g(sol.energies_GHz[k]) << ',' << fmt_g(sol.jz_expect[k]) << ','
          << fmt_g(sol.iz_expect[k]) << '\n';
    }
  }
}

inline nlohmann::json level_diagram_json(const std::vector<EigenSolution>& diagram) {
  nlohmann::json rows = nlohmann::json::array();
  for (const EigenSolution& sol : diagram) {
    nlohmann::json row;
    row["field_T"] = sol.field.magnitude_T;
    row["energy_GHz"] = std::vector<double>(
        sol.energies_GHz.data(), sol.energies_GHz.data() + sol.energies_GHz.size());
    row["jz_expect"] = std::vector<double>(sol.jz_expect.data(),
                                           sol.jz_expect.data() + sol.jz_expect.size());
    row["iz_expect"] = std::vector<double>(sol.iz_expect.data(),
                                           sol.iz_expect.data() + sol.iz_expect.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_map_csv(const std::string& path, const TransmissionMap& map) {
  auto out = detail::open_output(path);
  out << "field_T,freq_GHz,re_t,im_t,abs_t\n";
  for (std::size_t k = 0; k < map.field_T.size(); ++k) {
    for (std::size_t q = 0; q < map.freq_GHz.size(); ++q) {
      const complexd v = map.values(static_cast<Eigen::Index>(q),
                                    static_cast<Eigen::Index>(k));
      out << fmt_g(map.field_T[k]) << ',' << fmt_g(map.freq_GHz[q]) << ','
          << fmt_g(v.real()) << ',' << fmt_g(v.imag()) << ',' << fmt_g(std::abs(v))
          << '\n';
    }
  }
}

inline TransmissionMap read_map_csv(const std::string& path) {
  auto in = detail::open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty map file: " + path);
  struct Row {
    double field, freq;
    complexd value;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() < 4) throw std::runtime_error("malformed map row: " + line);
    Row r{};
    double re = 0.0, im = 0.0;
    if (!detail::parse_double(fields[0], r.field) ||
        !detail::parse_double(fields[1], r.freq) ||
        !detail::parse_double(fields[2], re) || !detail::parse_double(fields[3], im)) {
      throw std::runtime_error("malformed map row: " + line);
    }
    r.value = complexd(re, im);
    rows.push_back(r);
  }
  TransmissionMap map;
  std::map<double, Eigen::Index> fields_seen, freqs_seen;
  for (const Row& r : rows) {
    fields_seen.emplace(r.field, 0);
    freqs_seen.emplace(r.freq, 0);
  }
  Eigen::Index idx = 0;
  for (auto& [f, slot] : fields_seen) {
    slot = idx++;
    map.field_T.push_back(f);
  }
  idx = 0;
  for (auto& [w, slot] : freqs_seen) {
    slot = idx++;
    map.freq_GHz.push_back(w);
  }
  if (rows.size() != fields_seen.size() * freqs_seen.size()) {
    throw std::runtime_error("map file is not a complete grid: " + path);
  }
  map.values.resize(static_cast<Eigen::Index>(map.freq_GHz.size()),
                    static_cast<Eigen::Index>(map.field_T.size()));
  for (const Row& r : rows) {
    map.values(freqs_seen[r.freq], fields_seen[r.field]) = r.value;
  }
  return map;
}

inline nlohmann::json map_json(const TransmissionMap& map) {
  nlohmann::json j;
  j["field_T"] = map.field_T;
  j["freq_GHz"] = map.freq_GHz;
  nlohmann::json re = nlohmann::json::array(), im = nlohmann::json::array();
  for (Eigen::Index k = 0; k < map.values.cols(); ++k) {
    std::vector<double> cr(static_cast<std::size_t>(map.values.rows()));
    std::vector<double> ci(static_cast<std::size_t>(map.values.rows()));
    for (Eigen::Index q = 0; q < map.values.rows(); ++q) {
      cr[static_cast<std::size_t>(q)] = map.values(q, k).real();
      ci[static_cast<std::size_t>(q)] = map.values(q, k).imag();
    }
    re.push_back(cr);
    im.push_back(ci);
  }
  j["re_t"] = std::move(re);  // outer index = field column
  j["im_t"] = std::move(im);
  j["info"] = {{"temperature_K", map.info.temperature_K},
               {"g0_GHz", map.info.g0_GHz},
               {"delta_field_T", map.info.delta_field_T},
               {"reference_field_T", map.info.reference_field_T},
               {"normalized", map.info.normalized}};
  return j;
}

inline void write_kappa_curve_csv(const std::string& path,
                                  const std::vector<double>& field_T,
                                  const std::vector<double>& kappa_eff_GHz) {
  if (field_T.size() != kappa_eff_GHz.size()) {
    throw std::invalid_argument("kappa curve length mismatch");
  }
  auto out = detail::open_output(path);
  out << "field_T,kappa_eff_GHz\n";
  for (std::size_t k = 0; k < field_T.size(); ++k) {
    out << fmt_g(field_T[k]) << ',' << fmt_g(kappa_eff_GHz[k]) << '\n';
  }
}

// columns x,y[,sigma]; a leading non-numeric line is treated as a header
inline Trace read_trace_csv(const std::string& path) {
  auto in = detail::open_input(path);
  Trace trace;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto fields = detail::split_csv_line(line);
    double x = 0.0;
    if (!detail::parse_double(fields[0], x)) {
      if (first) {
        first = false;
        continue;  // header row
      }
      throw std::runtime_error("malformed trace row: " + line);
    }
    first = false;
    if (fields.size() < 2) throw std::runtime_error("trace rows need x,y: " + line);
    double y = 0.0;
    if (!detail::parse_double(fields[1], y)) {
      throw std::runtime_error("malformed trace row: " + line);
    }
    trace.x.push_back(x);
    trace.y.push_back(y);
    if (fields.size() >= 3 && !fields[2].empty()) {
      double s = 0.0;
      if (!detail::parse_double(fields[2], s)) {
        throw std::runtime_error("malformed trace row: " + line);
      }
      trace.sigma.push_back(s);
    }
  }
  if (!trace.sigma.empty() && trace.sigma.size() != trace.x.size()) {
    throw std::runtime_error("trace has uncertainties on only some rows: " + path);
  }
  return trace;
}

inline nlohmann::json fit_result_json(const FitResult& fit) {
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t k = 0; k < fit.parameter_names.size(); ++k) {
    params.push_back({{"name", fit.parameter_names[k]},
                      {"value", fit.values[static_cast<Eigen::Index>(k)]},
                      {"std_error", fit.std_errors[static_cast<Eigen::Index>(k)]},
                      {"unit", fit.units[k]}});
  }
  return {{"parameters", std::move(params)},
          {"residual_norm", fit.residual_norm},
          {"converged", fit.converged},
          {"iterations", fit.iterations},
          {"message", fit.message}};
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  auto out = detail::open_output(path);
  out << j.dump(2) << '\n';
}

// root-mean-square magnitude difference between two maps on identical grids
inline double map_rms_difference(const TransmissionMap& a, const TransmissionMap& b) {
  if (a.field_T != b.field_T || a.freq_GHz != b.freq_GHz) {
    throw std::invalid_argument("maps are on different grids");
  }
  return std::sqrt((a.values - b.values).cwiseAbs2().mean());
}

}  // namespace clockspec
