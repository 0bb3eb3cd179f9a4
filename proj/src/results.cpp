// SPDX-License-Identifier: Apache-2.0
#include "mtwb/results.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mtwb/errors.hpp"

namespace mtwb {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_results_csv(const std::filesystem::path& path, std::vector<ResultRecord> records) {
  std::sort(records.begin(), records.end(), [](const ResultRecord& a, const ResultRecord& b) {
    if (a.scheme != b.scheme) return a.scheme < b.scheme;
    return a.coordinate < b.coordinate;
  });
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open results file for writing: " + path.string());
  os << kResultsHeader << "\n";
  for (const auto& r : records) {
    os << r.scheme << ',' << fmt_double(r.coordinate) << ',' << r.metric << ','
       << fmt_double(r.value) << ',' << r.preset << ',' << r.seed << ',' << fmt_double(r.seconds)
       << ',' << r.params << ',' << r.flops << "\n";
  }
  if (!os) throw IoError("results write failed: " + path.string());
}

std::vector<ResultRecord> read_results_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open results file: " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kResultsHeader) {
    throw IoError("results file " + path.string() + " has an unexpected header");
  }
  std::vector<ResultRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 9) throw IoError("malformed results row: " + line);
    ResultRecord r;
    r.scheme = f[0];
    r.coordinate = std::stod(f[1]);
    r.metric = f[2];
    r.value = std::stod(f[3]);
    r.preset = f[4];
    r.seed = std::stoull(f[5]);
    r.seconds = std::stod(f[6]);
    r.params = std::stoll(f[7]);
    r.flops = std::stoull(f[8]);
    out.push_back(std::move(r));
  }
  return out;
}

CompareReport compare_results(const std::vector<std::filesystem::path>& files) {
  std::vector<ResultRecord> all;
  for (const auto& f : files) {
    auto recs = read_results_csv(f);
    all.insert(all.end(), recs.begin(), recs.end());
  }
  if (all.empty()) throw ConfigError("compare: no records");
  CompareReport rep;
  rep.metric = all.front().metric;
  for (const auto& r : all) {
    if (r.metric != rep.metric) {
      throw ConfigError("compare: mixed metrics '" + rep.metric + "' and '" + r.metric + "'");
    }
  }
  const bool lower_better = rep.metric == "nmse_db";

  std::map<std::string, std::map<double, double>> by_scheme;
  std::set<double> coords;
  for (const auto& r : all) {
    by_scheme[r.scheme][r.coordinate] = r.value;
    coords.insert(r.coordinate);
  }
  // Constant reference lines: schemes with only a coordinate-0 row while the
  // sweep spans more.
  std::set<double> sweep_coords = coords;
  if (sweep_coords.size() > 1) sweep_coords.erase(0.0);
  for (auto& [scheme, vals] : by_scheme) {
    if (vals.size() == 1 && vals.count(0.0) && sweep_coords.size() >= 1 && !coords.empty() &&
        sweep_coords != std::set<double>{0.0}) {
      const double v = vals.begin()->second;
      for (double c : sweep_coords) vals[c] = v;
    }
  }

  rep.coordinates.assign(sweep_coords.begin(), sweep_coords.end());
  std::ostringstream table;
  table << "metric: " << rep.metric << (lower_better ? " (lower is better)\n" : " (higher is better)\n");
  std::vector<std::vector<std::string>> prev_order_holder;
  for (double c : rep.coordinates) {
    std::vector<std::pair<double, std::string>> here;
    for (const auto& [scheme, vals] : by_scheme) {
      auto it = vals.find(c);
      if (it != vals.end()) here.emplace_back(it->second, scheme);
    }
    std::sort(here.begin(), here.end(), [&](const auto& a, const auto& b) {
      return lower_better ? a.first < b.first : a.first > b.first;
    });
    std::vector<std::string> order;
    table << "  coordinate " << c << ": ";
    for (std::size_t i = 0; i < here.size(); ++i) {
      table << (i ? " > " : "") << here[i].second << " (" << here[i].first << ")";
      order.push_back(here[i].second);
    }
    table << "\n";
    rep.ranking.push_back(order);
  }

  // Pairwise order flips between adjacent coordinates.
  auto rank_of = [](const std::vector<std::string>& order, const std::string& s) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (order[i] == s) return static_cast<int>(i);
    }
    return -1;
  };
  for (std::size_t ci = 1; ci < rep.ranking.size(); ++ci) {
    const auto& prev = rep.ranking[ci - 1];
    const auto& cur = rep.ranking[ci];
    for (std::size_t a = 0; a < prev.size(); ++a) {
      for (std::size_t b = a + 1; b < prev.size(); ++b) {
        const int pa = rank_of(cur, prev[a]);
        const int pb = rank_of(cur, prev[b]);
        if (pa < 0 || pb < 0) continue;
        if (pa > pb) {
          rep.crossovers.push_back({prev[a], prev[b], rep.coordinates[ci]});
        }
      }
    }
  }
  if (rep.crossovers.empty()) {
    table << "crossovers: none\n";
  } else {
    for (const auto& x : rep.crossovers) {
      table << "crossover at coordinate " << x.coordinate << ": " << x.scheme_a << " vs "
            << x.scheme_b << "\n";
    }
  }
  rep.table = table.str();
  return rep;
}

}  // namespace mtwb
