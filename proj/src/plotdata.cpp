// SPDX-License-Identifier: Apache-2.0

#include "backflow/plotdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "backflow/stats.hpp"

namespace backflow {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

const char* const kMetrics[] = {"tv", "js", "hellinger"};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing input: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("cannot parse " + path.string() + ": " + e.what());
  }
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing input: " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.value("type", "") != "header") out.push_back(std::move(j));
  }
  return out;
}

std::vector<json> read_records(const fs::path& run_dir) {
  const fs::path dir = run_dir / "records";
  if (!fs::is_directory(dir)) throw std::runtime_error("missing input: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  if (files.empty()) throw std::runtime_error("missing input: no JSONL files in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<json> out;
  for (const auto& f : files) {
    auto recs = read_jsonl(f);
    std::move(recs.begin(), recs.end(), std::back_inserter(out));
  }
  return out;
}

std::string num(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::string num(const json& v) { return v.is_number() ? num(v.get<double>()) : "nan"; }

std::string brief(const json& v) {
  if (!v.is_number() || !std::isfinite(v.get<double>())) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v.get<double>());
  return buf;
}

std::string flag(bool b) { return b ? "break" : "no"; }

class CsvFile {
 public:
  CsvFile(fs::path path, const std::string& header) : path_(std::move(path)), out_(path_) {
    if (!out_) throw std::runtime_error("cannot write " + path_.string());
    out_ << header << '\n';
  }
  template <class... T>
  void row(const T&... cells) {
    std::size_t i = 0;
    ((out_ << (i++ ? "," : "") << cells), ...);
    out_ << '\n';
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  std::ofstream out_;
};

struct Histogram {
  double lo = 0.0, hi = 0.0;
  std::vector<std::size_t> counts;
};

Histogram histogram(std::span<const double> x, std::size_t bins, double lo, double hi) {
  Histogram h{lo, hi, std::vector<std::size_t>(bins, 0)};
  if (hi <= lo) hi = lo + 1e-12, h.hi = hi;
  for (double v : x) {
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    h.counts[std::min(b, bins - 1)] += 1;
  }
  return h;
}

void write_histogram(CsvFile& csv, const std::string& prefix, const Histogram& h) {
  const double width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    csv.row(prefix, num(h.lo + width * b), num(h.lo + width * (b + 1)), h.counts[b]);
  }
}

std::string cell_tag(const json& j) {
  return j.at("regime").get<std::string>() + "|" + flag(j.at("break_applied").get<bool>()) + "|" +
         j.at("seed").dump();
}

double seed_mean(const json& cell, const char* metric = "tv") {
  const json& m = cell.at("metrics").at(metric).at("mean");
  return m.is_number() ? m.get<double>() : NAN;
}

void write_correlation(CsvFile& csv, const std::string& name, const std::vector<double>& x,
                       const std::vector<double>& y) {
  if (x.size() < 3) {
    csv.row(name, x.size(), "nan", "nan", "nan", "nan");
    return;
  }
  Correlations c;
  try {
    c = correlations(x, y);
  } catch (const StatsError&) {
    csv.row(name, x.size(), "nan", "nan", "nan", "nan");
    return;
  }
  csv.row(name, x.size(), num(c.pearson_r), num(c.pearson_p), num(c.spearman_rho),
          num(c.spearman_p));
}

}  // namespace

SignFlipCount count_sign_flips(const std::string& summary_json_text) {
  const json summary = json::parse(summary_json_text);
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> pairs;
  std::map<std::pair<std::string, std::string>, int> seen;
  for (const auto& cell : summary.at("seed_cells")) {
    const auto key = std::make_pair(cell.at("regime").get<std::string>(), cell.at("seed").dump());
    auto& [no, br] = pairs[key];
    (cell.at("break_applied").get<bool>() ? br : no) = seed_mean(cell);
    seen[key] |= cell.at("break_applied").get<bool>() ? 2 : 1;
  }
  SignFlipCount out;
  for (const auto& [key, means] : pairs) {
    if (seen[key] != 3) continue;
    ++out.cells;
    if (means.first * means.second < 0.0) ++out.flips;
  }
  return out;
}

std::vector<fs::path> write_plot_data(const fs::path& run_dir) {
  const fs::path summary_path = run_dir / "summary.json";
  const json summary = read_json_file(summary_path);
  const std::vector<json> records = read_records(run_dir);
  const fs::path diag_path = run_dir / "diagnostics.jsonl";
  const std::vector<json> diagnostics =
      fs::exists(diag_path) ? read_jsonl(diag_path) : std::vector<json>{};

  const fs::path out_dir = run_dir / "plots";
  fs::create_directories(out_dir);
  std::vector<fs::path> written;

  {  // Delta histograms per (regime, break flag, metric), 30 bins each.
    CsvFile csv(out_dir / "delta_hist.csv", "regime,break,metric,bin_low,bin_high,count");
    std::map<std::string, std::vector<double>> groups;
    for (const auto& r : records) {
      if (!r.at("error").is_null()) continue;
      for (const char* m : kMetrics) {
        groups[r.at("regime").get<std::string>() + "," + flag(r.at("break_applied").get<bool>()) +
               "," + m]
            .push_back(r.at("delta").at(m).get<double>());
      }
    }
    for (const auto& [key, x] : groups) {
      const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
      write_histogram(csv, key, histogram(x, 30, *lo, *hi));
    }
    written.push_back(csv.path());
  }

  const SignFlipCount flips = count_sign_flips(summary.dump());
  {  // One row per (regime, seed) with both conditions present.
    CsvFile csv(out_dir / "break_scatter.csv",
                "regime,seed,nobreak_mean_tv,break_mean_tv,sign_flip");
    std::map<std::pair<std::string, std::string>, std::map<bool, double>> cells;
    for (const auto& cell : summary.at("seed_cells")) {
      cells[{cell.at("regime").get<std::string>(), cell.at("seed").dump()}]
           [cell.at("break_applied").get<bool>()] = seed_mean(cell);
    }
    for (const auto& [key, m] : cells) {
      if (m.size() != 2) continue;
      const double no = m.at(false), br = m.at(true);
      csv.row(key.first, key.second, num(no), num(br), no * br < 0.0 ? 1 : 0);
    }
    written.push_back(csv.path());
    CsvFile count(out_dir / "sign_flips.csv", "cells,flips,fraction");
    count.row(flips.cells, flips.flips,
              num(flips.cells ? static_cast<double>(flips.flips) / flips.cells : 0.0));
    written.push_back(count.path());
  }

  {
    CsvFile csv(out_dir / "regime_means.csv",
                "regime,break,n,tv_mean,tv_ci_low,tv_ci_high,js_mean,js_ci_low,js_ci_high,"
                "hellinger_mean,hellinger_ci_low,hellinger_ci_high");
    for (const auto& cell : summary.at("cells")) {
      const json& m = cell.at("metrics");
      auto f = [&](const char* metric, const char* field) { return num(m.at(metric).at(field)); };
      csv.row(cell.at("regime").get<std::string>(), flag(cell.at("break_applied").get<bool>()),
              cell.at("n").get<std::size_t>(), f("tv", "mean"), f("tv", "ci_low"),
              f("tv", "ci_high"), f("js", "mean"), f("js", "ci_low"), f("js", "ci_high"),
              f("hellinger", "mean"), f("hellinger", "ci_low"), f("hellinger", "ci_high"));
    }
    written.push_back(csv.path());
  }

  std::map<std::string, double> cell_means;
  for (const auto& cell : summary.at("seed_cells")) cell_means[cell_tag(cell)] = seed_mean(cell);

  if (!diagnostics.empty()) {
    CsvFile curve(out_dir / "noncommute.csv", "regime,break,seed,k,tv");
    CsvFile slope(out_dir / "delta_vs_slope.csv", "regime,break,seed,noncommute_slope,mean_delta_tv");
    CsvFile cka(out_dir / "cka.csv", "regime,break,seed,cka_a_vs_aprime,cka_ab_vs_aprimeb");
    CsvFile traj(out_dir / "trajectory.csv", "regime,break,seed,point,pc1,pc2");
    std::vector<double> sx, sy;
    for (const auto& d : diagnostics) {
      const std::string regime = d.at("regime").get<std::string>();
      const std::string br = flag(d.at("break_applied").get<bool>());
      const std::string seed = d.at("seed").dump();
      if (d.contains("noncommute") && d.at("noncommute").is_array()) {
        for (const auto& p : d.at("noncommute")) {
          curve.row(regime, br, seed, p.at("k").get<int>(), num(p.at("tv")));
        }
        const auto it = cell_means.find(cell_tag(d));
        if (it != cell_means.end()) {
          const double s = d.at("noncommute_slope").get<double>();
          slope.row(regime, br, seed, num(s), num(it->second));
          sx.push_back(s);
          sy.push_back(it->second);
        }
      }
      if (d.contains("cka")) {
        cka.row(regime, br, seed, num(d.at("cka").at("a_vs_aprime")),
                num(d.at("cka").at("ab_vs_aprimeb")));
      }
      if (d.contains("trajectory")) {
        for (const auto& p : d.at("trajectory").at("points")) {
          traj.row(regime, br, seed, p.at("label").get<std::string>(), num(p.at("pc1")),
                   num(p.at("pc2")));
        }
      }
    }
    for (auto* c : {&curve, &slope, &cka, &traj}) written.push_back(c->path());

    std::vector<double> ax, ay;
    CsvFile align(out_dir / "delta_vs_alignment.csv", "regime,seed,repeat_id,alignment,delta_tv");
    for (const auto& r : records) {
      if (!r.at("error").is_null() || r.at("momentum_alignment").is_null()) continue;
      align.row(r.at("regime").get<std::string>(), r.at("seed").dump(), r.at("repeat_id").dump(),
                num(r.at("momentum_alignment")), num(r.at("delta").at("tv")));
      ax.push_back(r.at("momentum_alignment").get<double>());
      ay.push_back(r.at("delta").at("tv").get<double>());
    }
    written.push_back(align.path());

    CsvFile corr(out_dir / "correlations.csv",
                 "analysis,n,pearson_r,pearson_p,spearman_rho,spearman_p");
    write_correlation(corr, "delta_vs_slope", sx, sy);
    write_correlation(corr, "delta_vs_alignment", ax, ay);
    written.push_back(corr.path());

    CsvFile hist(out_dir / "alignment_hist.csv", "regime,bin_low,bin_high,count");
    std::map<std::string, std::vector<double>> by_regime;
    for (const auto& r : records) {
      if (r.at("error").is_null() && !r.at("momentum_alignment").is_null()) {
        by_regime[r.at("regime").get<std::string>()].push_back(
            r.at("momentum_alignment").get<double>());
      }
    }
    for (const auto& [regime, x] : by_regime) write_histogram(hist, regime, histogram(x, 20, -1.0, 1.0));
    written.push_back(hist.path());
  }

  {
    CsvFile csv(out_dir / "dose_response.csv", "regime,seed,k,momentum,overlap,a_mu,mean_delta_tv");
    for (const auto& cell : summary.at("seed_cells")) {
      if (cell.at("break_applied").get<bool>() || cell.at("aug_b") != "weak") continue;
      csv.row(cell.at("regime").get<std::string>(), cell.at("seed").dump(),
              cell.at("k").get<int>(), num(cell.at("momentum")), num(cell.at("overlap")),
              num(cell.at("a_mu")), num(seed_mean(cell)));
    }
    written.push_back(csv.path());
  }
  return written;
}

std::string render_report(const fs::path& run_dir) {
  const json summary = read_json_file(run_dir / "summary.json");
  std::ostringstream md;
  md << "# Back-flow run summary\n\n";
  md << "| regime | condition | n | mean Δ_TV | 95% CI | TOST (ε=" << summary.at("cells").at(0)
            .at("metrics").at("tv").at("tost").at("epsilon").get<double>()
     << ") | q (two-sided) | mean Δ_JS | mean Δ_H | alignment |\n";
  md << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& cell : summary.at("cells")) {
    const json& tv = cell.at("metrics").at("tv");
    md << "| " << cell.at("regime").get<std::string>() << " | "
       << (cell.at("break_applied").get<bool>() ? "break" : "no break") << " | "
       << cell.at("n").get<std::size_t>() << " | " << brief(tv.at("mean")) << " | ["
       << brief(tv.at("ci_low")) << ", " << brief(tv.at("ci_high")) << "] | "
       << tv.at("tost").at("verdict").get<std::string>() << " | " << brief(tv.at("q_two_sided"))
       << " | " << brief(cell.at("metrics").at("js").at("mean")) << " | "
       << brief(cell.at("metrics").at("hellinger").at("mean")) << " | "
       << (cell.at("mean_alignment").is_null() ? "" : brief(cell.at("mean_alignment"))) << " |\n";
  }
  const SignFlipCount flips = count_sign_flips(summary.dump());
  md << "\nSign flips (no break vs break, per regime and seed): " << flips.flips << " of "
     << flips.cells << "\n";
  const json& dose = summary.at("dose_response");
  if (dose.contains("paired") && !dose.at("paired").is_null()) {
    const json& p = dose.at("paired");
    md << "\nDose response, resonant_strong minus resonant_mid: mean lift "
       << brief(p.at("mean_lift")) << " over " << p.at("pairs").get<std::size_t>() << " pairs ("
       << p.at("increases").get<std::size_t>() << " increases), paired t p = "
       << brief(p.at("p_value")) << "\n";
  }
  if (summary.value("persistent_failures", 0) > 0) {
    md << "\nPersistent NaN-guard failures: " << summary.at("persistent_failures").get<int>()
       << "\n";
  }
  return md.str();
}

}  // namespace backflow
