// JSON reports and atomic file output.

#pragma once

#include "dpmpc/simbench.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpmpc {

namespace report_detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
  return m;
}

}  // namespace report_detail

struct TimingSummary {
  double median_prepare = 0.0;
  double median_feedback = 0.0;
  double median_total = 0.0;
  double max_total = 0.0;
  long cycles = 0;
};

inline TimingSummary timing_summary(const std::vector<CycleTelemetry>& telemetry) {
  std::vector<double> prep, fb, tot;
  for (const auto& t : telemetry) {
    if (!t.mpc_update) continue;
    prep.push_back(t.prepare_time);
    fb.push_back(t.feedback_time);
    tot.push_back(t.solve_time);
  }
  TimingSummary s;
  s.cycles = static_cast<long>(tot.size());
  s.median_prepare = report_detail::median(prep);
  s.median_feedback = report_detail::median(fb);
  s.median_total = report_detail::median(tot);
  s.max_total = tot.empty() ? 0.0 : *std::max_element(tot.begin(), tot.end());
  return s;
}

inline nlohmann::ordered_json episode_json(const EpisodeReport& r) {
  nlohmann::ordered_json j;
  j["duration"] = r.duration;
  j["uptime"] = r.uptime;
  j["score"] = r.score;
  j["reported_score"] = reported_score(r.score);
  j["swingup"] = r.swingup;
  j["diverged"] = r.diverged;
  j["success_hold_time"] = r.success_hold_time;
  j["longest_goal_interval"] = longest_goal_interval(r);
  j["failed_cycles"] = r.failed_cycles;
  j["fallback_cycles"] = r.fallback_cycles;
  auto intervals = nlohmann::ordered_json::array();
  for (const auto& g : r.goal_intervals) intervals.push_back({g.start, g.end});
  j["goal_intervals"] = intervals;
  const TimingSummary ts = timing_summary(r.telemetry);
  j["timing"] = {{"mpc_cycles", ts.cycles},
                 {"median_prepare_s", ts.median_prepare},
                 {"median_feedback_s", ts.median_feedback},
                 {"median_cycle_s", ts.median_total},
                 {"max_cycle_s", ts.max_total}};
  return j;
}

inline nlohmann::ordered_json robustness_json(const RobustnessReport& r) {
  nlohmann::ordered_json j;
  auto axes = nlohmann::ordered_json::array();
  for (const auto& ax : r.axes) {
    nlohmann::ordered_json a;
    a["axis"] = ax.name;
    a["score"] = ax.score;
    if (!ax.parameter_scores.empty()) {
      nlohmann::ordered_json ps;
      for (const auto& [name, score] : ax.parameter_scores) ps[name] = score;
      a["parameter_scores"] = ps;
    }
    auto runs = nlohmann::ordered_json::array();
    for (const auto& run : ax.runs)
      runs.push_back({{"axis", run.axis},
                      {"value", run.value},
                      {"success", run.success},
                      {"score", run.score}});
    a["runs"] = runs;
    axes.push_back(a);
  }
  j["axes"] = axes;
  return j;
}

/// Writes to a sibling temporary file and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

}  // namespace dpmpc
