#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgsim {

struct TrajectoryRecord {
  int vehicle_id = 0;
  double t = 0.0;  ///< [s]
  double x = 0.0;  ///< [m]
  double y = 0.0;  ///< [m]

  bool operator==(const TrajectoryRecord&) const = default;
};

enum class TrajectoryFormat { ngsim, native };

struct ParseOptions {
  bool swap_axes = false;  ///< ngsim only: take x from Local_Y and y from Local_X
};

class TrajectoryParseError : public std::runtime_error {
 public:
  TrajectoryParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline constexpr const char* kNativeTrajectoryHeader = "vehicle_id,t,x_m,y_m";
inline constexpr double kFeetToMeters = 0.3048;

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && ws(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

inline double parse_double(const std::string& cell, std::size_t line, const char* column) {
  const std::string s = trim(cell);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || !std::isfinite(v)) {
    throw TrajectoryParseError(line, std::string("bad number in column ") + column + ": '" + s + "'");
  }
  return v;
}

inline int parse_int(const std::string& cell, std::size_t line, const char* column) {
  const double v = parse_double(cell, line, column);
  if (v != std::floor(v) || std::abs(v) > std::numeric_limits<int>::max()) {
    throw TrajectoryParseError(line, std::string("column ") + column + " must be an integer");
  }
  return static_cast<int>(v);
}

}  // namespace detail

/// Reads native (`vehicle_id,t,x_m,y_m`) or NGSIM (Vehicle_ID, Frame_ID,
/// Local_X, Local_Y in feet and 0.1 s frames) trajectories. Empty input yields
/// an empty list.
inline std::vector<TrajectoryRecord> parse_trajectories(std::istream& in, TrajectoryFormat format,
                                                        const ParseOptions& options = {}) {
  std::vector<TrajectoryRecord> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t id_col = 0, t_col = 1, x_col = 2, y_col = 3, width = 4;
  bool have_header = false;
  std::map<int, double> last_t;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (!have_header) {
      have_header = true;
      if (format == TrajectoryFormat::native) {
        if (detail::trim(line) != kNativeTrajectoryHeader) {
          throw TrajectoryParseError(line_no, std::string("expected header '") + kNativeTrajectoryHeader + "'");
        }
      } else {
        auto find = [&](const char* name) {
          for (std::size_t i = 0; i < cells.size(); ++i) {
            if (detail::trim(cells[i]) == name) return i;
          }
          throw TrajectoryParseError(line_no, std::string("ngsim header lacks column ") + name);
        };
        id_col = find("Vehicle_ID");
        t_col = find("Frame_ID");
        x_col = find("Local_X");
        y_col = find("Local_Y");
        if (options.swap_axes) std::swap(x_col, y_col);
        width = cells.size();
      }
      continue;
    }
    if (cells.size() != width) {
      throw TrajectoryParseError(line_no, "expected " + std::to_string(width) + " fields, got " +
                                              std::to_string(cells.size()));
    }
    TrajectoryRecord r;
    r.vehicle_id = detail::parse_int(cells[id_col], line_no, "vehicle_id");
    if (format == TrajectoryFormat::native) {
      r.t = detail::parse_double(cells[t_col], line_no, "t");
      r.x = detail::parse_double(cells[x_col], line_no, "x_m");
      r.y = detail::parse_double(cells[y_col], line_no, "y_m");
    } else {
      r.t = detail::parse_int(cells[t_col], line_no, "Frame_ID") / 10.0;
      r.x = detail::parse_double(cells[x_col], line_no, "Local_X") * kFeetToMeters;
      r.y = detail::parse_double(cells[y_col], line_no, "Local_Y") * kFeetToMeters;
    }
    const auto it = last_t.find(r.vehicle_id);
    if (it != last_t.end() && !(r.t > it->second)) {
      throw TrajectoryParseError(line_no, "timestamps of vehicle " + std::to_string(r.vehicle_id) +
                                              " are not strictly increasing");
    }
    last_t[r.vehicle_id] = r.t;
    out.push_back(r);
  }
  return out;
}

inline std::vector<TrajectoryRecord> parse_trajectories(const std::string& path, TrajectoryFormat format,
                                                        const ParseOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file " + path);
  return parse_trajectories(in, format, options);
}

/// Native CSV with round-trip precision.
inline void write_native(std::ostream& out, const std::vector<TrajectoryRecord>& records) {
  out << kNativeTrajectoryHeader << '\n';
  char line[160];
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", r.vehicle_id, r.t, r.x, r.y);
    out << line;
  }
}

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

/// A vehicle's positions on the uniform grid t = frame * dt.
struct TrajectorySequence {
  int vehicle_id = 0;
  long first_frame = 0;
  std::vector<Point2> points;

  long last_frame() const { return first_frame + static_cast<long>(points.size()) - 1; }
  bool covers(long frame) const { return frame >= first_frame && frame <= last_frame(); }
  const Point2& at(long frame) const { return points[static_cast<std::size_t>(frame - first_frame)]; }
};

/// Linear interpolation onto the grid t = k dt inside each vehicle's observed
/// span. Vehicles with fewer than two samples are dropped. Output is ordered
/// by vehicle id.
inline std::vector<TrajectorySequence> resample(const std::vector<TrajectoryRecord>& records, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("resample: dt must be > 0");
  std::map<int, std::vector<TrajectoryRecord>> by_vehicle;
  for (const auto& r : records) by_vehicle[r.vehicle_id].push_back(r);
  std::vector<TrajectorySequence> out;
  const double eps = 1e-9;
  for (auto& [id, rs] : by_vehicle) {
    std::sort(rs.begin(), rs.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    if (rs.size() < 2) continue;
    const long k0 = static_cast<long>(std::ceil(rs.front().t / dt - eps));
    const long k1 = static_cast<long>(std::floor(rs.back().t / dt + eps));
    if (k1 < k0) continue;
    TrajectorySequence seq;
    seq.vehicle_id = id;
    seq.first_frame = k0;
    std::size_t j = 0;
    for (long k = k0; k <= k1; ++k) {
      const double t = static_cast<double>(k) * dt;
      while (j + 2 < rs.size() && rs[j + 1].t <= t + eps) ++j;
      const auto& a = rs[j];
      const auto& b = rs[j + 1];
      if (std::abs(t - a.t) <= eps) {
        seq.points.push_back({a.x, a.y});
      } else if (std::abs(t - b.t) <= eps) {
        seq.points.push_back({b.x, b.y});
      } else {
        const double w = std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0);
        seq.points.push_back({a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)});
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

struct KMeansResult {
  std::vector<int> labels;
  std::vector<Point2> centroids;
  std::vector<double> objective_history;  ///< within-cluster sum of squares after each assignment
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding; stops when the assignment is
/// unchanged or after 100 iterations. An emptied cluster keeps its centroid.
inline KMeansResult kmeans_group(const std::vector<Point2>& positions, int k, std::uint64_t seed) {
  const int n = static_cast<int>(positions.size());
  if (k < 1 || k > n) throw std::invalid_argument("kmeans_group: need 1 <= k <= vehicle count");
  std::mt19937_64 rng(seed);
  auto d2 = [](const Point2& a, const Point2& b) {
    return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y);
  };
  KMeansResult r;
  r.centroids.push_back(positions[std::uniform_int_distribution<std::size_t>(0, positions.size() - 1)(rng)]);
  std::vector<double> nearest(positions.size());
  while (static_cast<int>(r.centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      nearest[i] = 1e300;
      for (const auto& c : r.centroids) nearest[i] = std::min(nearest[i], d2(positions[i], c));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0) {
      pick = std::discrete_distribution<std::size_t>(nearest.begin(), nearest.end())(rng);
    } else {
      // Coincident points: any unused index will do.
      pick = r.centroids.size();
    }
    r.centroids.push_back(positions[pick]);
  }

  r.labels.assign(positions.size(), -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      int best = 0;
      double best_d = d2(positions[i], r.centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = d2(positions[i], r.centroids[static_cast<std::size_t>(c)]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      objective += best_d;
      if (r.labels[i] != best) {
        r.labels[i] = best;
        changed = true;
      }
    }
    r.objective_history.push_back(objective);
    r.iterations = iter + 1;
    if (!changed) break;
    std::vector<Point2> sum(static_cast<std::size_t>(k));
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto c = static_cast<std::size_t>(r.labels[i]);
      sum[c].x += positions[i].x;
      sum[c].y += positions[i].y;
      ++count[c];
    }
    for (std::size_t c = 0; c < sum.size(); ++c) {
      if (count[c] > 0) r.centroids[c] = {sum[c].x / count[c], sum[c].y / count[c]};
    }
  }
  return r;
}

/// Default cluster count for a frame with `vehicles` vehicles.
inline int default_group_count(int vehicles) { return std::max(1, (vehicles + 11) / 12); }

struct SceneWindow {
  std::vector<int> vehicle_ids;
  std::vector<std::vector<Point2>> observed;  ///< [vehicle][o_l]
  std::vector<std::vector<Point2>> future;    ///< [vehicle][p_l]
  long start_frame = 0;
  double dt = 0.1;
};

/// Stride-1 windows of o_l + p_l frames per group. Only vehicles present for
/// the whole window are kept; empty windows are dropped. Start frames may be
/// restricted to [first_start, last_start].
inline std::vector<SceneWindow> window_scenes(const std::vector<TrajectorySequence>& sequences,
                                              const std::vector<std::vector<int>>& groups, int o_l, int p_l,
                                              double dt = 0.1,
                                              long first_start = std::numeric_limits<long>::min(),
                                              long last_start = std::numeric_limits<long>::max()) {
  if (o_l < 1 || p_l < 1) throw std::invalid_argument("window_scenes: o_l and p_l must be >= 1");
  std::map<int, const TrajectorySequence*> by_id;
  for (const auto& s : sequences) by_id[s.vehicle_id] = &s;
  const long len = o_l + p_l;
  std::vector<SceneWindow> out;
  for (const auto& group : groups) {
    std::vector<const TrajectorySequence*> members;
    long lo = std::numeric_limits<long>::max(), hi = std::numeric_limits<long>::min();
    for (int id : group) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) continue;
      members.push_back(it->second);
      lo = std::min(lo, it->second->first_frame);
      hi = std::max(hi, it->second->last_frame());
    }
    lo = std::max(lo, first_start);
    for (long start = lo; start + len - 1 <= hi && start <= last_start; ++start) {
      SceneWindow w;
      w.start_frame = start;
      w.dt = dt;
      for (const auto* s : members) {
        if (!s->covers(start) || !s->covers(start + len - 1)) continue;
        w.vehicle_ids.push_back(s->vehicle_id);
        auto first = s->points.begin() + (start - s->first_frame);
        w.observed.emplace_back(first, first + o_l);
        w.future.emplace_back(first + o_l, first + len);
      }
      if (!w.vehicle_ids.empty()) out.push_back(std::move(w));
    }
  }
  return out;
}

/// Splits the timeline into segments of `segment_frames`, clusters the
/// vehicles present at each segment's first frame, and windows each group
/// with start frames inside the segment. k <= 0 selects default_group_count.
inline std::vector<SceneWindow> grouped_windows(const std::vector<TrajectorySequence>& sequences, int o_l, int p_l,
                                                double dt, std::uint64_t seed, int k = 0,
                                                long segment_frames = 100) {
  if (segment_frames < 1) throw std::invalid_argument("grouped_windows: segment_frames must be >= 1");
  if (sequences.empty()) return {};
  long lo = std::numeric_limits<long>::max(), hi = std::numeric_limits<long>::min();
  for (const auto& s : sequences) {
    lo = std::min(lo, s.first_frame);
    hi = std::max(hi, s.last_frame());
  }
  std::vector<SceneWindow> out;
  for (long f0 = lo; f0 <= hi; f0 += segment_frames) {
    std::vector<int> ids;
    std::vector<Point2> pos;
    for (const auto& s : sequences) {
      if (!s.covers(f0)) continue;
      ids.push_back(s.vehicle_id);
      pos.push_back(s.at(f0));
    }
    if (ids.empty()) continue;
    const int kk = std::min(static_cast<int>(ids.size()), k > 0 ? k : default_group_count(static_cast<int>(ids.size())));
    const KMeansResult km = kmeans_group(pos, kk, seed + static_cast<std::uint64_t>(f0 - lo));
    std::vector<std::vector<int>> groups(static_cast<std::size_t>(kk));
    for (std::size_t i = 0; i < ids.size(); ++i) groups[static_cast<std::size_t>(km.labels[i])].push_back(ids[i]);
    auto windows = window_scenes(sequences, groups, o_l, p_l, dt, f0, f0 + segment_frames - 1);
    for (auto& w : windows) out.push_back(std::move(w));
  }
  return out;
}

struct DisplacementErrors {
  double ade = 0.0;
  double fde = 0.0;
};

/// ADE over all vehicles and steps, FDE over the last step. Shapes are
/// [vehicle][step] and must agree.
inline DisplacementErrors displacement_errors(const std::vector<std::vector<Point2>>& pred,
                                              const std::vector<std::vector<Point2>>& truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw std::invalid_argument("displacement_errors: vehicle counts differ or are zero");
  }
  double sum = 0.0, final_sum = 0.0;
  std::size_t count = 0;
  for (std::size_t v = 0; v < pred.size(); ++v) {
    if (pred[v].size() != truth[v].size() || pred[v].empty()) {
      throw std::invalid_argument("displacement_errors: step counts differ or are zero");
    }
    if (pred[v].size() != pred[0].size()) throw std::invalid_argument("displacement_errors: ragged input");
    for (std::size_t s = 0; s < pred[v].size(); ++s) {
      const double e = std::hypot(pred[v][s].x - truth[v][s].x, pred[v][s].y - truth[v][s].y);
      sum += e;
      ++count;
      if (s + 1 == pred[v].size()) final_sum += e;
    }
  }
  return {sum / static_cast<double>(count), final_sum / static_cast<double>(pred.size())};
}

/// Lane changes per vehicle per km inputs: n lane-membership switches, q
/// vehicles, L observed longitudinal extent [m].
struct LaneChangeCounts {
  long n = 0;
  long q = 0;
  double L = 0.0;
};

inline LaneChangeCounts count_lane_changes(const std::vector<TrajectorySequence>& sequences, double lane_width) {
  if (!(lane_width > 0)) throw std::invalid_argument("count_lane_changes: lane_width must be > 0");
  LaneChangeCounts c;
  double lo = 1e300, hi = -1e300;
  for (const auto& s : sequences) {
    ++c.q;
    int lane = static_cast<int>(std::floor(s.points.front().y / lane_width));
    for (const auto& p : s.points) {
      lo = std::min(lo, p.x);
      hi = std::max(hi, p.x);
      const int l = static_cast<int>(std::floor(p.y / lane_width));
      if (l != lane) {
        ++c.n;
        lane = l;
      }
    }
  }
  c.L = c.q > 0 ? hi - lo : 0.0;
  return c;
}

}  // namespace tgsim
