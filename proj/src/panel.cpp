#include "incr/panel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "incr/errors.hpp"
#include "incr/rng.hpp"
#include "incr/util.hpp"

namespace incr {
namespace {

struct RowTask {
  std::size_t timeline_idx;
  double t;
  double y;
  double weight;
};

void sort_rows(std::vector<FeatureFrame>& rows) {
  std::sort(rows.begin(), rows.end(), [](const FeatureFrame& a, const FeatureFrame& b) {
    if (a.user_id != b.user_id) return a.user_id < b.user_id;
    if (a.t != b.t) return a.t < b.t;
    if (a.sample_weight != b.sample_weight) return a.sample_weight > b.sample_weight;
    return a.y > b.y;
  });
}

}  // namespace

void PanelConfig::validate() const {
  if (!(ratio_C > 0)) throw ConfigError("panel ratio_C must be positive");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
    throw ConfigError("holdout_fraction must be in [0,1)");
}

Panel build_panel(const std::vector<EventTimeline>& timelines, const FeatureSet& keys,
                  const PanelConfig& config, int threads) {
  config.validate();
  keys.validate();

  Panel panel;
  std::vector<double> cum(timelines.size() + 1, 0.0);
  for (std::size_t i = 0; i < timelines.size(); ++i)
    cum[i + 1] = cum[i] + timelines[i].window_length();
  panel.total_measure_NT = cum.back();

  std::vector<RowTask> tasks;
  for (std::size_t i = 0; i < timelines.size(); ++i)
    for (const auto& c : timelines[i].conversions) tasks.push_back({i, c.t_c, 1.0, 1.0});
  panel.n_positive = tasks.size();
  if (panel.n_positive == 0) throw DataError("no positives: panel is unidentifiable");

  // Negative times are one uniform draw over the pooled NT measure: the user
  // lands proportional to window length, the time uniform within it.
  auto n_negative =
      static_cast<std::size_t>(std::ceil(config.ratio_C * static_cast<double>(panel.n_positive)));
  panel.n_negative = n_negative;
  double w_neg = panel.total_measure_NT / static_cast<double>(n_negative);
  Rng rng = make_rng(config.rng_seed, fnv1a64("panel.negatives"));
  for (std::size_t m = 0; m < n_negative; ++m) {
    double u = uniform01(rng) * panel.total_measure_NT;
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    std::size_t idx = static_cast<std::size_t>(it - cum.begin());
    idx = idx == 0 ? 0 : idx - 1;
    if (idx >= timelines.size()) idx = timelines.size() - 1;
    double t = timelines[idx].t_start + (u - cum[idx]);
    if (t > timelines[idx].t_end) t = timelines[idx].t_end;
    tasks.push_back({idx, t, 0.0, w_neg});
  }

  panel.rows.resize(tasks.size());
  parallel_for(tasks.size(), threads, [&](std::size_t r) {
    const RowTask& task = tasks[r];
    FeatureFrame frame = evaluate_stock(timelines[task.timeline_idx], task.t, keys);
    frame.y = task.y;
    frame.sample_weight = task.weight;
    panel.rows[r] = std::move(frame);
  });

  if (config.add_double_negatives) {
    panel.n_double_negative = panel.n_positive;
    panel.rows.reserve(panel.rows.size() + panel.n_positive);
    for (std::size_t r = 0; r < panel.n_positive; ++r) {
      FeatureFrame twin = panel.rows[r];  // identical columns by construction
      twin.y = 0.0;
      twin.sample_weight = -1.0;
      panel.rows.push_back(std::move(twin));
    }
  }
  sort_rows(panel.rows);
  return panel;
}

bool in_holdout(const std::string& user_id, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0) return false;
  std::uint64_t h = splitmix64(fnv1a64(user_id) ^ splitmix64(seed ^ 0x686f6c64ULL));
  double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < fraction;
}

PanelSplit split_panel(const Panel& panel, double fraction, std::uint64_t seed) {
  PanelSplit out;
  out.train.total_measure_NT = panel.total_measure_NT;
  out.holdout.total_measure_NT = panel.total_measure_NT;
  for (const auto& row : panel.rows) {
    Panel& dst = in_holdout(row.user_id, fraction, seed) ? out.holdout : out.train;
    dst.rows.push_back(row);
    if (row.sample_weight < 0)
      ++dst.n_double_negative;
    else if (row.y > 0)
      ++dst.n_positive;
    else
      ++dst.n_negative;
  }
  return out;
}

void write_panel_csv(const Panel& panel, const FeatureSet& keys, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write panel: " + path);
  out << "user_id,t,y,weight";
  for (const auto& k : keys.keys) out << ',' << k.canonical();
  out << '\n';
  for (const auto& row : panel.rows) {
    out << row.user_id << ',' << fmt_double(row.t) << ',' << fmt_double(row.y) << ','
        << fmt_double(row.sample_weight);
    for (double v : row.columns) out << ',' << fmt_double(v);
    out << '\n';
  }
  if (!out) throw DataError("short write on panel: " + path);
}

void write_panel_meta(const Panel& panel, const FeatureSet& keys, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write panel metadata: " + path);
  out << "{\"total_measure_NT\":" << fmt_double(panel.total_measure_NT)
      << ",\"n_positive\":" << panel.n_positive << ",\"n_negative\":" << panel.n_negative
      << ",\"n_double_negative\":" << panel.n_double_negative
      << ",\"n_rows\":" << panel.rows.size() << ",\"columns\":[";
  for (std::size_t i = 0; i < keys.keys.size(); ++i) {
    if (i) out << ',';
    out << '"' << keys.keys[i].canonical() << '"';
  }
  out << "]}\n";
}

Panel read_panel_csv(const std::string& path, const FeatureSet& expected_keys) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read panel: " + path);
  std::string header;
  if (!std::getline(in, header)) throw DataError("empty panel file: " + path);

  std::string want = "user_id,t,y,weight";
  for (const auto& k : expected_keys.keys) want += ',' + k.canonical();
  if (header != want) throw DataError("panel columns do not match the configured feature keys");

  Panel panel;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    FeatureFrame row;
    std::stringstream ss(line);
    std::string field;
    if (!std::getline(ss, field, ',')) throw DataError("bad panel row at line " + std::to_string(line_no));
    row.user_id = field;
    auto next_num = [&](double& v) {
      if (!std::getline(ss, field, ','))
        throw DataError("bad panel row at line " + std::to_string(line_no));
      try {
        v = std::stod(field);
      } catch (const std::exception&) {
        throw DataError("non-numeric panel value at line " + std::to_string(line_no));
      }
    };
    next_num(row.t);
    next_num(row.y);
    next_num(row.sample_weight);
    row.columns.resize(expected_keys.size());
    for (auto& v : row.columns) next_num(v);
    if (std::getline(ss, field, ','))
      throw DataError("too many fields at line " + std::to_string(line_no));
    if (row.sample_weight < 0)
      ++panel.n_double_negative;
    else if (row.y > 0)
      ++panel.n_positive;
    else
      ++panel.n_negative;
    panel.rows.push_back(std::move(row));
  }
  // NT is reconstructible from the negative weights: sum(w-) = NT.
  double nt = 0.0;
  for (const auto& r : panel.rows)
    if (r.y == 0.0 && r.sample_weight > 0) nt += r.sample_weight;
  panel.total_measure_NT = nt;
  return panel;
}

}  // namespace incr
