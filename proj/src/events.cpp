#include "incr/events.hpp"

#include <zlib.h>

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "incr/errors.hpp"

namespace incr {
namespace {

using json = nlohmann::json;

// Raw record plus its source line, kept until the whole stream is grouped so
// window records may arrive after the events they cover.
struct RawUser {
  std::vector<std::pair<std::size_t, BidEvent>> bids;
  std::vector<std::pair<std::size_t, ConversionEvent>> conversions;
  std::vector<std::pair<std::size_t, RetargetEvent>> retargets;
  std::optional<std::pair<std::size_t, std::pair<double, double>>> window;
  std::size_t first_line = 0;
};

bool get_number(const json& j, const char* key, double& out) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) return false;
  out = it->get<double>();
  return true;
}

bool get_bool(const json& j, const char* key, bool& out) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_boolean()) return false;
  out = it->get<bool>();
  return true;
}

bool get_string(const json& j, const char* key, std::string& out) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return false;
  out = it->get<std::string>();
  return true;
}

void count_unknown(const json& j, const std::vector<std::string>& known, std::size_t& warnings) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) ++warnings;
  }
}

json bid_to_json(const BidEvent& b) {
  json j;
  j["type"] = "bid";
  j["user_id"] = b.user_id;
  j["t_j"] = b.t_j;
  j["ghost_bid_g"] = b.ghost_bid_g;
  j["submitted_B"] = b.submitted_B;
  j["submitted_bid_b"] = b.submitted_bid_b;
  j["p_win_b"] = b.p_win_b;
  j["p_win_g"] = b.p_win_g;
  j["won_A"] = b.won_A;
  if (b.won_A) {
    j["cost_c"] = b.cost_c;
    j["viewable_V"] = b.viewable_V.value_or(false);
  }
  j["p_viewable"] = b.p_viewable;
  if (!b.characteristics.empty()) {
    json c = json::object();
    for (const auto& [k, v] : b.characteristics) c[k] = v;
    j["characteristics"] = c;
  }
  return j;
}

json conversion_to_json(const ConversionEvent& c) {
  json j;
  j["type"] = "conversion";
  j["user_id"] = c.user_id;
  j["t_c"] = c.t_c;
  j["value_v"] = c.value_v;
  j["margin_m"] = c.margin_m;
  return j;
}

json retarget_to_json(const RetargetEvent& r) {
  json j;
  j["type"] = "retarget";
  j["user_id"] = r.user_id;
  j["t_r"] = r.t_r;
  j["event_kind"] = r.event_kind;
  return j;
}

json window_to_json(const EventTimeline& t) {
  json j;
  j["type"] = "window";
  j["user_id"] = t.user_id;
  j["t_start"] = t.t_start;
  j["t_end"] = t.t_end;
  return j;
}

// Content tiebreak makes ordering invariant to input permutation even when
// two events share a timestamp.
template <typename E, typename Proj, typename Dump>
void sort_events(std::vector<E>& events, Proj time_of, Dump dump) {
  std::stable_sort(events.begin(), events.end(), [&](const E& a, const E& b) {
    double ta = time_of(a), tb = time_of(b);
    if (ta != tb) return ta < tb;
    return dump(a).dump() < dump(b).dump();
  });
}

}  // namespace

IngestResult ingest(std::istream& in) {
  IngestResult result;
  std::map<std::string, RawUser> users;

  static const std::vector<std::string> kBidFields = {
      "type",    "user_id",        "t_j",     "ghost_bid_g", "submitted_B",
      "submitted_bid_b", "p_win_b", "p_win_g", "won_A",       "cost_c",
      "viewable_V", "p_viewable",  "characteristics"};
  static const std::vector<std::string> kConvFields = {"type", "user_id", "t_c", "value_v",
                                                       "margin_m"};
  static const std::vector<std::string> kRetargetFields = {"type", "user_id", "t_r", "event_kind"};
  static const std::vector<std::string> kWindowFields = {"type", "user_id", "t_start", "t_end"};

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++result.n_lines;

    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      result.errors.push_back({line_no, "malformed JSON record"});
      continue;
    }
    std::string type, user_id;
    if (!get_string(j, "type", type)) {
      result.errors.push_back({line_no, "missing or non-string 'type'"});
      continue;
    }
    if (!get_string(j, "user_id", user_id) || user_id.empty()) {
      result.errors.push_back({line_no, "missing or empty 'user_id'"});
      continue;
    }
    RawUser& u = users[user_id];
    if (u.first_line == 0) u.first_line = line_no;

    if (type == "bid") {
      count_unknown(j, kBidFields, result.unknown_field_warnings);
      BidEvent b;
      b.user_id = user_id;
      bool ok = get_number(j, "t_j", b.t_j) && get_number(j, "ghost_bid_g", b.ghost_bid_g) &&
                get_bool(j, "submitted_B", b.submitted_B) &&
                get_number(j, "submitted_bid_b", b.submitted_bid_b) &&
                get_number(j, "p_win_b", b.p_win_b) && get_number(j, "p_win_g", b.p_win_g) &&
                get_bool(j, "won_A", b.won_A);
      if (!ok) {
        result.errors.push_back({line_no, "bid record missing required field"});
        continue;
      }
      get_number(j, "p_viewable", b.p_viewable);
      if (b.won_A && !b.submitted_B) {
        result.errors.push_back({line_no, "won_A without submitted_B"});
        continue;
      }
      double cost = 0.0;
      bool has_cost = get_number(j, "cost_c", cost);
      if (b.won_A && !has_cost) {
        result.errors.push_back({line_no, "won_A without cost_c"});
        continue;
      }
      if (!b.won_A && has_cost) {
        result.errors.push_back({line_no, "cost_c on a lost or unsubmitted bid"});
        continue;
      }
      b.cost_c = b.won_A ? cost : 0.0;
      bool viewable = false;
      bool has_viewable = get_bool(j, "viewable_V", viewable);
      if (b.won_A && !has_viewable) {
        result.errors.push_back({line_no, "won_A without viewable_V"});
        continue;
      }
      if (!b.won_A && has_viewable) {
        result.errors.push_back({line_no, "viewable_V on a lost or unsubmitted bid"});
        continue;
      }
      if (has_viewable) b.viewable_V = viewable;
      if (b.ghost_bid_g < 0 || b.submitted_bid_b < 0 || b.cost_c < 0) {
        result.errors.push_back({line_no, "negative bid or cost"});
        continue;
      }
      if (b.p_win_b < 0 || b.p_win_b > 1 || b.p_win_g < 0 || b.p_win_g > 1 ||
          b.p_viewable < 0 || b.p_viewable > 1) {
        result.errors.push_back({line_no, "probability outside [0,1]"});
        continue;
      }
      auto cit = j.find("characteristics");
      if (cit != j.end()) {
        if (!cit->is_object()) {
          result.errors.push_back({line_no, "characteristics must be an object"});
          continue;
        }
        bool bad = false;
        for (auto it = cit->begin(); it != cit->end(); ++it) {
          if (!it->is_number()) {
            bad = true;
            break;
          }
          b.characteristics[it.key()] = it->get<double>();
        }
        if (bad) {
          result.errors.push_back({line_no, "non-numeric characteristic weight"});
          continue;
        }
      }
      u.bids.emplace_back(line_no, std::move(b));
    } else if (type == "conversion") {
      count_unknown(j, kConvFields, result.unknown_field_warnings);
      ConversionEvent c;
      c.user_id = user_id;
      if (!get_number(j, "t_c", c.t_c) || !get_number(j, "value_v", c.value_v) ||
          !get_number(j, "margin_m", c.margin_m)) {
        result.errors.push_back({line_no, "conversion record missing required field"});
        continue;
      }
      if (c.value_v < 0) {
        result.errors.push_back({line_no, "negative conversion value"});
        continue;
      }
      if (c.margin_m < 0 || c.margin_m > 1) {
        result.errors.push_back({line_no, "margin outside [0,1]"});
        continue;
      }
      u.conversions.emplace_back(line_no, std::move(c));
    } else if (type == "retarget") {
      count_unknown(j, kRetargetFields, result.unknown_field_warnings);
      RetargetEvent r;
      r.user_id = user_id;
      if (!get_number(j, "t_r", r.t_r)) {
        result.errors.push_back({line_no, "retarget record missing t_r"});
        continue;
      }
      get_string(j, "event_kind", r.event_kind);
      u.retargets.emplace_back(line_no, std::move(r));
    } else if (type == "window") {
      count_unknown(j, kWindowFields, result.unknown_field_warnings);
      double t_start = 0, t_end = 0;
      if (!get_number(j, "t_start", t_start) || !get_number(j, "t_end", t_end)) {
        result.errors.push_back({line_no, "window record missing bounds"});
        continue;
      }
      if (u.window) {
        result.errors.push_back({line_no, "duplicate window record for user " + user_id});
        continue;
      }
      if (!(t_end > t_start)) {
        result.errors.push_back({line_no, "window length must be positive"});
        continue;
      }
      u.window = {line_no, {t_start, t_end}};
    } else {
      result.errors.push_back({line_no, "unknown record type '" + type + "'"});
    }
  }

  // Second pass: window coverage checks, then assembly.
  for (auto& [user_id, u] : users) {
    if (!u.window) {
      bool has_events = !u.bids.empty() || !u.conversions.empty() || !u.retargets.empty();
      if (has_events)
        result.errors.push_back(
            {u.first_line, "user " + user_id + " has events but no window record"});
      continue;
    }
    auto [t_start, t_end] = u.window->second;
    bool in_window = true;
    auto check = [&](std::size_t ln, double t, const char* what) {
      if (t < t_start || t > t_end) {
        result.errors.push_back({ln, std::string(what) + " outside user window"});
        in_window = false;
      }
    };
    for (const auto& [ln, b] : u.bids) check(ln, b.t_j, "bid");
    for (const auto& [ln, c] : u.conversions) check(ln, c.t_c, "conversion");
    for (const auto& [ln, r] : u.retargets) check(ln, r.t_r, "retarget event");
    if (!in_window) continue;

    EventTimeline t;
    t.user_id = user_id;
    t.t_start = t_start;
    t.t_end = t_end;
    t.bids.reserve(u.bids.size());
    for (auto& [ln, b] : u.bids) t.bids.push_back(std::move(b));
    for (auto& [ln, c] : u.conversions) t.conversions.push_back(std::move(c));
    for (auto& [ln, r] : u.retargets) t.retargets.push_back(std::move(r));
    sort_events(t.bids, [](const BidEvent& b) { return b.t_j; }, bid_to_json);
    sort_events(t.conversions, [](const ConversionEvent& c) { return c.t_c; }, conversion_to_json);
    sort_events(t.retargets, [](const RetargetEvent& r) { return r.t_r; }, retarget_to_json);
    result.timelines.push_back(std::move(t));
  }
  // std::map iteration already yields user_id order; keep it explicit anyway.
  std::sort(result.timelines.begin(), result.timelines.end(),
            [](const EventTimeline& a, const EventTimeline& b) { return a.user_id < b.user_id; });
  return result;
}

IngestResult ingest_file(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open event log: " + path);
  std::string content;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) content.append(buf, static_cast<std::size_t>(n));
  bool bad = n < 0;
  gzclose(f);
  if (bad) throw DataError("gzip read error in event log: " + path);
  std::istringstream in(content);
  return ingest(in);
}

void serialize(const std::vector<EventTimeline>& timelines, std::ostream& out) {
  for (const auto& t : timelines) {
    out << window_to_json(t).dump() << '\n';
    for (const auto& b : t.bids) out << bid_to_json(b).dump() << '\n';
    for (const auto& c : t.conversions) out << conversion_to_json(c).dump() << '\n';
    for (const auto& r : t.retargets) out << retarget_to_json(r).dump() << '\n';
  }
}

std::string serialize_to_string(const std::vector<EventTimeline>& timelines) {
  std::ostringstream out;
  serialize(timelines, out);
  return out.str();
}

}  // namespace incr
