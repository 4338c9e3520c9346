#pragma once
#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace incr {

// One logged bid intent (G_j is true by construction: the log records intents).
struct BidEvent {
  std::string user_id;
  double t_j = 0.0;
  double ghost_bid_g = 0.0;
  bool submitted_B = false;
  double submitted_bid_b = 0.0;
  double p_win_b = 0.0;
  double p_win_g = 0.0;
  bool won_A = false;
  double cost_c = 0.0;               // defined only when won_A
  std::optional<bool> viewable_V;    // known only ex post when won
  double p_viewable = 1.0;
  std::map<std::string, double> characteristics;  // w_ijk
};

struct ConversionEvent {
  std::string user_id;
  double t_c = 0.0;
  double value_v = 0.0;
  double margin_m = 0.0;
};

struct RetargetEvent {
  std::string user_id;
  double t_r = 0.0;
  std::string event_kind;
};

struct EventTimeline {
  std::string user_id;
  double t_start = 0.0;
  double t_end = 0.0;
  std::vector<BidEvent> bids;
  std::vector<ConversionEvent> conversions;
  std::vector<RetargetEvent> retargets;

  double window_length() const { return t_end - t_start; }
};

struct IngestIssue {
  std::size_t line_no = 0;
  std::string reason;
};

struct IngestResult {
  std::vector<EventTimeline> timelines;  // sorted by user_id, events sorted by time
  std::vector<IngestIssue> errors;
  std::size_t unknown_field_warnings = 0;
  std::size_t n_lines = 0;

  bool ok() const { return errors.empty(); }
};

IngestResult ingest(std::istream& in);
IngestResult ingest_file(const std::string& path);  // transparent gzip via zlib

void serialize(const std::vector<EventTimeline>& timelines, std::ostream& out);
std::string serialize_to_string(const std::vector<EventTimeline>& timelines);

}  // namespace incr
